import numpy as np
import pytest

_CRITERIA: dict[str, tuple[bool, str]] = {}


class CriterionRecorder:
    def __init__(self, name: str):
        self.name = name

    def __call__(self, ok: bool, detail: str = "") -> bool:
        _CRITERIA[self.name] = (bool(ok), detail)
        return ok


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion (named by the test's ``criterion`` mark)."""
    mark = request.node.get_closest_marker("criterion")
    name = mark.args[0] if mark else request.node.name
    _CRITERIA.setdefault(name, (False, "did not complete"))
    return CriterionRecorder(name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: (len(s.split()[0]), s)):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """The 5000-image MNIST subset bundled with mlxtend, written out as IDX files."""
    data = pytest.importorskip("mlxtend.data")
    from snnoc.app.mnist import save_idx

    X, y = data.mnist_data()
    d = tmp_path_factory.mktemp("mnist")
    imgs, labs = d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte"
    save_idx(X.reshape(-1, 28, 28).astype(np.uint8), y.astype(np.uint8), imgs, labs)
    return imgs, labs
