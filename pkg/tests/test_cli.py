import json
import subprocess
import sys
from pathlib import Path


from snnoc.app.cli import cli_main
from snnoc.sim import STATS_HEADER

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_validate_ok(capsys):
    assert cli_main(["validate", str(CONFIGS / "minimal.yaml")]) == 0
    assert "ok" in capsys.readouterr().out


def test_usage_errors():
    assert cli_main([]) == 2
    assert cli_main(["pressure", "--rate", "1.5"]) == 2
    assert cli_main(["sweep", "--param", "width", "--values", "1"]) == 2
    assert cli_main(["run"]) == 2
    assert cli_main(["--help"]) == 0


def test_parse_error(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("mesh: {w: [\n")
    assert cli_main(["validate", str(p)]) == 3


def test_schema_error(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("mesh: {w: 1, h: 1}\nnodes: []\nneurons: []\nbogus: 1\n")
    assert cli_main(["validate", str(p)]) == 4


def test_invariant_error(tmp_path, capsys):
    text = (CONFIGS / "minimal.yaml").read_text().replace("slot: 0", "slot: 0\n    destinations: [{x: 3, y: 0, axon: 0}]")
    p = tmp_path / "x.yaml"
    p.write_text(text)
    assert cli_main(["validate", str(p)]) == 5
    assert "x.yaml" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert cli_main(["run", str(tmp_path / "nope.yaml")]) == 6
    assert cli_main(["train-mnist", "--images", str(tmp_path / "a"), "--labels", str(tmp_path / "b"),
                     "--out-dir", str(tmp_path / "o")]) == 6


def test_dataset_error(tmp_path):
    (tmp_path / "a").write_bytes(b"\x00\x00\x08\x01" + b"\x00" * 12)
    (tmp_path / "b").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
    assert cli_main(["train-mnist", "--images", str(tmp_path / "a"), "--labels", str(tmp_path / "b"),
                     "--out-dir", str(tmp_path / "o")]) == 7


def test_run_writes_stats_and_json(tmp_path, capsys):
    stats, js = tmp_path / "s.csv", tmp_path / "s.json"
    assert cli_main(["run", str(CONFIGS / "multicast.yaml"), "--necs", "20", "--stats", str(stats),
                     "--json", str(js)]) == 0
    out = capsys.readouterr().out
    assert out == stats.read_text()
    assert out.splitlines()[0].split(",") == STATS_HEADER
    assert json.loads(js.read_text())["stats"]["necs"] == 20


def test_run_trace(tmp_path):
    tr = tmp_path / "t.txt"
    assert cli_main(["run", str(CONFIGS / "multicast.yaml"), "--necs", "5", "--trace", str(tr)]) == 0
    lines = tr.read_text().splitlines()
    assert lines and all(len(line.split()) == 6 for line in lines)


def test_pressure_output(capsys):
    assert cli_main(["pressure", "--rate", "0.2", "--necs", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert abs(float(row["firing_rate"]) - 0.2) < 0.05


def test_sweep_csv(tmp_path):
    out = tmp_path / "sw.csv"
    assert cli_main(["sweep", "--param", "M", "--values", "32,64,128,256", "--necs", "1", "--out", str(out)]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()]
    assert rows[0][:3] == ["param", "value", "nec_cycles"]
    assert [r[2] for r in rows[1:]] == ["8580", "16900", "33540", "66820"]


def test_train_mnist_artifacts(mnist_idx, tmp_path):
    imgs, labs = mnist_idx
    out = tmp_path / "o"
    assert cli_main(["train-mnist", "--images", str(imgs), "--labels", str(labs), "--out-dir", str(out),
                     "--samples", "4", "--necs", "10"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"weight_histogram.csv", "raster.csv", "firing_rate.csv", "weights_n0.pgm"} <= names
    assert (out / "weights_n0.pgm").read_bytes().startswith(b"P5\n14 14\n255\n")


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "snnoc.app.cli", "validate", str(CONFIGS / "minimal.yaml")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
