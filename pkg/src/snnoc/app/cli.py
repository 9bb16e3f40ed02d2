"""``snnoc`` command line.

Exit codes: 0 ok, 2 usage, 3 parse error, 4 schema violation,
5 invariant violation, 6 missing file, 7 dataset error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..core import ConfigError
from ..sim import Simulation, pressure_config, stats_csv, summary_json, sweep, sweep_csv
from .config import InvariantViolation, NetworkError, load_network

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CODES = {"parse": 3, "schema": 4, "invariant": 5}
EXIT_MISSING = 6
EXIT_DATASET = 7


def _probability(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} must be >= 1")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return vals


def _digits(text: str) -> list[int]:
    vals = _int_list(text)
    if any(not 0 <= d <= 9 for d in vals):
        raise argparse.ArgumentTypeError("digits must lie in 0..9")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snnoc", description="Cycle-level NoC spiking network simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network description")
    p.add_argument("config", type=Path)

    p = sub.add_parser("run", help="simulate a network description")
    p.add_argument("config", type=Path)
    p.add_argument("--necs", type=_positive, help="override run.necs")
    p.add_argument("--trace", type=Path, help="per-cycle flit trace (uses the reference engine)")
    p.add_argument("--stats", type=Path, help="write the stats row as CSV")
    p.add_argument("--json", type=Path, help="write a JSON summary")
    p.add_argument("--engine", choices=["fast", "reference"])

    p = sub.add_parser("pressure", help="forced-rate random connectivity NoC load test")
    p.add_argument("--rate", type=_probability, required=True)
    p.add_argument("--necs", type=_positive, default=1000)
    p.add_argument("--depth", type=_positive, default=16)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--fanout", type=_positive, default=1)
    p.add_argument("--stats", type=Path)
    p.add_argument("--json", type=Path)

    p = sub.add_parser("sweep", help="design-space sweep over M or FIFO depth")
    p.add_argument("--param", choices=["M", "depth"], required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.add_argument("--rate", type=_probability, default=0.1)
    p.add_argument("--necs", type=_positive, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("train-mnist", help="unsupervised WTA training on MNIST digits")
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--digits", type=_digits, default=[0, 1])
    p.add_argument("--samples", type=_positive, default=100)
    p.add_argument("--necs", type=_positive, default=100, help="NECs per sample")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--no-reset", action="store_true", help="keep membrane potentials across samples")
    return ap


def _err(msg: str) -> None:
    print(f"snnoc: {msg}", file=sys.stderr)


def _require(*paths: Path) -> None:
    for path in paths:
        if not path.is_file():
            raise FileNotFoundError(str(path))


def _cmd_validate(a) -> int:
    _require(a.config)
    cfg = load_network(a.config)
    n = sum(len(c.neurons) for c in cfg.cores)
    print(f"{a.config}: ok ({cfg.mesh_w}x{cfg.mesh_h} mesh, {len(cfg.cores)} cores, {n} neurons)")
    return EXIT_OK


def _cmd_run(a) -> int:
    _require(a.config)
    cfg = load_network(a.config)
    if a.necs is not None:
        cfg.total_necs = a.necs
    if a.engine is not None:
        cfg.engine = a.engine
    if a.trace is not None:
        with open(a.trace, "w") as tf:
            st = Simulation(cfg, trace=tf).run()
    else:
        st = Simulation(cfg).run()
    _emit(cfg, st, a.stats, a.json)
    return EXIT_OK


def _emit(cfg, st, stats_path, json_path) -> None:
    text = stats_csv([st])
    if stats_path is not None:
        stats_path.write_text(text)
    if json_path is not None:
        json_path.write_text(summary_json(cfg, st))
    sys.stdout.write(text)


def _cmd_pressure(a) -> int:
    cfg = pressure_config(a.rate, necs=a.necs, depth=a.depth, seed=a.seed, fanout=a.fanout)
    st = Simulation(cfg).run()
    _emit(cfg, st, a.stats, a.json)
    return EXIT_OK


def _cmd_sweep(a) -> int:
    rows = sweep(a.param, a.values, rate=a.rate, necs=a.necs, seed=a.seed)
    text = sweep_csv(rows)
    if a.out is not None:
        a.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_train(a) -> int:
    from .mnist import WtaParams, load_mnist, train_mnist

    _require(a.images, a.labels)
    mset = load_mnist(a.images, a.labels)
    res = train_mnist(WtaParams(seed=a.seed), mset, digits=a.digits, samples=a.samples,
                      necs_per_sample=a.necs, reset_between=not a.no_reset, out_dir=a.out_dir)
    w = res.weights_after
    print(f"trained {len(res.sample_indices)} samples; weights in [{w.min():.4f}, {w.max():.4f}]; "
          f"average firing probability {res.avg_firing_probability:.4f}; artifacts in {a.out_dir}")
    return EXIT_OK


COMMANDS = {"validate": _cmd_validate, "run": _cmd_run, "pressure": _cmd_pressure,
            "sweep": _cmd_sweep, "train-mnist": _cmd_train}


def cli_main(argv=None) -> int:
    from .mnist import MnistError

    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[a.command](a)
    except FileNotFoundError as e:
        _err(f"no such file: {e.filename or e.args[0]}")
        return EXIT_MISSING
    except MnistError as e:
        _err(f"dataset: {e}")
        return EXIT_DATASET
    except NetworkError as e:
        for prob in e.problems:
            _err(f"{e.category}: {prob}")
        return EXIT_CODES[e.category]
    except ConfigError as e:
        _err(f"invariant: {e}")
        return EXIT_CODES[InvariantViolation.category]


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
