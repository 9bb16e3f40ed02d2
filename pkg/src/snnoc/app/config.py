"""Network description files: YAML documents checked against a JSON Schema, then against network invariants.

Values (thresholds, weights, learning rates) are written in real units and
rounded to the raw fixed-point grid on load.
"""

from __future__ import annotations

import copy
import hashlib
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from ..core import AerEntry, ConfigError, CoreConfig, validate_table
from ..neuron import Mode, NeuronConfig
from ..noc.packet import EXT_CONTINUE
from ..numerics import FX16_MAX, FX16_MIN, Prng, prng_uniform, to_raw
from ..sim import InjectionSchedule, SimConfig

DEFAULTS = {
    "learning": False,
    "threshold": 1.0,
    "threshold_lo": 0.0,
    "threshold_hi": 1.0,
    "eta_ltp_log": 1.0,
    "eta_ltd_log": 1.0,
    "tau_ltp": 4,
    "tau_ltd": 4,
    "bias": 0.0,
}


class NetworkError(Exception):
    """Base class; ``problems`` lists every issue found, each with its location."""

    category = "network"

    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("\n".join(self.problems))


class ParseError(NetworkError):
    category = "parse"


class SchemaViolation(NetworkError):
    category = "schema"


class InvariantViolation(NetworkError):
    category = "invariant"


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("snnoc.app").joinpath("network.schema.json").read_text()
    return json.loads(text)


def read_description(path) -> dict:
    """Parse a YAML (or JSON) description without validating it."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ParseError(f"{where}: {getattr(e, 'problem', None) or e}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return doc


def dump_description(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def check_schema(doc: dict) -> None:
    v = jsonschema.Draft202012Validator(schema())
    errs = sorted(v.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errs:
        raise SchemaViolation([f"/{'/'.join(map(str, e.absolute_path))}: {e.message}" for e in errs])


def _axon_list(block) -> list[int]:
    if isinstance(block, dict):
        return list(range(block["from"], block["to"]))
    return list(block)


def _init_seed(seed: int) -> int:
    # weight initialization gets its own LFSR stream, distinct from the threshold stream
    s = (seed * 0x9E37 + 0x5A5A) & 0xFFFF
    return s or 1


def parse_network(doc: dict, where: str = "<doc>") -> SimConfig:
    """Validated document -> SimConfig. Collects every invariant problem before raising."""
    check_schema(doc)
    problems: list[str] = []
    mesh = doc["mesh"]
    w, h = mesh["w"], mesh["h"]
    run = doc.get("run", {})
    nodes = doc["nodes"]
    cores_at, injectors = {}, []
    for i, nd in enumerate(nodes):
        c = tuple(nd["coord"])
        loc = f"{where}: /nodes/{i}"
        if not (c[0] < w and c[1] < h):
            problems.append(f"{loc}: coord {list(c)} outside the {w}x{h} mesh")
        if c in cores_at or c in injectors:
            problems.append(f"{loc}: duplicate node at {list(c)}")
            continue
        if nd["kind"] == "injector":
            injectors.append(c)
        else:
            if nd["N"] & (nd["N"] - 1):
                problems.append(f"{loc}: N={nd['N']} is not a power of two")
            cores_at[c] = nd
    if len(injectors) > 1:
        problems.append(f"{where}: /nodes: at most one injector node is supported")
    if not cores_at:
        problems.append(f"{where}: /nodes: at least one core node is required")

    by_core: dict[tuple, dict[int, tuple[int, dict]]] = {c: {} for c in cores_at}
    for i, nr in enumerate(doc["neurons"]):
        loc = f"{where}: /neurons/{i}"
        c = tuple(nr["node"])
        nd = cores_at.get(c)
        if nd is None:
            problems.append(f"{loc}: node {list(c)} is not a core")
            continue
        if nr["slot"] >= nd["M"]:
            problems.append(f"{loc}: slot {nr['slot']} >= M={nd['M']}")
        if nr["slot"] in by_core[c]:
            problems.append(f"{loc}: slot {nr['slot']} already used on node {list(c)}")
        by_core[c][nr["slot"]] = (i, nr)
        N = nd["N"]
        mode = nr["mode"]
        if nr.get("learning", False) and mode == "ReLU":
            problems.append(f"{loc}: ReLU neurons cannot learn")
        lo = nr.get("threshold_lo", DEFAULTS["threshold_lo"])
        hi = nr.get("threshold_hi", DEFAULTS["threshold_hi"])
        if mode == "SIF" and lo > hi:
            problems.append(f"{loc}: SIF threshold_lo {lo} > threshold_hi {hi}")
        for j, blk in enumerate(nr.get("weights", [])):
            ax = _axon_list(blk["axons"])
            if any(a >= N for a in ax):
                problems.append(f"{loc}/weights/{j}: axon index >= N={N}")
            if "uniform" in blk["init"] and blk["init"]["uniform"][0] > blk["init"]["uniform"][1]:
                problems.append(f"{loc}/weights/{j}: uniform range lo > hi")
        dests = nr.get("destinations", [])
        explicit = any("ext" in d for d in dests)
        for j, d in enumerate(dests):
            dl = f"{loc}/destinations/{j}"
            if not (d["x"] < w and d["y"] < h):
                problems.append(f"{dl}: ({d['x']},{d['y']}) outside the {w}x{h} mesh")
                continue
            tgt = cores_at.get((d["x"], d["y"]))
            if tgt is None:
                problems.append(f"{dl}: dangling destination ({d['x']},{d['y']}) is not a core")
            elif d["axon"] >= tgt["N"]:
                problems.append(f"{dl}: axon {d['axon']} >= N={tgt['N']} of the target core")
        if explicit:
            entries = [AerEntry(d["x"], d["y"], d["axon"], d.get("ext", 0)) for d in dests]
            try:
                validate_table(entries, 1 << 30)
            except ConfigError as e:
                problems.append(f"{loc}/destinations: {e}")
    for c, slots in by_core.items():
        if slots and sorted(slots) != list(range(len(slots))):
            problems.append(f"{where}: node {list(c)}: neuron slots must be contiguous from 0")
    shapes = {(nd["M"], nd["N"]) for nd in cores_at.values()}
    if len(shapes) > 1:
        problems.append(f"{where}: /nodes: all cores must share M and N, got {sorted(shapes)}")
    stim = doc.get("stimulus", {})
    if stim and not injectors:
        problems.append(f"{where}: /stimulus: external stimuli need an injector node")
    for key, rows, off in (("commands", stim.get("commands", []), 1),
                           ("bernoulli/targets", stim.get("bernoulli", {}).get("targets", []), 0)):
        for j, row in enumerate(rows):
            x, y, a = row[off:off + 3]
            tgt = cores_at.get((x, y))
            if tgt is None:
                problems.append(f"{where}: /stimulus/{key}/{j}: ({x},{y}) is not a core")
            elif a >= tgt["N"]:
                problems.append(f"{where}: /stimulus/{key}/{j}: axon {a} >= N")
    if problems:
        raise InvariantViolation(problems)

    master = run.get("master_seed", 1)
    cores = []
    for ci, (c, nd) in enumerate(cores_at.items()):
        N, M = nd["N"], nd["M"]
        seed = nd.get("seed", ((master + 1) * 7919 + ci * 104729) & 0xFFFF or 1)
        scales = np.zeros(N, dtype=np.int64)
        for blk in nd.get("scales", []):
            scales[_axon_list(blk["axons"])] = blk["scale"]
        init = Prng(_init_seed(seed))
        slots = by_core[c]
        ncfgs = []
        weights = np.zeros((len(slots), N), dtype=np.int64)
        biases = np.zeros(len(slots), dtype=np.int64)
        for s in range(len(slots)):
            _, nr = slots[s]
            p = {**DEFAULTS, **nr}
            plastic = None
            for blk in nr.get("weights", []):
                ax = _axon_list(blk["axons"])
                if "constant" in blk["init"]:
                    weights[s, ax] = to_raw(blk["init"]["constant"], FX16_MIN, FX16_MAX)
                else:
                    lo, hi = (to_raw(v, FX16_MIN, FX16_MAX) for v in blk["init"]["uniform"])
                    weights[s, ax] = [prng_uniform(init, lo, hi) for _ in ax]
                if blk.get("plastic", False):
                    if plastic is None:
                        plastic = np.zeros(N, dtype=bool)
                    plastic[ax] = True
            biases[s] = to_raw(p["bias"], FX16_MIN, FX16_MAX)
            dests = nr.get("destinations", [])
            explicit = any("ext" in d for d in dests)
            entries = [AerEntry(d["x"], d["y"], d["axon"],
                                d.get("ext", 0) if explicit else (EXT_CONTINUE if k < len(dests) - 1 else 0))
                       for k, d in enumerate(dests)]
            ncfgs.append(NeuronConfig(
                mode=Mode(p["mode"]),
                learning=bool(p["learning"]),
                threshold=to_raw(p["threshold"]),
                threshold_lo=to_raw(p["threshold_lo"]),
                threshold_hi=to_raw(p["threshold_hi"]),
                eta_ltp_log=to_raw(p["eta_ltp_log"], FX16_MIN, FX16_MAX),
                eta_ltd_log=to_raw(p["eta_ltd_log"], FX16_MIN, FX16_MAX),
                tau_ltp=int(p["tau_ltp"]),
                tau_ltd=int(p["tau_ltd"]),
                destinations=entries,
                plastic=plastic,
            ))
        cores.append(CoreConfig(coord=c, M=M, N=N, neurons=ncfgs, scales=scales, seed=seed,
                                weights=weights, biases=biases))
    schedule = None
    if stim:
        b = stim.get("bernoulli")
        schedule = InjectionSchedule(
            commands=np.array(stim["commands"], dtype=np.int64).reshape(-1, 4) if "commands" in stim else None,
            targets=np.array(b["targets"], dtype=np.int64).reshape(-1, 3) if b else None,
            p=b["p"] if b else 0.0,
            seed=b.get("seed", master) if b else 0,
        )
    cfg = SimConfig(mesh_w=w, mesh_h=h, cores=cores, injectors=injectors,
                    buffer_depth=mesh.get("buffer_depth_flits", 16), total_necs=run.get("necs", 100),
                    seed=master, schedule=schedule, drop_after=mesh.get("drop_after"))
    try:
        cfg.validate()
    except ConfigError as e:
        raise InvariantViolation([f"{where}: {e}"]) from None
    return cfg


def load_network(path) -> SimConfig:
    return parse_network(read_description(path), where=str(path))


def config_digest(cfg: SimConfig) -> str:
    """Stable hash of everything that determines a run; equal digests mean equal configs."""
    h = hashlib.sha256()

    def put(*xs):
        for x in xs:
            if isinstance(x, np.ndarray):
                h.update(str(x.dtype).encode() + str(x.shape).encode() + np.ascontiguousarray(x).tobytes())
            else:
                h.update(repr(x).encode())
            h.update(b"|")

    put(cfg.mesh_w, cfg.mesh_h, cfg.buffer_depth, cfg.total_necs, cfg.seed, cfg.drop_after, cfg.engine,
        [tuple(i) for i in cfg.injectors])
    for c in cfg.cores:
        put(tuple(c.coord), c.M, c.N, c.seed, c.forced_rate, c.forced_seed, c.scales, c.weights, c.biases)
        for nc in c.neurons:
            put(nc.mode.value, nc.learning, nc.threshold, nc.threshold_lo, nc.threshold_hi, nc.eta_ltp_log,
                nc.eta_ltd_log, nc.tau_ltp, nc.tau_ltd, nc.forced_rate,
                [(e.dest_x, e.dest_y, e.axon, e.ext) for e in nc.destinations],
                nc.plastic if nc.plastic is not None else None)
    s = cfg.schedule
    if s is not None:
        put(s.commands if s.commands is not None else None, s.targets if s.targets is not None else None, s.p, s.seed)
    return h.hexdigest()


def normalized(doc: dict) -> dict:
    """Copy of ``doc`` with defaults made explicit (what ``dump_description`` writes back)."""
    out = copy.deepcopy(doc)
    out.setdefault("run", {}).setdefault("necs", 100)
    out["run"].setdefault("master_seed", 1)
    out["mesh"].setdefault("buffer_depth_flits", 16)
    for nr in out["neurons"]:
        for k, v in DEFAULTS.items():
            nr.setdefault(k, v)
    return out
