"""MNIST ingestion, pixel rate coding, the pooling + soft winner-take-all network, and its training harness."""

from __future__ import annotations

import csv
import gzip
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import nec_cycles
from ..numerics import Prng, to_float
from ..sim import InjectionSchedule, Simulation
from .config import parse_network

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28
POOLED = 14
N_POOL = POOLED * POOLED
N_LEARN = 4


class MnistError(ValueError):
    pass


@dataclass
class MnistSet:
    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise MnistError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4 + 4 * ndim:
        raise MnistError(f"{path}: truncated header")
    got = int.from_bytes(raw[:4], "big")
    if got != magic:
        raise MnistError(f"{path}: bad magic 0x{got:08X}, expected 0x{magic:08X}")
    dims = [int.from_bytes(raw[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim)]
    body = raw[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(body) < need:
        raise MnistError(f"{path}: truncated data, {len(body)} of {need} bytes")
    return np.frombuffer(body, dtype=np.uint8, count=need).reshape(dims)


def load_mnist(images_path, labels_path) -> MnistSet:
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise MnistError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    return MnistSet(images.copy(), labels.copy())


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, r, c = images.shape
    hdr = b"".join(int(v).to_bytes(4, "big") for v in (IMAGE_MAGIC, n, r, c))
    Path(images_path).write_bytes(hdr + images.tobytes())
    hdr = b"".join(int(v).to_bytes(4, "big") for v in (LABEL_MAGIC, len(labels)))
    Path(labels_path).write_bytes(hdr + labels.tobytes())


def pool2x2(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64).reshape(POOLED, 2, POOLED, 2)
    return a.mean(axis=(1, 3))


# --- network -------------------------------------------------------------------

@dataclass
class WtaParams:
    """Knobs of the pooling + soft-WTA network. Values are in real units."""

    mesh: tuple[int, int] = (4, 4)
    M: int = 128
    N: int = 256
    buffer_depth: int = 16
    injector: tuple[int, int] = (0, 0)
    learner: tuple[int, int] = (3, 3)
    pool_threshold: float = 4.0
    relay_threshold: float = 1.0
    sif_threshold: tuple[float, float] = (0.0, 8.0)
    eta_ltp_log: float = 1.0625
    eta_ltd_log: float = 1.40625
    tau_ltp: int = 16
    tau_ltd: int = 4
    init_range: tuple[float, float] = (-1.0, 1.0)
    inhibit_weight: float = -2.0
    inhibit_scale: int = 0
    p_max: float = 1.0
    seed: int = 1


@dataclass
class WtaLayout:
    pooler_cores: list[tuple[int, int]]
    learner: tuple[int, int]
    injector: tuple[int, int]
    pixel_targets: np.ndarray  # (784, 3): dest_x, dest_y, axon per pixel (row-major)
    learn_axons: np.ndarray  # (196,) learning-core axon carrying pooler p
    sif_out_axon: int
    inhibit_axon: int


def wta_layout(p: WtaParams) -> WtaLayout:
    w, h = p.mesh
    free = [(x, y) for y in range(h) for x in range(w) if (x, y) not in (p.injector, p.learner)]
    per_core = -(-N_POOL // len(free)) if free else 0
    n_cores = -(-N_POOL // per_core) if per_core else 0
    if not free or 4 * per_core > p.N or per_core > p.M:
        raise ValueError("mesh too small for the pooling layer")
    cores = free[:n_cores]
    tgt = np.zeros((SIDE * SIDE, 3), dtype=np.int64)
    for r in range(SIDE):
        for c in range(SIDE):
            pool = (r // 2) * POOLED + c // 2
            core = cores[pool // per_core]
            slot = pool % per_core
            tgt[r * SIDE + c] = (core[0], core[1], slot * 4 + (r % 2) * 2 + (c % 2))
    base = N_POOL
    if base + 2 * N_LEARN > p.N or 2 * N_LEARN > p.M:
        raise ValueError("learning core too small")
    return WtaLayout(cores, p.learner, p.injector, tgt, np.arange(N_POOL), base, base + N_LEARN)


def build_wta(p: WtaParams, necs: int = 100) -> dict:
    """Network description document for the pooling + soft-WTA network."""
    lay = wta_layout(p)
    per_core = -(-N_POOL // len(lay.pooler_cores))
    nodes = [{"coord": list(p.injector), "kind": "injector"}]
    for k, c in enumerate(lay.pooler_cores):
        nodes.append({"coord": list(c), "kind": "core", "M": p.M, "N": p.N, "seed": (p.seed * 131 + k + 1) & 0xFFFF or 1})
    nodes.append({"coord": list(p.learner), "kind": "core", "M": p.M, "N": p.N,
                  "seed": (p.seed * 131 + 977) & 0xFFFF or 1,
                  "scales": [{"axons": {"from": lay.inhibit_axon, "to": lay.inhibit_axon + N_LEARN},
                              "scale": p.inhibit_scale}]})
    neurons = []
    lx, ly = p.learner
    for pool in range(N_POOL):
        c = lay.pooler_cores[pool // per_core]
        slot = pool % per_core
        neurons.append({
            "node": list(c), "slot": slot, "mode": "ReLU", "threshold": p.pool_threshold,
            "weights": [{"axons": {"from": slot * 4, "to": slot * 4 + 4}, "init": {"constant": 1.0}}],
            "destinations": [{"x": lx, "y": ly, "axon": int(lay.learn_axons[pool])}],
        })
    for j in range(N_LEARN):
        inhib = [lay.inhibit_axon + k for k in range(N_LEARN) if k != j]
        neurons.append({
            "node": [lx, ly], "slot": j, "mode": "SIF", "learning": True,
            "threshold_lo": p.sif_threshold[0], "threshold_hi": p.sif_threshold[1],
            "eta_ltp_log": p.eta_ltp_log, "eta_ltd_log": p.eta_ltd_log,
            "tau_ltp": p.tau_ltp, "tau_ltd": p.tau_ltd,
            "weights": [
                {"axons": {"from": 0, "to": N_POOL}, "init": {"uniform": list(p.init_range)}, "plastic": True},
                {"axons": inhib, "init": {"constant": p.inhibit_weight}},
            ],
            "destinations": [{"x": lx, "y": ly, "axon": lay.sif_out_axon + j}],
        })
    for j in range(N_LEARN):
        neurons.append({
            "node": [lx, ly], "slot": N_LEARN + j, "mode": "ReLU", "threshold": p.relay_threshold,
            "weights": [{"axons": [lay.sif_out_axon + j], "init": {"constant": 1.0}}],
            "destinations": [{"x": lx, "y": ly, "axon": lay.inhibit_axon + j}],
        })
    return {
        "mesh": {"w": p.mesh[0], "h": p.mesh[1], "buffer_depth_flits": p.buffer_depth},
        "run": {"necs": necs, "master_seed": p.seed},
        "nodes": nodes,
        "neurons": neurons,
    }


def encode_image(img, necs: int, prng: Prng, targets: np.ndarray, p_max: float = 1.0,
                 nec_offset: int = 0) -> InjectionSchedule:
    """Rate-code an image: pixel v spikes in a NEC with probability v/255 * p_max.

    One LFSR draw per pixel per NEC (pixels row-major within a NEC); the draw
    is reduced to [0, 254] and compared against v * p_max.
    """
    if necs < 1:
        raise ValueError("necs must be >= 1")
    pix = np.asarray(img, dtype=np.float64).reshape(-1)
    if len(pix) != len(targets):
        raise ValueError("image size does not match the pixel target table")
    draws = (prng.next16_many(necs * len(pix)) % 255).reshape(necs, len(pix))
    nec_idx, pix_idx = np.nonzero(draws < pix * p_max)
    cmds = np.empty((len(nec_idx), 4), dtype=np.int64)
    cmds[:, 0] = nec_idx + nec_offset
    cmds[:, 1:] = targets[pix_idx]
    return InjectionSchedule(commands=cmds)


# --- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    sample_indices: list[int]
    sample_labels: list[int]
    weights_before: np.ndarray  # (4, 196) float
    weights_after: np.ndarray
    raster: np.ndarray  # (necs, 4) bool
    sample_rates: np.ndarray  # (samples, 4) per-sample firing rate of each learning neuron
    avg_firing_probability: float
    class_means: dict = field(default_factory=dict)  # label -> (14, 14) pooled mean image
    stats: dict = field(default_factory=dict)


def select_samples(mset: MnistSet, digits, samples: int, seed: int) -> np.ndarray:
    digits = list(digits)
    missing = [d for d in digits if not np.any(mset.labels == d)]
    if missing:
        raise MnistError(f"dataset has no samples of digit(s) {missing}")
    pool = np.flatnonzero(np.isin(mset.labels, digits))
    if len(pool) < samples:
        raise MnistError(f"only {len(pool)} samples of digits {digits}, {samples} requested")
    rng = np.random.default_rng(seed)
    return rng.choice(pool, size=samples, replace=False)


def plastic_weights(sim: Simulation, p: WtaParams) -> np.ndarray:
    core = sim.cores[tuple(p.learner)]
    return np.array([to_float(core.state.neurons[j].weights[:N_POOL]) for j in range(N_LEARN)])


def train_mnist(p: WtaParams, mset: MnistSet, digits=(0, 1), samples: int = 100, necs_per_sample: int = 100,
                reset_between: bool = True, out_dir=None) -> TrainResult:
    """Present ``samples`` images in sequence, ``necs_per_sample`` NECs each, with learning on."""
    idx = select_samples(mset, digits, samples, p.seed)
    doc = build_wta(p, necs=samples * necs_per_sample)
    cfg = parse_network(doc, where="wta")
    lay = wta_layout(p)
    sim = Simulation(cfg)
    learner = sim.cores[tuple(p.learner)]
    enc = Prng((p.seed * 2654435761) & 0xFFFF or 1)
    before = plastic_weights(sim, p)

    total = samples * necs_per_sample
    raster = np.zeros((total, N_LEARN), dtype=bool)
    for s, i in enumerate(idx):
        if reset_between:
            for core in sim.cores.values():
                for st in core.state.neurons:
                    st.u = 0
        sched = encode_image(mset.images[i], necs_per_sample, enc, lay.pixel_targets, p.p_max)
        for k in range(necs_per_sample):
            sim.step_nec(sched.for_nec(k))
            raster[s * necs_per_sample + k] = learner.state.fired[:N_LEARN]
    sim.mesh.check_conservation()
    st = sim.stats()
    after = plastic_weights(sim, p)
    rates = raster.reshape(samples, necs_per_sample, N_LEARN).mean(axis=1)
    labels = [int(mset.labels[i]) for i in idx]
    class_means = {d: pool2x2(mset.images[idx[np.array(labels) == d]].mean(axis=0)) for d in digits
                   if np.any(np.array(labels) == d)}
    res = TrainResult(
        sample_indices=[int(i) for i in idx],
        sample_labels=labels,
        weights_before=before,
        weights_after=after,
        raster=raster,
        sample_rates=rates,
        avg_firing_probability=st.firing_rate,
        class_means=class_means,
        stats={k: v for k, v in st.to_dict().items() if k != "per_neuron_rates"},
    )
    if out_dir is not None:
        write_artifacts(res, p, Path(out_dir), necs_per_sample, reset_between)
    return res


HIST_EDGES = np.linspace(-4.0, 2.0, 97)  # 1/16 wide bins over the accepted weight range


def write_pgm(path: Path, img: np.ndarray) -> tuple[float, float]:
    """Binary P5 greymap, linear map of [min, max] onto [0, 255]. Returns (min, max)."""
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape) if hi == lo else (img - lo) / (hi - lo) * 255.0
    data = np.rint(scaled).astype(np.uint8)
    path.write_bytes(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + data.tobytes())
    return lo, hi


def write_artifacts(res: TrainResult, p: WtaParams, out: Path, necs_per_sample: int, reset_between: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    hb, _ = np.histogram(res.weights_before, HIST_EDGES)
    ha, _ = np.histogram(res.weights_after, HIST_EDGES)
    with open(out / "weight_histogram.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["bin_lo", "bin_hi", "count_before", "count_after"])
        for k in range(len(hb)):
            wr.writerow([HIST_EDGES[k], HIST_EDGES[k + 1], int(hb[k]), int(ha[k])])
    for j in range(N_LEARN):
        lo, hi = write_pgm(out / f"weights_n{j}.pgm", res.weights_after[j].reshape(POOLED, POOLED))
        (out / f"weights_n{j}.pgm.txt").write_text(
            f"# pixel = round((w - min) / (max - min) * 255)\nmin {lo!r}\nmax {hi!r}\n")
    with open(out / "raster.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["nec", "sample", "label"] + [f"n{j}" for j in range(N_LEARN)])
        for t, row in enumerate(res.raster):
            s = t // necs_per_sample
            wr.writerow([t, s, res.sample_labels[s]] + [int(b) for b in row])
    with open(out / "firing_rate.csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["sample", "label"] + [f"n{j}" for j in range(N_LEARN)] + ["mean"])
        for s, row in enumerate(res.sample_rates):
            wr.writerow([s, res.sample_labels[s]] + [float(v) for v in row] + [float(row.mean())])
    summary = {
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(p).items()},
        "seed": p.seed,
        "samples": len(res.sample_indices),
        "necs_per_sample": necs_per_sample,
        "nec_cycles": nec_cycles(p.M, p.N),
        "reset_between_samples": reset_between,
        "sample_indices": res.sample_indices,
        "sample_labels": res.sample_labels,
        "avg_firing_probability": res.avg_firing_probability,
        "weight_min": float(res.weights_after.min()),
        "weight_max": float(res.weights_after.max()),
        "stats": res.stats,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
