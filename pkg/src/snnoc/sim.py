"""Global simulation engine: NEC synchronization, packet exchange, statistics, pressure tests and sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ConfigError, Core, CoreConfig, multicast, nec_cycles, slot_cycles
from .neuron import NeuronConfig
from .noc.fastmesh import FastMesh
from .noc.mesh import ReferenceMesh, collect_latency

MAX_MESH = 16
STATS_HEADER = ["firing_rate", "total_spikes", "traffic_bytes", "lat_min", "lat_avg", "lat_max",
                "contention_rate", "buffer_rate", "drops"]

__all__ = ["SimConfig", "InjectionSchedule", "RunStats", "Simulation", "run", "pressure_config",
           "pressure_test", "sweep", "collect_latency", "STATS_HEADER"]


@dataclass
class InjectionSchedule:
    """External stimuli sent from an injector node at the start of each NEC.

    Either explicit ``commands`` rows (nec, dest_x, dest_y, axon), or a
    Bernoulli source: every NEC each row of ``targets`` (dest_x, dest_y, axon)
    fires with probability ``p``.
    """

    commands: np.ndarray | None = None
    targets: np.ndarray | None = None
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.commands is not None:
            c = np.asarray(self.commands, dtype=np.int64).reshape(-1, 4)
            self.commands = c[np.argsort(c[:, 0], kind="stable")]
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.int64).reshape(-1, 3)
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("injection probability must lie in [0, 1]")
        self._rng = np.random.default_rng(self.seed)

    def for_nec(self, nec: int) -> np.ndarray:
        """(k, 3) rows of (dest_x, dest_y, axon) to inject during ``nec``."""
        parts = []
        if self.commands is not None and len(self.commands):
            lo, hi = np.searchsorted(self.commands[:, 0], [nec, nec + 1])
            parts.append(self.commands[lo:hi, 1:])
        if self.targets is not None and self.p > 0:
            parts.append(self.targets[self._rng.random(len(self.targets)) < self.p])
        if not parts:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(parts)


@dataclass
class SimConfig:
    mesh_w: int
    mesh_h: int
    cores: list[CoreConfig]
    injectors: list[tuple[int, int]] = field(default_factory=list)
    buffer_depth: int = 16
    total_necs: int = 100
    seed: int = 1
    schedule: InjectionSchedule | None = None
    drop_after: int | None = None  # cycles a head may wait at injection; default one slot
    engine: str = "fast"
    target_rate: float | None = None

    def validate(self) -> None:
        errs = []
        if not (1 <= self.mesh_w <= MAX_MESH and 1 <= self.mesh_h <= MAX_MESH):
            errs.append(f"mesh {self.mesh_w}x{self.mesh_h} exceeds the 4-bit coordinate range")
        if not self.cores:
            errs.append("at least one core node is required")
        if self.buffer_depth < 1:
            errs.append("buffer depth must be >= 1 flit")
        if self.total_necs < 0:
            errs.append("total_necs must be >= 0")
        if self.engine not in ("fast", "reference"):
            errs.append(f"unknown engine {self.engine!r}")
        coords = [tuple(c.coord) for c in self.cores] + [tuple(i) for i in self.injectors]
        if len(set(coords)) != len(coords):
            errs.append("two nodes share one coordinate")
        for x, y in coords:
            if not (0 <= x < self.mesh_w and 0 <= y < self.mesh_h):
                errs.append(f"node ({x},{y}) outside the mesh")
        core_at = {tuple(c.coord): c for c in self.cores}
        if self.cores:
            shapes = {(c.M, c.N) for c in self.cores}
            if len(shapes) > 1:
                errs.append(f"all cores must share M and N (NEC length is global), got {sorted(shapes)}")
        for c in self.cores:
            for k, nc in enumerate(c.neurons):
                for j, e in enumerate(nc.destinations):
                    tgt = core_at.get(e.dest)
                    if tgt is None:
                        errs.append(f"core {c.coord} neuron {k} destination {j}: ({e.dest_x},{e.dest_y}) is not a core")
                    elif e.axon >= tgt.N:
                        errs.append(f"core {c.coord} neuron {k} destination {j}: axon {e.axon} >= N")
        if self.schedule is not None:
            if not self.injectors:
                errs.append("an injection schedule needs an injector node")
        if errs:
            raise ConfigError("; ".join(errs))

    @property
    def M(self) -> int:
        return self.cores[0].M

    @property
    def N(self) -> int:
        return self.cores[0].N

    def summary(self) -> dict:
        """Compact, JSON-safe echo of the configuration."""
        return {
            "mesh": [self.mesh_w, self.mesh_h],
            "buffer_depth_flits": self.buffer_depth,
            "total_necs": self.total_necs,
            "seed": self.seed,
            "M": self.M,
            "N": self.N,
            "nec_cycles": nec_cycles(self.M, self.N),
            "cores": [list(c.coord) for c in self.cores],
            "injectors": [list(i) for i in self.injectors],
            "neurons": sum(len(c.neurons) for c in self.cores),
            "engine": self.engine,
            "target_rate": self.target_rate,
        }


@dataclass
class RunStats:
    necs: int
    cycles: int
    nec_cycles: int
    neurons: int
    total_spikes: int
    firing_rate: float
    traffic_bytes: float
    packets_offered: int
    packets_delivered: int
    drops: int
    in_flight: int
    lat_min: int | None
    lat_avg: float | None
    lat_max: int | None
    contention_rate: float
    buffer_rate: float
    contention_events: int
    buffer_events: int
    saturation: int
    malformed: int
    watchdog: int
    local_spikes: int
    target_rate: float | None = None
    per_neuron_rates: dict = field(default_factory=dict)

    def csv_row(self) -> list:
        def opt(v):
            return "" if v is None else v
        return [self.firing_rate, self.total_spikes, self.traffic_bytes, opt(self.lat_min), opt(self.lat_avg),
                opt(self.lat_max), self.contention_rate, self.buffer_rate, self.drops]

    def to_dict(self) -> dict:
        return asdict(self)


class Simulation:
    """All cores plus the mesh, advanced one NEC at a time.

    ``hooks`` are called after every NEC as ``hook(sim)``; they may read
    ``sim.cores[coord].state.fired`` and friends.
    """

    def __init__(self, cfg: SimConfig, trace=None):
        cfg.validate()
        self.cfg = cfg
        self.T = nec_cycles(cfg.M, cfg.N)
        drop_after = slot_cycles(cfg.N) if cfg.drop_after is None else cfg.drop_after
        if trace is not None or cfg.engine == "reference":
            self.mesh = ReferenceMesh(cfg.mesh_w, cfg.mesh_h, cfg.buffer_depth, cfg.N, drop_after,
                                      watchdog=self.T, trace=trace)
        else:
            self.mesh = FastMesh(cfg.mesh_w, cfg.mesh_h, cfg.buffer_depth, cfg.N, drop_after, watchdog=self.T)
        self.cores = {tuple(c.coord): Core(c) for c in cfg.cores}
        self._rid_core = np.full(cfg.mesh_w * cfg.mesh_h, -1, dtype=np.int64)
        self._core_list = list(self.cores.values())
        for k, c in enumerate(self._core_list):
            x, y = c.cfg.coord
            self._rid_core[y * cfg.mesh_w + x] = k
        self.fire_counts = {coord: np.zeros(len(c.cfg.neurons), dtype=np.int64) for coord, c in self.cores.items()}
        self.nec = 0
        self.local_spikes = 0
        self.dest_malformed = 0
        self.boundaries = {coord: [] for coord in self.cores}
        self.record_boundaries = False
        self.hooks = []

    def step_nec(self, stimulus: np.ndarray | None = None) -> None:
        """Advance exactly one NEC. ``stimulus`` rows are (dest_x, dest_y, axon) sent from the injector."""
        cfg = self.cfg
        start = self.nec * self.T
        for coord, core in self.cores.items():
            core.boundary()
            if self.record_boundaries:
                self.boundaries[coord].append(start)

        srcs, dsts, axons, exts, issues = [], [], [], [], []
        if stimulus is None and cfg.schedule is not None:
            stimulus = cfg.schedule.for_nec(self.nec)
        if stimulus is not None and len(stimulus):
            stimulus = np.asarray(stimulus, dtype=np.int64).reshape(-1, 3)
            src = np.broadcast_to(np.asarray(cfg.injectors[0], dtype=np.int64), (len(stimulus), 2))
            srcs.append(src)
            dsts.append(stimulus[:, :2])
            axons.append(stimulus[:, 2])
            exts.append(np.zeros(len(stimulus), dtype=np.int64))
            issues.append(np.full(len(stimulus), start, dtype=np.int64))

        for coord, core in self.cores.items():
            before = core.state.ni_accum.sum()
            out = core.run_nec(start)
            self.fire_counts[coord] += core.state.fired
            self.local_spikes += int(core.state.ni_accum.sum() - before)
            if len(out):
                srcs.append(np.broadcast_to(np.asarray(coord, dtype=np.int64), (len(out), 2)))
                dsts.append(np.stack([out.dest_x, out.dest_y], axis=1))
                axons.append(out.axon)
                exts.append(out.ext)
                issues.append(out.issue)

        if srcs:
            src = np.concatenate(srcs)
            order = np.lexsort((np.concatenate(issues), src[:, 1], src[:, 0]))
            self.mesh.offer_many(src[order], np.concatenate(dsts)[order], np.concatenate(axons)[order],
                                 np.concatenate(exts)[order], np.concatenate(issues)[order])
        dx, dy, ax, _ = self.mesh.advance_arrays(start + self.T)
        self._deliver(dx, dy, ax)
        self.nec += 1
        for h in self.hooks:
            h(self)

    def _deliver(self, dx, dy, ax) -> None:
        if len(ax) == 0:
            return
        k = self._rid_core[dy * self.cfg.mesh_w + dx]
        self.dest_malformed += int((k < 0).sum())
        for ci in np.unique(k[k >= 0]):
            st = self._core_list[ci].state
            a = ax[k == ci]
            bad = a >= len(st.ni_accum)
            st.malformed += int(bad.sum())
            st.ni_accum[a[~bad]] = True

    def run(self, necs: int | None = None) -> RunStats:
        n = self.cfg.total_necs if necs is None else necs
        for _ in range(n):
            self.step_nec()
        self.mesh.check_conservation()
        return self.stats()

    def stats(self) -> RunStats:
        s = self.mesh.stats
        cycles = self.nec * self.T
        n_neurons = sum(len(c.cfg.neurons) for c in self.cores.values())
        spikes = int(sum(int(v.sum()) for v in self.fire_counts.values()))
        lat_min, lat_avg, lat_max = s.latency.summary()
        per = {}
        for coord, counts in self.fire_counts.items():
            for k, v in enumerate(counts.tolist()):
                per[f"{coord[0]},{coord[1]}:{k}"] = v / self.nec if self.nec else 0.0
        in_flight = s.packets_offered - s.packets_delivered - s.packets_dropped
        return RunStats(
            necs=self.nec,
            cycles=cycles,
            nec_cycles=self.T,
            neurons=n_neurons,
            total_spikes=spikes,
            firing_rate=spikes / (n_neurons * self.nec) if n_neurons and self.nec else 0.0,
            traffic_bytes=s.flits_delivered * 4 / 8,
            packets_offered=s.packets_offered,
            packets_delivered=s.packets_delivered,
            drops=s.packets_dropped,
            in_flight=in_flight,
            lat_min=lat_min,
            lat_avg=lat_avg,
            lat_max=lat_max,
            contention_rate=s.contention_cycles / cycles if cycles else 0.0,
            buffer_rate=s.buffer_cycles / cycles if cycles else 0.0,
            contention_events=s.contention_events,
            buffer_events=s.buffer_events,
            saturation=sum(c.state.saturation.events for c in self.cores.values()),
            malformed=sum(c.state.malformed for c in self.cores.values()) + self.dest_malformed,
            watchdog=s.watchdog,
            local_spikes=self.local_spikes,
            target_rate=self.cfg.target_rate,
            per_neuron_rates=per,
        )


def run(cfg: SimConfig, trace=None) -> RunStats:
    return Simulation(cfg, trace=trace).run()


# --- pressure test ------------------------------------------------------------

def _grid(n_cores: int) -> tuple[int, int]:
    """Smallest near-square mesh (w >= h) holding n cores."""
    h = int(math.isqrt(n_cores))
    while n_cores % h:
        h -= 1
    w = n_cores // h
    if w > MAX_MESH:
        raise ConfigError(f"{n_cores} cores do not fit a 16x16 mesh")
    return w, h


def pressure_config(rate: float, necs: int = 1000, depth: int = 16, seed: int = 1, M: int = 128, N: int = 256,
                    mesh: tuple[int, int] = (4, 4), fanout: int = 1, neurons: int | None = None,
                    engine: str = "fast") -> SimConfig:
    """Random-connectivity network with forced Bernoulli firing.

    Every logical neuron gets ``fanout`` targets drawn uniformly over
    (other core, axon). ``neurons`` defaults to M per core.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("firing rate must lie in [0, 1]")
    w, h = mesh
    coords = [(x, y) for y in range(h) for x in range(w)]
    if len(coords) < 2:
        raise ConfigError("pressure test needs at least two cores")
    per_core = M if neurons is None else neurons
    ss = np.random.SeedSequence(seed)
    wiring_seq, *core_seqs = ss.spawn(1 + len(coords))
    rng = np.random.default_rng(wiring_seq)
    cores = []
    for ci, coord in enumerate(coords):
        others = [c for c in coords if c != coord]
        pick = rng.integers(0, len(others), size=(per_core, fanout))
        ax = rng.integers(0, N, size=(per_core, fanout))
        neurons_cfg = []
        for k in range(per_core):
            tgts = [(*others[pick[k, j]], int(ax[k, j])) for j in range(fanout)]
            neurons_cfg.append(NeuronConfig(destinations=multicast(tgts)))
        cores.append(CoreConfig(coord=coord, M=M, N=N, neurons=neurons_cfg, seed=(ci + 1) & 0xFFFF or 1,
                                forced_rate=rate,
                                forced_seed=int(core_seqs[ci].generate_state(1)[0])))
    return SimConfig(mesh_w=w, mesh_h=h, cores=cores, buffer_depth=depth, total_necs=necs, seed=seed,
                     engine=engine, target_rate=rate)


def pressure_test(rate: float, necs: int = 1000, depth: int = 16, seed: int = 1, **kw) -> RunStats:
    return run(pressure_config(rate, necs=necs, depth=depth, seed=seed, **kw))


# --- sweeps ------------------------------------------------------------------

SWEEP_TOTAL_NEURONS = 2048


def sweep(param: str, values, rate: float = 0.1, necs: int = 10, depth: int = 16, seed: int = 1,
          N: int = 256, M: int = 128) -> list[dict]:
    """One run per value, seeds master + index. Rows carry the stats plus param, value and nec_cycles.

    ``param="M"`` spreads 2048 logical neurons over 2048 / M cores;
    ``param="depth"`` runs the 4x4 pressure network at each FIFO depth.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for i, v in enumerate(values):
        if param == "M":
            if v < 1 or SWEEP_TOTAL_NEURONS % v:
                raise ConfigError(f"M={v} does not divide {SWEEP_TOTAL_NEURONS} logical neurons")
            mesh = _grid(SWEEP_TOTAL_NEURONS // v)
            cfg = pressure_config(rate, necs=necs, depth=depth, seed=seed + i, M=v, N=N, mesh=mesh)
        elif param == "depth":
            cfg = pressure_config(rate, necs=necs, depth=int(v), seed=seed + i, M=M, N=N)
        else:
            raise ValueError(f"unknown sweep parameter {param!r} (use M or depth)")
        st = run(cfg)
        rows.append({"param": param, "value": v, "nec_cycles": nec_cycles(cfg.M, cfg.N),
                     "mesh": f"{cfg.mesh_w}x{cfg.mesh_h}", "stats": st})
    return rows


# --- output files ---------------------------------------------------------------

def stats_csv(stats: list[RunStats], extra: list[dict] | None = None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    keys = list(extra[0].keys()) if extra else []
    wr.writerow(keys + STATS_HEADER)
    for k, st in enumerate(stats):
        wr.writerow([extra[k][c] for c in keys] + st.csv_row() if extra else st.csv_row())
    return buf.getvalue()


def sweep_csv(rows: list[dict]) -> str:
    extra = [{"param": r["param"], "value": r["value"], "nec_cycles": r["nec_cycles"], "mesh": r["mesh"]} for r in rows]
    return stats_csv([r["stats"] for r in rows], extra)


def summary_json(cfg: SimConfig, st: RunStats) -> str:
    doc = {"config": cfg.summary(), "seed": cfg.seed, "stats": st.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"

