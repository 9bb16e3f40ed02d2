"""Time-multiplexed physical neuron core.

One core evaluates up to M logical neurons per NEC over N shared axons.
Spikes delivered during a NEC collect in the NI register array and become
the spike buffer at the next boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neuron import NeuronConfig, NeuronState, advance_counters, evaluate
from .noc.packet import EXT_CONTINUE, AerPacket, axon_bits
from .numerics import MAX_SCALE, Prng, SatCounter

SLOT_EPILOGUE = 4  # cycles per slot beyond one per axon


class ConfigError(ValueError):
    """Invalid core or network configuration, detected before cycle 0."""


@dataclass(frozen=True, slots=True)
class AerEntry:
    dest_x: int
    dest_y: int
    axon: int
    ext: int = 0

    @property
    def continue_bit(self) -> bool:
        return bool(self.ext & EXT_CONTINUE)

    @property
    def dest(self) -> tuple[int, int]:
        return (self.dest_x, self.dest_y)


def multicast(targets) -> list[AerEntry]:
    """Destination table for one neuron: continue bit on every entry but the last."""
    targets = list(targets)
    return [AerEntry(x, y, a, EXT_CONTINUE if k < len(targets) - 1 else 0)
            for k, (x, y, a) in enumerate(targets)]


def validate_table(entries, n_axons: int, mesh: tuple[int, int] | None = None) -> None:
    if not entries:
        return
    for k, e in enumerate(entries):
        if not 0 <= e.axon < n_axons:
            raise ConfigError(f"destination {k}: axon {e.axon} out of range [0, {n_axons})")
        if not 0 <= e.ext < 16:
            raise ConfigError(f"destination {k}: ext {e.ext} does not fit in 4 bits")
        if mesh is not None and not (0 <= e.dest_x < mesh[0] and 0 <= e.dest_y < mesh[1]):
            raise ConfigError(f"destination {k}: ({e.dest_x},{e.dest_y}) outside the {mesh[0]}x{mesh[1]} mesh")
        last = k == len(entries) - 1
        if e.continue_bit == last:
            raise ConfigError(f"destination {k}: multicast table not terminated correctly"
                              " (continue bit must be set on all entries but the last)")


def nec_cycles(M: int, N: int) -> int:
    if M < 1 or N < 1:
        raise ValueError("M and N must be >= 1")
    return (M + 1) * (N + SLOT_EPILOGUE)


def slot_cycles(N: int) -> int:
    return N + SLOT_EPILOGUE


@dataclass
class CoreConfig:
    coord: tuple[int, int]
    M: int
    N: int
    neurons: list[NeuronConfig]
    scales: np.ndarray | None = None
    seed: int = 0xACE1
    # initial raw weights (len(neurons) x N) and biases
    weights: np.ndarray | None = None
    biases: np.ndarray | None = None
    # pressure test: every neuron fires Bernoulli(forced_rate) per NEC
    forced_rate: float | None = None
    forced_seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("core capacity M must be >= 1")
        try:
            axon_bits(self.N)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if len(self.neurons) > self.M:
            raise ConfigError(f"{len(self.neurons)} neurons exceed core capacity M={self.M}")
        if self.scales is None:
            self.scales = np.zeros(self.N, dtype=np.int64)
        self.scales = np.asarray(self.scales, dtype=np.int64)
        if self.scales.shape != (self.N,) or self.scales.min(initial=0) < 0 or self.scales.max(initial=0) > MAX_SCALE:
            raise ConfigError(f"axon scales must be N={self.N} values in [0, {MAX_SCALE}]")
        if not 0 < (self.seed & 0xFFFF):
            raise ConfigError("core seed must be a nonzero 16-bit value")
        if self.forced_rate is not None and not 0.0 <= self.forced_rate <= 1.0:
            raise ConfigError("forced_rate must lie in [0, 1]")
        n = len(self.neurons)
        if self.weights is None:
            self.weights = np.zeros((n, self.N), dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.int64).reshape(n, self.N)
        if self.biases is None:
            self.biases = np.zeros(n, dtype=np.int64)
        self.biases = np.asarray(self.biases, dtype=np.int64)
        for k, nc in enumerate(self.neurons):
            try:
                validate_table(nc.destinations, self.N)
            except ConfigError as e:
                raise ConfigError(f"core {self.coord} neuron {k}: {e}") from None
            if nc.plastic is not None and np.shape(nc.plastic) != (self.N,):
                raise ConfigError(f"core {self.coord} neuron {k}: plastic mask must have N entries")

    def table(self):
        """Flattened destination tables: (neuron, dest_x, dest_y, axon, ext) arrays in table order."""
        rows = [(k, e.dest_x, e.dest_y, e.axon, e.ext) for k, nc in enumerate(self.neurons) for e in nc.destinations]
        a = np.array(rows, dtype=np.int64).reshape(-1, 5)
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4]


@dataclass
class CoreState:
    neurons: list[NeuronState]
    spike_buffer: np.ndarray
    ni_accum: np.ndarray
    prng: Prng
    rng: np.random.Generator
    saturation: SatCounter = field(default_factory=SatCounter)
    malformed: int = 0
    fired: np.ndarray | None = None
    spikes: int = 0

    @classmethod
    def fresh(cls, cfg: CoreConfig) -> CoreState:
        neurons = [NeuronState.fresh(cfg.N, cfg.weights[k], cfg.biases[k]) for k in range(len(cfg.neurons))]
        return cls(
            neurons=neurons,
            spike_buffer=np.zeros(cfg.N, dtype=bool),
            ni_accum=np.zeros(cfg.N, dtype=bool),
            prng=Prng(cfg.seed),
            rng=np.random.default_rng(cfg.forced_seed),
            fired=np.zeros(len(neurons), dtype=bool),
        )


def ni_receive(state: CoreState, axon: int) -> None:
    if 0 <= axon < len(state.ni_accum):
        state.ni_accum[axon] = True
    else:
        state.malformed += 1


def nec_boundary(state: CoreState) -> None:
    state.spike_buffer, state.ni_accum = state.ni_accum, state.spike_buffer
    state.ni_accum[:] = False


def issue_cycle(nec_start: int, slot, N: int):
    """Last cycle of a neuron's inference slot: when its spike packets are handed to the NI."""
    return nec_start + (np.asarray(slot) + 1) * slot_cycles(N) - 1


def expand_destinations(entries, local_coord):
    """Split a fired neuron's table into NoC entries and local axons (bypass), in table order."""
    packets, local = [], []
    for e in entries:
        if e.dest == tuple(local_coord):
            local.append(e.axon)
        else:
            packets.append(AerPacket(e.dest_x, e.dest_y, e.axon, e.ext, tuple(local_coord)))
    return packets, local


@dataclass
class NecOutput:
    """Packets a core hands to its NI during one NEC, as parallel arrays."""

    dest_x: np.ndarray
    dest_y: np.ndarray
    axon: np.ndarray
    ext: np.ndarray
    issue: np.ndarray

    def __len__(self):
        return len(self.axon)


class Core:
    """Config, state and precomputed destination table of one physical core."""

    def __init__(self, cfg: CoreConfig, state: CoreState | None = None):
        self.cfg = cfg
        self.state = CoreState.fresh(cfg) if state is None else state
        self._tab = cfg.table()
        tn, tx, ty, _, _ = self._tab
        self._is_local = (tx == cfg.coord[0]) & (ty == cfg.coord[1])
        self.slot_len = slot_cycles(cfg.N)

    @property
    def nec_len(self) -> int:
        return nec_cycles(self.cfg.M, self.cfg.N)

    def boundary(self) -> None:
        nec_boundary(self.state)

    def evaluate_all(self) -> np.ndarray:
        """Evaluate logical neurons in slot order; returns the fired mask."""
        cfg, st = self.cfg, self.state
        n = len(cfg.neurons)
        if cfg.forced_rate is not None:
            # load generator: neuron state is not consulted or updated
            fired = st.rng.random(n) < cfg.forced_rate
        else:
            fired = np.zeros(n, dtype=bool)
            for k, nc in enumerate(cfg.neurons):
                if nc.forced_rate is not None:
                    fired[k] = st.rng.random() < nc.forced_rate
                    advance_counters(bool(fired[k]), st.spike_buffer, st.neurons[k])
                else:
                    fired[k] = evaluate(st.neurons[k], st.spike_buffer, nc, cfg.scales, st.prng, st.saturation)
        st.fired = fired
        st.spikes += int(fired.sum())
        return fired

    def run_nec(self, nec_start: int) -> NecOutput:
        """One NEC after the boundary swap: evaluate, deliver local spikes, return NoC packets."""
        fired = self.evaluate_all()
        tn, tx, ty, ta, te = self._tab
        hit = fired[tn] if len(tn) else np.zeros(0, dtype=bool)
        loc = hit & self._is_local
        if loc.any():
            axons = ta[loc]
            bad = (axons < 0) | (axons >= self.cfg.N)
            self.state.malformed += int(bad.sum())
            self.state.ni_accum[axons[~bad]] = True
        rem = hit & ~self._is_local
        return NecOutput(tx[rem], ty[rem], ta[rem], te[rem], issue_cycle(nec_start, tn[rem], self.cfg.N))


def run_nec(cfg: CoreConfig, state: CoreState, nec_start: int = 0) -> tuple[CoreState, NecOutput]:
    """Functional-style wrapper around ``Core.run_nec``; mutates and returns ``state``."""
    out = Core(cfg, state).run_nec(nec_start)
    return state, out

