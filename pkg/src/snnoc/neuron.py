"""Single logical neuron: IF / SIF / ReLU inference and Q2PS STDP learning.

All quantities are raw fixed-point integers (see ``numerics``). State updates
happen in place on ``NeuronState``; the functions return what the hardware
would emit (fired flag, learning events).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    FRAC_BITS,
    Prng,
    SatCounter,
    pow2_floor,
    pow2_quantize,
    prng_uniform,
    sat16,
    sat_acc,
)

COUNTER_MAX = 255  # 8-bit history tracker; MAX means "expired"


class Mode(enum.Enum):
    IF = "IF"
    SIF = "SIF"
    RELU = "ReLU"


class Kind(enum.Enum):
    LTP = "LTP"
    LTD = "LTD"


BIAS = -1


@dataclass
class NeuronConfig:
    """Per-logical-neuron configuration memory. Thresholds and learning rates are raw."""

    mode: Mode = Mode.IF
    learning: bool = False
    threshold: int = 1 << FRAC_BITS
    threshold_lo: int = 0
    threshold_hi: int = 1 << FRAC_BITS
    eta_ltp_log: int = 1 << FRAC_BITS
    eta_ltd_log: int = 1 << FRAC_BITS
    tau_ltp: int = 4
    tau_ltd: int = 4
    destinations: list = field(default_factory=list)
    # axons whose synapses learn; None means every axon
    plastic: np.ndarray | None = None
    # pressure-test override: fire with this probability, bypassing dynamics
    forced_rate: float | None = None

    def __post_init__(self):
        if self.tau_ltp < 1 or self.tau_ltd < 1:
            raise ValueError("STDP windows must be >= 1 NEC")
        if self.threshold_lo > self.threshold_hi:
            raise ValueError("SIF threshold_lo > threshold_hi")
        if self.learning and self.mode is Mode.RELU:
            raise ValueError("ReLU neurons do not learn")


@dataclass
class NeuronState:
    u: int
    bias: int
    weights: np.ndarray  # int64 raw Fx16, shape (N,)
    post_counter: int
    pre_counters: np.ndarray  # int64, shape (N,)

    @classmethod
    def fresh(cls, n_axons: int, weights=None, bias: int = 0) -> NeuronState:
        w = np.zeros(n_axons, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64).copy()
        if w.shape != (n_axons,):
            raise ValueError("weight row length must equal the axon count")
        return cls(
            u=0,
            bias=int(bias),
            weights=w,
            post_counter=COUNTER_MAX,
            pre_counters=np.full(n_axons, COUNTER_MAX, dtype=np.int64),
        )

    def copy(self) -> NeuronState:
        return NeuronState(self.u, self.bias, self.weights.copy(), self.post_counter, self.pre_counters.copy())


def _integrate(state: NeuronState, spikes: np.ndarray, scales: np.ndarray, counter) -> int:
    idx = np.flatnonzero(spikes)
    total = state.bias + state.u + int(np.sum(state.weights[idx] << scales[idx]))
    return sat_acc(total, counter)


def infer_if(state: NeuronState, spikes, cfg: NeuronConfig, scales, threshold: int | None = None,
             counter: SatCounter | None = None) -> bool:
    """u <- sat(bias + u + sum of scaled weights on spiking axons); fire and reset at threshold."""
    thr = cfg.threshold if threshold is None else threshold
    u = _integrate(state, spikes, scales, counter)
    if u >= thr:
        state.u = 0
        return True
    state.u = u
    return False


def infer_sif(state: NeuronState, spikes, cfg: NeuronConfig, scales, prng: Prng,
              counter: SatCounter | None = None) -> bool:
    thr = prng_uniform(prng, cfg.threshold_lo, cfg.threshold_hi)
    return infer_if(state, spikes, cfg, scales, threshold=thr, counter=counter)


def infer_relu(state: NeuronState, spikes, cfg: NeuronConfig, counter: SatCounter | None = None) -> bool:
    """Unweighted spike count on connected axons, at most one output spike per NEC.

    An axon is connected when its synaptic weight is nonzero.
    """
    n_in = int(np.count_nonzero(spikes & (state.weights != 0)))
    a = sat_acc(state.u + (n_in << FRAC_BITS), counter)
    if a >= cfg.threshold:
        state.u = a - cfg.threshold
        return True
    state.u = a
    return False


@dataclass(frozen=True)
class LearnEvent:
    kind: Kind
    axon: int  # BIAS for the bias term


@dataclass
class LearnEvents:
    """Events produced for one neuron in one NEC, grouped for vectorized application."""

    ltp: np.ndarray
    ltd: np.ndarray
    bias: Kind

    def __iter__(self):
        # ascending axon order, bias last
        kinds = np.concatenate([np.zeros(len(self.ltp), bool), np.ones(len(self.ltd), bool)])
        axons = np.concatenate([self.ltp, self.ltd])
        order = np.argsort(axons, kind="stable")
        for i in order:
            yield LearnEvent(Kind.LTD if kinds[i] else Kind.LTP, int(axons[i]))
        yield LearnEvent(self.bias, BIAS)

    def __len__(self):
        return len(self.ltp) + len(self.ltd) + 1


def advance_counters(fired: bool, spikes, state: NeuronState) -> None:
    state.post_counter = 0 if fired else min(state.post_counter + 1, COUNTER_MAX)
    state.pre_counters = np.where(spikes, 0, np.minimum(state.pre_counters + 1, COUNTER_MAX))


def classify_events(fired: bool, spikes, state: NeuronState, cfg: NeuronConfig) -> LearnEvents:
    """STDP tracker: decide LTP/LTD per axon, expire histories, then advance counters."""
    spikes = np.asarray(spikes, dtype=bool)
    plastic = np.ones(len(spikes), bool) if cfg.plastic is None else cfg.plastic
    if fired:
        # a pre spike in this very NEC counts as t_post - t_pre = 0
        recent = (state.pre_counters < cfg.tau_ltp) | spikes
        ltp_mask = plastic & recent
        ltd_mask = plastic & ~recent
        state.pre_counters = np.where(ltp_mask, COUNTER_MAX, state.pre_counters)
        bias_kind = Kind.LTP
    else:
        ltp_mask = np.zeros(len(spikes), bool)
        if state.post_counter < cfg.tau_ltd:
            ltd_mask = plastic & spikes
            if ltd_mask.any():
                state.post_counter = COUNTER_MAX
        else:
            ltd_mask = np.zeros(len(spikes), bool)
        bias_kind = Kind.LTD
    advance_counters(fired, spikes, state)
    return LearnEvents(np.flatnonzero(ltp_mask), np.flatnonzero(ltd_mask), bias_kind)


def q2ps_delta(w, kind: Kind, cfg: NeuronConfig):
    """Q2PS step magnitude: the largest power of two not exceeding |Q|, zero for Q == 0.

    Q is the distance to the log-rate target. The step lives in accumulator
    width, so |Q| up to 2^16 - 1 still yields an exact power of two.
    """
    if isinstance(w, np.ndarray):
        q = (cfg.eta_ltp_log - w.astype(np.int64)) if kind is Kind.LTP else (cfg.eta_ltd_log + w.astype(np.int64))
        return pow2_floor(np.abs(q))
    q = (cfg.eta_ltp_log - int(w)) if kind is Kind.LTP else (cfg.eta_ltd_log + int(w))
    sign, e = pow2_quantize(q)
    return 0 if sign == 0 else 1 << (e + FRAC_BITS)


def q2ps_apply(w, kind: Kind, cfg: NeuronConfig):
    """Q2PS update of a raw weight (int or int array): add the step for LTP, subtract it for LTD."""
    delta = q2ps_delta(w, kind, cfg)
    if isinstance(w, np.ndarray):
        w = w.astype(np.int64)
    return sat16(w + delta if kind is Kind.LTP else w - delta)


def bias_apply(state: NeuronState, fired: bool, cfg: NeuronConfig) -> None:
    state.bias = q2ps_apply(state.bias, Kind.LTP if fired else Kind.LTD, cfg)


def apply_events(state: NeuronState, events: LearnEvents, cfg: NeuronConfig) -> None:
    if len(events.ltp):
        state.weights[events.ltp] = q2ps_apply(state.weights[events.ltp], Kind.LTP, cfg)
    if len(events.ltd):
        state.weights[events.ltd] = q2ps_apply(state.weights[events.ltd], Kind.LTD, cfg)
    state.bias = q2ps_apply(state.bias, events.bias, cfg)


def evaluate(state: NeuronState, spikes, cfg: NeuronConfig, scales, prng: Prng,
             counter: SatCounter | None = None) -> bool:
    """Full per-NEC evaluation of one neuron: inference, then learning or counter upkeep."""
    if cfg.mode is Mode.SIF:
        fired = infer_sif(state, spikes, cfg, scales, prng, counter)
    elif cfg.mode is Mode.RELU:
        fired = infer_relu(state, spikes, cfg, counter)
    else:
        fired = infer_if(state, spikes, cfg, scales, counter=counter)
    if cfg.learning:
        apply_events(state, classify_events(fired, spikes, state, cfg), cfg)
    else:
        advance_counters(fired, spikes, state)
    return fired
