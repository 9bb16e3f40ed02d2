"""Reference flit-level mesh: readable routers, two-phase global cycles, flit tracing.

Every cycle first snapshots FIFO occupancy, then lets each network interface
inject and each router tick against that snapshot, then commits all moved
flits. Results do not depend on router iteration order.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .packet import AerPacket, decode_packet, encode_packet, flits_per_packet
from .routing import HEAD_WAIT, LINK_DELAY, OPPOSITE, Port, neighbor, route_xy

UNLIMITED = 1 << 30


class Congestion(enum.Enum):
    CONTENTION = "contention"
    BUFFER = "buffer"


@dataclass(frozen=True, slots=True)
class CongestionEvent:
    cycle: int
    kind: Congestion
    router: tuple[int, int]
    port: Port


@dataclass(slots=True)
class Flit:
    bits: int
    pid: int
    index: int
    is_head: bool
    is_tail: bool
    dest: tuple[int, int]  # decoded header, travels with the head
    arrive: int = 0

    def ready(self, cycle: int) -> bool:
        return cycle >= self.arrive + (HEAD_WAIT if self.is_head else 1)


class Router:
    """Five input FIFOs, wormhole locks and a round-robin pointer per output."""

    def __init__(self, coord: tuple[int, int], depth: int):
        self.coord = coord
        self.depth = depth
        self.fifos = [deque() for _ in Port]
        self.in_lock: list[Port | None] = [None] * 5
        self.out_lock: list[int | None] = [None] * 5
        self.rr = [0] * 5

    def occupancy(self) -> int:
        return sum(len(f) for f in self.fifos)

    def free(self, port: Port) -> int:
        return self.depth - len(self.fifos[port])


def router_tick(r: Router, cycle: int, downstream_free: list[int]):
    """Advance one router by one cycle.

    ``downstream_free[o]`` is the free space (in flits) behind output ``o`` as
    of the start of the cycle. Returns ``(moves, events)`` where moves are
    ``(in_port, out_port, flit)`` triples; the caller delivers the flits.
    """
    moves = []
    events = []
    used = [False] * 5

    # established worms: one flit per locked input
    for i in Port:
        o = r.in_lock[i]
        if o is None or not r.fifos[i]:
            continue
        f = r.fifos[i][0]
        if not f.ready(cycle):
            continue
        if downstream_free[o] <= 0:
            events.append(CongestionEvent(cycle, Congestion.BUFFER, r.coord, o))
            continue
        r.fifos[i].popleft()
        used[o] = True
        moves.append((i, o, f))
        if f.is_tail:
            r.in_lock[i] = None
            r.out_lock[o] = None

    # new heads request an output
    requests: dict[Port, list[Port]] = {}
    for i in Port:
        if r.in_lock[i] is not None or not r.fifos[i]:
            continue
        f = r.fifos[i][0]
        assert f.is_head, "body flit without a path reservation"
        if not f.ready(cycle):
            continue
        requests.setdefault(route_xy(r.coord, f.dest), []).append(i)

    for o in sorted(requests):
        reqs = requests[o]
        if r.out_lock[o] is not None or used[o]:
            events.extend(CongestionEvent(cycle, Congestion.CONTENTION, r.coord, o) for _ in reqs)
            continue
        g = min(reqs, key=lambda i: (i - r.rr[o]) % 5)
        events.extend(CongestionEvent(cycle, Congestion.CONTENTION, r.coord, o) for i in reqs if i != g)
        r.in_lock[g] = o
        r.out_lock[o] = g
        r.rr[o] = (g + 1) % 5
        if downstream_free[o] <= 0:
            events.append(CongestionEvent(cycle, Congestion.BUFFER, r.coord, o))
            continue
        f = r.fifos[g].popleft()
        used[o] = True
        moves.append((g, o, f))
        if f.is_tail:
            r.in_lock[g] = None
            r.out_lock[o] = None
    return moves, events


class LatencyStats:
    """Exact running min / mean / max over integer packet latencies."""

    def __init__(self):
        self.n = 0
        self.total = 0
        self.min: int | None = None
        self.max: int | None = None

    def add(self, lat: int) -> None:
        self.n += 1
        self.total += lat
        self.min = lat if self.min is None else min(self.min, lat)
        self.max = lat if self.max is None else max(self.max, lat)

    def add_many(self, lats: np.ndarray) -> None:
        if len(lats) == 0:
            return
        self.n += len(lats)
        self.total += int(lats.sum())
        lo, hi = int(lats.min()), int(lats.max())
        self.min = lo if self.min is None else min(self.min, lo)
        self.max = hi if self.max is None else max(self.max, hi)

    def summary(self) -> tuple[int | None, float | None, int | None]:
        if self.n == 0:
            return None, None, None
        return self.min, self.total / self.n, self.max


def collect_latency(latencies) -> tuple[int | None, float | None, int | None]:
    """(min, avg, max) of a latency stream; all None when nothing was delivered."""
    acc = LatencyStats()
    for lat in latencies:
        acc.add(int(lat))
    return acc.summary()


@dataclass
class NocCounters:
    packets_offered: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    flits_offered: int = 0
    flits_delivered: int = 0
    flits_dropped: int = 0
    contention_events: int = 0
    buffer_events: int = 0
    contention_cycles: int = 0
    buffer_cycles: int = 0
    watchdog: int = 0
    malformed: int = 0
    latency: LatencyStats = field(default_factory=LatencyStats)


@dataclass(slots=True)
class Delivery:
    pid: int
    cycle: int
    packet: AerPacket


class _SourceNI:
    __slots__ = ("queue", "flits", "sent", "fails")

    def __init__(self):
        self.queue: deque[int] = deque()
        self.flits: list[Flit] | None = None
        self.sent = 0
        self.fails = 0


class ReferenceMesh:
    """Pure-Python mesh engine. Slow, but traceable and easy to audit."""

    def __init__(self, width: int, height: int, depth: int, n_axons: int, drop_after: int,
                 watchdog: int | None = None, trace=None):
        if depth < 1:
            raise ValueError("buffer depth must be >= 1 flit")
        self.width, self.height, self.depth = width, height, depth
        self.n_axons = n_axons
        self.drop_after = drop_after
        self.watchdog_limit = watchdog
        self.trace = trace
        self.cycle = 0
        self.routers = {(x, y): Router((x, y), depth) for y in range(height) for x in range(width)}
        self.sources = {c: _SourceNI() for c in self.routers}
        self.rx = {c: [] for c in self.routers}  # flits received by each destination NI
        self.packets: list[AerPacket] = []
        self.in_network = 0
        self.stats = NocCounters()
        self.events: list[CongestionEvent] = []
        self.keep_events = False

    # --- injection side ---------------------------------------------------
    def offer(self, packet: AerPacket) -> int:
        if packet.src is None or packet.inject_cycle is None:
            raise ValueError("offered packets need src and inject_cycle")
        if packet.src == packet.dest:
            raise ValueError("local traffic bypasses the NoC")
        pid = len(self.packets)
        self.packets.append(packet)
        self.sources[packet.src].queue.append(pid)
        self.stats.packets_offered += 1
        self.stats.flits_offered += flits_per_packet(self.n_axons)
        return pid

    def _make_flits(self, pid: int) -> list[Flit]:
        p = self.packets[pid]
        nibbles = encode_packet(p, self.n_axons)
        last = len(nibbles) - 1
        return [Flit(b, pid, k, k == 0, k == last, p.dest) for k, b in enumerate(nibbles)]

    def _inject(self, coord, ni: _SourceNI, cycle: int, free: int, pushes: list) -> None:
        if not ni.queue:
            return
        pid = ni.queue[0]
        if self.packets[pid].inject_cycle > cycle:
            return
        if ni.flits is None:
            ni.flits, ni.sent, ni.fails = self._make_flits(pid), 0, 0
        if free > 0:
            f = ni.flits[ni.sent]
            f.arrive = cycle
            pushes.append((coord, Port.L, f))
            ni.sent += 1
            if ni.sent == len(ni.flits):
                ni.queue.popleft()
                ni.flits = None
            return
        if ni.sent == 0:
            ni.fails += 1
            if ni.fails >= self.drop_after:
                ni.queue.popleft()
                ni.flits = None
                self.stats.packets_dropped += 1
                self.stats.flits_dropped += flits_per_packet(self.n_axons)

    def pending_flits(self) -> int:
        """Flits offered but not yet pushed into a router."""
        f = flits_per_packet(self.n_axons)
        total = 0
        for ni in self.sources.values():
            total += len(ni.queue) * f
            if ni.flits is not None:
                total -= ni.sent
        return total

    def flits_in_network(self) -> int:
        return sum(r.occupancy() for r in self.routers.values())

    def idle(self) -> bool:
        return self.in_network == 0 and all(not ni.queue for ni in self.sources.values())

    # --- main loop ---------------------------------------------------------
    def step(self) -> list[Delivery]:
        c = self.cycle
        pushes = []
        delivered = []
        # free space as of the start of the cycle; pops during this cycle do not count
        free = {coord: [r.free(p) for p in Port] for coord, r in self.routers.items()}
        for coord, ni in self.sources.items():
            self._inject(coord, ni, c, free[coord][Port.L], pushes)

        contention = buffer = False
        for coord, r in self.routers.items():
            if r.occupancy() == 0:
                continue
            down = [UNLIMITED] * 5
            for o in (Port.N, Port.S, Port.E, Port.W):
                nb = free.get(neighbor(coord, o))
                down[o] = nb[OPPOSITE[o]] if nb is not None else 0
            moves, events = router_tick(r, c, down)
            for ev in events:
                if ev.kind is Congestion.CONTENTION:
                    contention = True
                    self.stats.contention_events += 1
                else:
                    buffer = True
                    self.stats.buffer_events += 1
            if self.keep_events:
                self.events.extend(events)
            for i, o, f in moves:
                if self.trace is not None:
                    self.trace.write(f"{c} {coord[0]} {coord[1]} {Port(i).name} {Port(o).name} {f.bits:x}\n")
                if o is Port.L:
                    self.in_network -= 1
                    d = self._eject(coord, f, c)
                    if d is not None:
                        delivered.append(d)
                else:
                    f.arrive = c + LINK_DELAY
                    pushes.append((neighbor(coord, o), OPPOSITE[o], f))
        for coord, port, f in pushes:
            fifo = self.routers[coord].fifos[port]
            assert len(fifo) < self.depth, "FIFO overflow"
            fifo.append(f)
            if port is Port.L:
                self.in_network += 1
        self.stats.contention_cycles += contention
        self.stats.buffer_cycles += buffer
        self.cycle += 1
        return delivered

    def _eject(self, coord, f: Flit, cycle: int) -> Delivery | None:
        buf = self.rx[coord]
        if buf and buf[-1].pid != f.pid:
            raise AssertionError("wormhole integrity violated at destination NI")
        if f.index != len(buf):
            raise AssertionError("flits out of order at destination NI")
        buf.append(f)
        self.stats.flits_delivered += 1
        if not f.is_tail:
            return None
        self.rx[coord] = []
        pkt = decode_packet([x.bits for x in buf], self.n_axons)
        orig = self.packets[f.pid]
        pkt.src, pkt.inject_cycle = orig.src, orig.inject_cycle
        lat = cycle - orig.inject_cycle
        self.stats.packets_delivered += 1
        self.stats.latency.add(lat)
        if self.watchdog_limit is not None and lat > self.watchdog_limit:
            self.stats.watchdog += 1
        return Delivery(f.pid, cycle, pkt)

    def advance(self, until: int) -> list[Delivery]:
        """Run cycles up to (not including) ``until``; idle stretches are skipped."""
        out = []
        while self.cycle < until:
            if self.idle():
                self.cycle = until
                break
            if self.in_network == 0:
                nxt = min((self.packets[ni.queue[0]].inject_cycle for ni in self.sources.values() if ni.queue),
                          default=until)
                if nxt > self.cycle:
                    self.cycle = min(nxt, until)
                    continue
            out.extend(self.step())
        return out

    def offer_many(self, src_xy, dst_xy, axon, ext, issue) -> None:
        for s, d, a, e, t in zip(np.asarray(src_xy).reshape(-1, 2).tolist(), np.asarray(dst_xy).reshape(-1, 2).tolist(),
                                 np.asarray(axon).tolist(), np.broadcast_to(ext, np.shape(axon)).tolist(),
                                 np.asarray(issue).tolist()):
            self.offer(AerPacket(d[0], d[1], a, e, tuple(s), t))

    def advance_arrays(self, until: int):
        got = self.advance(until)
        cols = [[d.packet.dest_x for d in got], [d.packet.dest_y for d in got],
                [d.packet.axon for d in got], [d.packet.ext for d in got]]
        return tuple(np.array(c, dtype=np.int64) for c in cols)

    def check_conservation(self) -> None:
        s = self.stats
        in_flight = self.flits_in_network() + self.pending_flits()
        if s.flits_offered != s.flits_delivered + s.flits_dropped + in_flight:
            raise AssertionError(
                f"flit conservation violated: offered {s.flits_offered} != delivered {s.flits_delivered}"
                f" + dropped {s.flits_dropped} + in flight {in_flight}")
