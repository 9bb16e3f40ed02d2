"""Array-based mesh engine compiled with numba.

Cycle-for-cycle the same machine as ``mesh.ReferenceMesh`` (same snapshot,
same arbitration order, same drop rule); the test suite checks the two
against each other on random traffic. Flit payload bits are not carried,
only (packet id, flit index), so flit tracing needs the reference engine.
"""

from __future__ import annotations

import numba
import numpy as np

from .mesh import Delivery, NocCounters
from .packet import AerPacket, flits_per_packet
from .routing import HEAD_WAIT, LINK_DELAY

# counter slots shared with the kernel
C_IN_NET = 0
C_PK_DELIVERED = 1
C_PK_DROPPED = 2
C_FL_DELIVERED = 3
C_FL_DROPPED = 4
C_CONT_EV = 5
C_BUF_EV = 6
C_CONT_CYC = 7
C_BUF_CYC = 8
C_WATCHDOG = 9
N_COUNTERS = 10

_OPP = np.array([1, 0, 3, 2], dtype=np.int64)


@numba.njit(cache=True)
def _advance(cycle, until, width, depth, nflits, drop_after, watchdog,
             nbr, f_pid, f_idx, f_arr, f_head, f_cnt, r_occ,
             in_lock, out_lock, rr,
             q, q_head, q_len, inj_sent, inj_fails,
             pk_dst, pk_issue, pk_deliver,
             cnt, del_pid, del_cyc):
    n_r = nbr.shape[0]
    qcap = q.shape[1]
    free = np.empty((n_r, 5), dtype=np.int64)
    down = np.empty(5, dtype=np.int64)
    used = np.empty(5, dtype=np.bool_)
    req = np.empty(5, dtype=np.int64)
    max_push = n_r * 5 + n_r
    p_r = np.empty(max_push, dtype=np.int64)
    p_p = np.empty(max_push, dtype=np.int64)
    p_pid = np.empty(max_push, dtype=np.int64)
    p_idx = np.empty(max_push, dtype=np.int64)
    p_arr = np.empty(max_push, dtype=np.int64)
    n_del = 0
    c = cycle
    while c < until:
        if cnt[C_IN_NET] == 0:
            nxt = until
            for r in range(n_r):
                if q_len[r] > 0:
                    t = pk_issue[q[r, q_head[r]]]
                    if t < nxt:
                        nxt = t
            if nxt > c:
                c = nxt
                continue

        for r in range(n_r):
            for p in range(5):
                free[r, p] = depth - f_cnt[r, p]
        npush = 0

        # network interfaces inject
        for r in range(n_r):
            if q_len[r] == 0:
                continue
            pid = q[r, q_head[r]]
            if pk_issue[pid] > c:
                continue
            if free[r, 4] > 0:
                p_r[npush] = r
                p_p[npush] = 4
                p_pid[npush] = pid
                p_idx[npush] = inj_sent[r]
                p_arr[npush] = c
                npush += 1
                inj_sent[r] += 1
                if inj_sent[r] == nflits:
                    q_head[r] = (q_head[r] + 1) % qcap
                    q_len[r] -= 1
                    inj_sent[r] = 0
                    inj_fails[r] = 0
            elif inj_sent[r] == 0:
                inj_fails[r] += 1
                if inj_fails[r] >= drop_after:
                    q_head[r] = (q_head[r] + 1) % qcap
                    q_len[r] -= 1
                    inj_fails[r] = 0
                    cnt[C_PK_DROPPED] += 1
                    cnt[C_FL_DROPPED] += nflits
                    pk_deliver[pid] = -2

        contention = False
        buffer = False
        for r in range(n_r):
            if r_occ[r] == 0:
                continue
            for o in range(4):
                nb = nbr[r, o]
                down[o] = free[nb, _OPP[o]] if nb >= 0 else 0
            down[4] = 1 << 30
            for o in range(5):
                used[o] = False

            for i in range(5):
                o = in_lock[r, i]
                if o < 0 or f_cnt[r, i] == 0:
                    continue
                h = f_head[r, i]
                idx = f_idx[r, i, h]
                wait = HEAD_WAIT if idx == 0 else 1
                if c < f_arr[r, i, h] + wait:
                    continue
                if down[o] <= 0:
                    cnt[C_BUF_EV] += 1
                    buffer = True
                    continue
                pid = f_pid[r, i, h]
                f_head[r, i] = (h + 1) % depth
                f_cnt[r, i] -= 1
                r_occ[r] -= 1
                used[o] = True
                if idx == nflits - 1:
                    in_lock[r, i] = -1
                    out_lock[r, o] = -1
                if o == 4:
                    cnt[C_IN_NET] -= 1
                    cnt[C_FL_DELIVERED] += 1
                    if idx == nflits - 1:
                        cnt[C_PK_DELIVERED] += 1
                        pk_deliver[pid] = c
                        del_pid[n_del] = pid
                        del_cyc[n_del] = c
                        n_del += 1
                        if watchdog >= 0 and c - pk_issue[pid] > watchdog:
                            cnt[C_WATCHDOG] += 1
                else:
                    p_r[npush] = nbr[r, o]
                    p_p[npush] = _OPP[o]
                    p_pid[npush] = pid
                    p_idx[npush] = idx
                    p_arr[npush] = c + LINK_DELAY
                    npush += 1

            for i in range(5):
                req[i] = -1
                if in_lock[r, i] >= 0 or f_cnt[r, i] == 0:
                    continue
                h = f_head[r, i]
                if c < f_arr[r, i, h] + HEAD_WAIT:
                    continue
                dst = pk_dst[f_pid[r, i, h]]
                xr, yr = r % width, r // width
                xd, yd = dst % width, dst // width
                if xd > xr:
                    req[i] = 2
                elif xd < xr:
                    req[i] = 3
                elif yd > yr:
                    req[i] = 1
                elif yd < yr:
                    req[i] = 0
                else:
                    req[i] = 4

            for o in range(5):
                nreq = 0
                for i in range(5):
                    if req[i] == o:
                        nreq += 1
                if nreq == 0:
                    continue
                if out_lock[r, o] >= 0 or used[o]:
                    cnt[C_CONT_EV] += nreq
                    contention = True
                    continue
                g = -1
                best = 99
                for i in range(5):
                    if req[i] == o:
                        d = (i - rr[r, o]) % 5
                        if d < best:
                            best = d
                            g = i
                if nreq > 1:
                    cnt[C_CONT_EV] += nreq - 1
                    contention = True
                in_lock[r, g] = o
                out_lock[r, o] = g
                rr[r, o] = (g + 1) % 5
                if down[o] <= 0:
                    cnt[C_BUF_EV] += 1
                    buffer = True
                    continue
                h = f_head[r, g]
                pid = f_pid[r, g, h]
                f_head[r, g] = (h + 1) % depth
                f_cnt[r, g] -= 1
                r_occ[r] -= 1
                used[o] = True
                if o == 4:
                    cnt[C_IN_NET] -= 1
                    cnt[C_FL_DELIVERED] += 1
                else:
                    p_r[npush] = nbr[r, o]
                    p_p[npush] = _OPP[o]
                    p_pid[npush] = pid
                    p_idx[npush] = 0
                    p_arr[npush] = c + LINK_DELAY
                    npush += 1

        for k in range(npush):
            r = p_r[k]
            p = p_p[k]
            slot = (f_head[r, p] + f_cnt[r, p]) % depth
            f_pid[r, p, slot] = p_pid[k]
            f_idx[r, p, slot] = p_idx[k]
            f_arr[r, p, slot] = p_arr[k]
            f_cnt[r, p] += 1
            r_occ[r] += 1
            if p == 4 and p_arr[k] == c:
                cnt[C_IN_NET] += 1
        if contention:
            cnt[C_CONT_CYC] += 1
        if buffer:
            cnt[C_BUF_CYC] += 1
        c += 1
    return c, n_del


class FastMesh:
    """Same interface as ``ReferenceMesh`` (offer / advance / stats), compiled kernel inside."""

    def __init__(self, width: int, height: int, depth: int, n_axons: int, drop_after: int,
                 watchdog: int | None = None):
        if depth < 1:
            raise ValueError("buffer depth must be >= 1 flit")
        self.width, self.height, self.depth = width, height, depth
        self.n_axons = n_axons
        self.nflits = flits_per_packet(n_axons)
        self.drop_after = drop_after
        self.watchdog_limit = -1 if watchdog is None else watchdog
        self.cycle = 0
        n_r = width * height
        self.nbr = np.full((n_r, 4), -1, dtype=np.int64)
        for y in range(height):
            for x in range(width):
                r = y * width + x
                if y > 0:
                    self.nbr[r, 0] = r - width
                if y < height - 1:
                    self.nbr[r, 1] = r + width
                if x < width - 1:
                    self.nbr[r, 2] = r + 1
                if x > 0:
                    self.nbr[r, 3] = r - 1
        self.f_pid = np.zeros((n_r, 5, depth), dtype=np.int64)
        self.f_idx = np.zeros((n_r, 5, depth), dtype=np.int64)
        self.f_arr = np.zeros((n_r, 5, depth), dtype=np.int64)
        self.f_head = np.zeros((n_r, 5), dtype=np.int64)
        self.f_cnt = np.zeros((n_r, 5), dtype=np.int64)
        self.r_occ = np.zeros(n_r, dtype=np.int64)
        self.in_lock = np.full((n_r, 5), -1, dtype=np.int64)
        self.out_lock = np.full((n_r, 5), -1, dtype=np.int64)
        self.rr = np.zeros((n_r, 5), dtype=np.int64)
        self.q = np.zeros((n_r, 64), dtype=np.int64)
        self.q_head = np.zeros(n_r, dtype=np.int64)
        self.q_len = np.zeros(n_r, dtype=np.int64)
        self.inj_sent = np.zeros(n_r, dtype=np.int64)
        self.inj_fails = np.zeros(n_r, dtype=np.int64)
        self._cap = 0
        self._n = 0
        self.pk_src = np.zeros(0, dtype=np.int64)
        self.pk_dst = np.zeros(0, dtype=np.int64)
        self.pk_axon = np.zeros(0, dtype=np.int64)
        self.pk_ext = np.zeros(0, dtype=np.int64)
        self.pk_issue = np.zeros(0, dtype=np.int64)
        self.pk_deliver = np.zeros(0, dtype=np.int64)
        self.cnt = np.zeros(N_COUNTERS, dtype=np.int64)
        self._pending: list[np.ndarray] = []
        self._offered = 0
        self.latency_stats = NocCounters().latency

    def _rid(self, coord) -> int:
        x, y = coord
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"coordinate {coord} outside the {self.width}x{self.height} mesh")
        return y * self.width + x

    def offer(self, packet: AerPacket) -> int:
        if packet.src is None or packet.inject_cycle is None:
            raise ValueError("offered packets need src and inject_cycle")
        if packet.src == packet.dest:
            raise ValueError("local traffic bypasses the NoC")
        pid = self._offered
        self._offered += 1
        self._pending.append(np.array([[self._rid(packet.src), self._rid(packet.dest), packet.axon, packet.ext,
                                        packet.inject_cycle]], dtype=np.int64))
        return pid

    def offer_many(self, src_xy, dst_xy, axon, ext, issue) -> None:
        """Bulk ``offer``. Coordinates are (n, 2) arrays; packets keep array order within a source."""
        src_xy = np.asarray(src_xy, dtype=np.int64).reshape(-1, 2)
        dst_xy = np.asarray(dst_xy, dtype=np.int64).reshape(-1, 2)
        n = len(src_xy)
        if n == 0:
            return
        for a in (src_xy, dst_xy):
            if (a < 0).any() or (a[:, 0] >= self.width).any() or (a[:, 1] >= self.height).any():
                raise ValueError("packet coordinate outside the mesh")
        src = src_xy[:, 1] * self.width + src_xy[:, 0]
        dst = dst_xy[:, 1] * self.width + dst_xy[:, 0]
        if (src == dst).any():
            raise ValueError("local traffic bypasses the NoC")
        rows = np.empty((n, 5), dtype=np.int64)
        rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4] = src, dst, axon, ext, issue
        self._pending.append(rows)
        self._offered += n

    def _grow_packets(self, need: int) -> None:
        if need <= self._cap:
            return
        cap = max(need, 2 * self._cap, 1024)
        for name in ("pk_src", "pk_dst", "pk_axon", "pk_ext", "pk_issue", "pk_deliver"):
            old = getattr(self, name)
            new = np.full(cap, -1, dtype=np.int64)
            new[: len(old)] = old
            setattr(self, name, new)
        self._cap = cap

    def _grow_queues(self, need: int) -> None:
        cap = self.q.shape[1]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        q = np.zeros((self.q.shape[0], new_cap), dtype=np.int64)
        for r in range(self.q.shape[0]):
            n = self.q_len[r]
            idx = (self.q_head[r] + np.arange(n)) % cap
            q[r, :n] = self.q[r, idx]
        self.q = q
        self.q_head[:] = 0

    def _flush(self) -> None:
        if not self._pending:
            return
        arr = np.concatenate(self._pending)
        self._pending.clear()
        n0, n = self._n, len(arr)
        self._grow_packets(n0 + n)
        sl = slice(n0, n0 + n)
        self.pk_src[sl], self.pk_dst[sl], self.pk_axon[sl], self.pk_ext[sl], self.pk_issue[sl] = arr.T
        self.pk_deliver[sl] = -1
        self._n += n
        per_src = np.bincount(arr[:, 0], minlength=len(self.q_len))
        self._grow_queues(int((self.q_len + per_src).max()))
        cap = self.q.shape[1]
        for k, src in enumerate(arr[:, 0]):
            slot = (self.q_head[src] + self.q_len[src]) % cap
            self.q[src, slot] = n0 + k
            self.q_len[src] += 1

    def advance(self, until: int) -> list[Delivery]:
        pids, cycles = self._run(until)
        w = self.width
        out = []
        for pid, cyc in zip(pids.tolist(), cycles.tolist()):
            src, dst = int(self.pk_src[pid]), int(self.pk_dst[pid])
            pkt = AerPacket(dst % w, dst // w, int(self.pk_axon[pid]), int(self.pk_ext[pid]),
                            (src % w, src // w), int(self.pk_issue[pid]))
            out.append(Delivery(pid, cyc, pkt))
        return out

    def advance_arrays(self, until: int):
        """Like ``advance`` but returns (dest_x, dest_y, axon, ext) arrays of delivered packets."""
        pids, _ = self._run(until)
        dst = self.pk_dst[pids]
        return dst % self.width, dst // self.width, self.pk_axon[pids], self.pk_ext[pids]

    def _run(self, until: int):
        self._flush()
        outstanding = self._n - int(self.cnt[C_PK_DELIVERED]) - int(self.cnt[C_PK_DROPPED])
        del_pid = np.empty(max(outstanding, 1), dtype=np.int64)
        del_cyc = np.empty(max(outstanding, 1), dtype=np.int64)
        self.cycle, n_del = _advance(
            self.cycle, until, self.width, self.depth, self.nflits, self.drop_after, self.watchdog_limit,
            self.nbr, self.f_pid, self.f_idx, self.f_arr, self.f_head, self.f_cnt, self.r_occ,
            self.in_lock, self.out_lock, self.rr,
            self.q, self.q_head, self.q_len, self.inj_sent, self.inj_fails,
            self.pk_dst, self.pk_issue, self.pk_deliver,
            self.cnt, del_pid, del_cyc)
        pids, cycles = del_pid[:n_del], del_cyc[:n_del]
        self.latency_stats.add_many(cycles - self.pk_issue[pids])
        return pids, cycles

    @property
    def stats(self) -> NocCounters:
        c = self.cnt
        return NocCounters(
            packets_offered=self._offered,
            packets_delivered=int(c[C_PK_DELIVERED]),
            packets_dropped=int(c[C_PK_DROPPED]),
            flits_offered=self._offered * self.nflits,
            flits_delivered=int(c[C_FL_DELIVERED]),
            flits_dropped=int(c[C_FL_DROPPED]),
            contention_events=int(c[C_CONT_EV]),
            buffer_events=int(c[C_BUF_EV]),
            contention_cycles=int(c[C_CONT_CYC]),
            buffer_cycles=int(c[C_BUF_CYC]),
            watchdog=int(c[C_WATCHDOG]),
            latency=self.latency_stats,
        )

    def flits_in_network(self) -> int:
        return int(self.f_cnt.sum())

    def pending_flits(self) -> int:
        return int(self.q_len.sum()) * self.nflits - int(self.inj_sent.sum()) + sum(len(a) for a in self._pending) * self.nflits

    def check_conservation(self) -> None:
        s = self.stats
        in_flight = self.flits_in_network() + self.pending_flits()
        if s.flits_offered != s.flits_delivered + s.flits_dropped + in_flight:
            raise AssertionError(
                f"flit conservation violated: offered {s.flits_offered} != delivered {s.flits_delivered}"
                f" + dropped {s.flits_dropped} + in flight {in_flight}")
