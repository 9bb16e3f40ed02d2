"""Mesh geometry and dimension-order (X then Y) routing.

The origin is the north-west corner; Y grows southward.
"""

from enum import IntEnum


class Port(IntEnum):
    N = 0
    S = 1
    E = 2
    W = 3
    L = 4


OPPOSITE = {Port.N: Port.S, Port.S: Port.N, Port.E: Port.W, Port.W: Port.E}

# A head flit sits HEAD_WAIT cycles in an input FIFO (FIFO out, route/arbitrate)
# before it can cross the switch; crossing onto a link costs LINK_DELAY more.
# Body flits leave one cycle after they arrive.
HEAD_WAIT = 2
LINK_DELAY = 1
HOP_CYCLES = HEAD_WAIT + LINK_DELAY
EJECT_CYCLES = HEAD_WAIT


def route_xy(current: tuple[int, int], dest: tuple[int, int]) -> Port:
    xc, yc = current
    xd, yd = dest
    if xd > xc:
        return Port.E
    if xd < xc:
        return Port.W
    if yd > yc:
        return Port.S
    if yd < yc:
        return Port.N
    return Port.L


def neighbor(coord: tuple[int, int], port: Port) -> tuple[int, int]:
    x, y = coord
    if port is Port.N:
        return (x, y - 1)
    if port is Port.S:
        return (x, y + 1)
    if port is Port.E:
        return (x + 1, y)
    if port is Port.W:
        return (x - 1, y)
    return coord


def hops(src: tuple[int, int], dst: tuple[int, int]) -> int:
    return abs(src[0] - dst[0]) + abs(src[1] - dst[1])


def min_hop_latency(n_hops: int, flits: int, depth: int | None = None) -> int:
    """Delivery latency of a lone packet, from offer at the source NI to tail at the destination NI.

    The head pays ``HOP_CYCLES`` per link and ``EJECT_CYCLES`` at the destination;
    the remaining flits follow one per cycle. A lone worm keeps two flits in each
    FIFO it crosses, so ``depth`` only matters below 3 flits, where the
    formula does not apply.
    """
    if n_hops < 1:
        raise ValueError("a routed packet crosses at least one link")
    if depth is not None and depth < 3:
        raise ValueError("lone-packet latency formula needs depth >= 3 flits")
    return HOP_CYCLES * n_hops + (flits - 1) + EJECT_CYCLES
