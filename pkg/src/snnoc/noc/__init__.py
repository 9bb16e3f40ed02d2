"""Flit-level 2-D mesh network-on-chip."""

from .fastmesh import FastMesh
from .mesh import (
    Congestion,
    CongestionEvent,
    Delivery,
    LatencyStats,
    NocCounters,
    ReferenceMesh,
    Router,
    collect_latency,
    router_tick,
)
from .packet import AerPacket, MalformedPacket, decode_packet, encode_packet, flits_per_packet
from .routing import Port, hops, min_hop_latency, route_xy

__all__ = [
    "AerPacket", "Congestion", "CongestionEvent", "Delivery", "FastMesh", "LatencyStats",
    "MalformedPacket", "NocCounters", "Port", "ReferenceMesh", "Router", "collect_latency",
    "decode_packet", "encode_packet", "flits_per_packet", "hops", "min_hop_latency",
    "route_xy", "router_tick",
]
