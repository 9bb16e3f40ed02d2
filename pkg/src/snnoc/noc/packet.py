"""AER spike packets and their 4-bit flit serialization.

Wire order: dest_x, dest_y, axon nibbles MSB-first, ext. Only the nibbles go
on the wire; source and timing are simulation metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

FLIT_BITS = 4
FLIT_MASK = 0xF
EXT_CONTINUE = 0x8


class MalformedPacket(ValueError):
    pass


def axon_bits(n_axons: int) -> int:
    if n_axons < 1 or n_axons & (n_axons - 1):
        raise ValueError(f"axon count must be a power of two, got {n_axons}")
    return n_axons.bit_length() - 1


def axon_nibbles(n_axons: int) -> int:
    return -(-axon_bits(n_axons) // FLIT_BITS)


def flits_per_packet(n_axons: int) -> int:
    return 2 + axon_nibbles(n_axons) + 1


@dataclass(slots=True)
class AerPacket:
    dest_x: int
    dest_y: int
    axon: int
    ext: int = 0
    src: tuple[int, int] | None = None
    inject_cycle: int | None = None

    @property
    def continue_bit(self) -> bool:
        return bool(self.ext & EXT_CONTINUE)

    @property
    def dest(self) -> tuple[int, int]:
        return (self.dest_x, self.dest_y)


def encode_packet(p: AerPacket, n_axons: int) -> list[int]:
    n_nib = axon_nibbles(n_axons)
    for name, v, bits in (("dest_x", p.dest_x, 4), ("dest_y", p.dest_y, 4), ("ext", p.ext, 4),
                          ("axon", p.axon, axon_bits(n_axons))):
        if not 0 <= v < (1 << bits):
            raise ValueError(f"{name}={v} does not fit in {bits} bits")
    body = [(p.axon >> (FLIT_BITS * k)) & FLIT_MASK for k in reversed(range(n_nib))]
    return [p.dest_x, p.dest_y, *body, p.ext]


def decode_packet(flits: list[int], n_axons: int) -> AerPacket:
    expected = flits_per_packet(n_axons)
    if len(flits) != expected:
        raise MalformedPacket(f"expected {expected} flits, got {len(flits)}")
    axon = 0
    for nib in flits[2:-1]:
        axon = (axon << FLIT_BITS) | (nib & FLIT_MASK)
    return AerPacket(flits[0] & FLIT_MASK, flits[1] & FLIT_MASK, axon, flits[-1] & FLIT_MASK)
