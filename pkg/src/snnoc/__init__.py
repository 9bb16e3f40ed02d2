"""Cycle-level simulator of a mesh-connected spiking neural network with on-chip STDP."""

__version__ = "0.1.0"
