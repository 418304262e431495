"""Lattice Yang-Mills with U(N) Wilson action: geometry, Lie algebra tools,
the U(1) x SU(N) decomposition, samplers, a conditional cluster expansion and
desk-scale experiments."""

__version__ = "0.1.0"
