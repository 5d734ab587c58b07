"""Deterministic simulator for distributed dynamic associative memory."""

from ddam_sim.errors import DdamError

__all__ = ["DdamError"]
