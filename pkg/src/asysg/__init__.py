"""Asynchronous stochastic-gradient optimization: deterministic asynchrony simulators,
real multithreaded engines, and the matching steplength/condition/bound calculator."""

__version__ = "0.1.0"
