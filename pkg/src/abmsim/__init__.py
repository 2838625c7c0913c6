"""Continuous-time statechart agent-based simulation with varicella and pertussis packs."""

__version__ = "0.1.0"
