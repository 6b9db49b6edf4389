"""Simulator and MILP-based policy suite for dynamic relief-supply allocation."""

__version__ = "0.1.0"
