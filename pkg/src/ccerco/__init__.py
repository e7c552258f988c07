"""Chance-constrained energy and reserve scheduling with wind curtailment caps."""

__version__ = "0.1.0"
