"""Bit-accurate emulation of approximate radix-8 Booth FP32 multipliers,
their error and cost characterisation, and CNN inference / NSGA-II search
over per-slot multiplier assignments."""

__version__ = "0.1.0"
