"""Trace-driven compute-in-memory offload analysis and energy/performance estimation."""

__version__ = "0.1.0"
