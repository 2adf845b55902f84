"""Deep hurdle network for zero-inflated multi-target regression."""

__version__ = "0.1.0"
