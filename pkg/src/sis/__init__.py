"""Average sampling and reconstruction in shift-invariant spaces."""

__version__ = "0.1.0"
