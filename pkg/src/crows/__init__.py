"""Row-constrained supersaturated designs for pooled screening."""

__version__ = "0.1.0"
