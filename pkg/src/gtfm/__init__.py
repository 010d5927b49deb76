"""Transfer function models for stress testing credit risk parameters."""

__version__ = "0.1.0"
