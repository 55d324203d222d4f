"""Calculator server speaking the periopt-calc newline-JSON protocol."""

__version__ = "0.1.0"
