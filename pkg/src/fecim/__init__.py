"""Behavioral simulator of a FeFET-based 2T1C charge-domain compute-in-memory macro."""

__version__ = "0.1.0"
