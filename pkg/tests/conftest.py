"""Keeps the tests directory importable (shared strategies module)."""
