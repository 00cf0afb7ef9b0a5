"""Decoding, scoring and gate-statistics analyses."""
