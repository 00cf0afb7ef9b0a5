"""Encoder-decoder assembly, domain schema and checkpoints."""
