"""Inference timing harness."""
