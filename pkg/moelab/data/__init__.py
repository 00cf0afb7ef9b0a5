"""Synthetic multi-domain corpora, sampling, randomization and corpus files."""
