"""Optimizer, learning-rate schedule and the training loop."""
