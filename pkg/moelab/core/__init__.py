"""Errors, logging, metrics and validated configuration models."""
