"""Prometheus metrics for search runs, exported as a text file."""
