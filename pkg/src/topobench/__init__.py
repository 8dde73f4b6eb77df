"""Benchmark harness for six structural topology-optimisation methods."""
