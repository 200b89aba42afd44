"""Workload generators and the eager-vs-lazy benchmark harness."""
