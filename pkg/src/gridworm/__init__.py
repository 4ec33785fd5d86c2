"""Deterministic testbed for adaptive migration of an iterative workload
across simulated grid resource cliques: matchmaking-based resource
selection, performance-contract monitoring, checkpoint/restart migration,
hibernation, and an operator control plane."""

__version__ = "0.1.0"
