"""Desk-scale adversarial route manipulation against a landmark-conditioned
graph planner: toy encoder, synthetic worlds, attack, detector and metrics."""

__version__ = "0.1.0"
