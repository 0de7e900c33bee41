"""Iterated semi Bayes-net games solved by level-K reinforcement learning,
with a three-node SCADA voltage-control battle as the bundled scenario."""

__version__ = "0.1.0"
