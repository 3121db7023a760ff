"""Automated auxiliary-loss search for reinforcement learning."""

__version__ = "0.1.0"
