"""Gait-library-driven reinforcement learning for a planar five-link biped."""

__version__ = "0.1.0"
