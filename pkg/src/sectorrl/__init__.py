"""Sector-rotation reinforcement learning with hybrid quantum-classical policies."""

__version__ = "0.1.0"
