"""Prior-mesh fusion with RGB-D observations for 6D pose tracking and mesh refinement."""

__version__ = "0.1.0"
