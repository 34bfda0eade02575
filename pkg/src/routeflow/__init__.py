"""Trajectory-aware animated transitions: bundled paths, packed group layouts, timed keyframes."""

__version__ = "0.1.0"
