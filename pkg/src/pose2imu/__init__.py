"""Pose-to-accelerometer synthesis trained jointly with an activity classifier."""

__version__ = "0.1.0"
