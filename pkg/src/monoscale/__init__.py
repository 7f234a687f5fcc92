"""Metric scale recovery for monocular trajectories from IMU measurements."""

__version__ = "0.1.0"
