"""Timestamped measurement records shared by the I/O, IMU and evaluation code."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import FrameId, FrameTag, as_rotation, as_vec3

SOURCES = ("monocular", "groundtruth", "inertial")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImuSample:
    """One gyroscope + accelerometer reading in the inertial frame.

    Attributes:
        timestamp_ns: Sample time in integer nanoseconds.
        gyro: Angular rate (3,) in rad/s.
        accel: Specific force (3,) in m/s^2.
    """

    timestamp_ns: int
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))
        object.__setattr__(self, "gyro", _frozen(as_vec3(self.gyro, "gyro")))
        object.__setattr__(self, "accel", _frozen(as_vec3(self.accel, "accel")))

    def __eq__(self, other):
        if not isinstance(other, ImuSample):
            return NotImplemented
        return (
            self.timestamp_ns == other.timestamp_ns
            and np.array_equal(self.gyro, other.gyro)
            and np.array_equal(self.accel, other.accel)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FramePose:
    """A timestamped camera (or body) pose.

    ``quaternion`` keeps the scalar-first quaternion a pose was read from, so
    writing it back reproduces the file exactly. ``velocity`` is only known for
    ground-truth streams that carry it.
    """

    timestamp_ns: int
    position: np.ndarray
    orientation: np.ndarray
    frame: FrameId = FrameId(FrameTag.W)
    source: str = "monocular"
    velocity: np.ndarray | None = None
    quaternion: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))
        object.__setattr__(self, "position", _frozen(as_vec3(self.position, "position")))
        object.__setattr__(self, "orientation", _frozen(as_rotation(self.orientation)))
        if self.source not in SOURCES:
            raise ValueError(f"unknown pose source {self.source!r}")
        if self.velocity is not None:
            object.__setattr__(self, "velocity", _frozen(as_vec3(self.velocity, "velocity")))
        if self.quaternion is not None:
            object.__setattr__(self, "quaternion", _frozen(self.quaternion))

    def __eq__(self, other):
        if not isinstance(other, FramePose):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (
            self.timestamp_ns == other.timestamp_ns
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.orientation, other.orientation)
            and self.frame == other.frame
            and self.source == other.source
            and same(self.velocity, other.velocity)
            and same(self.quaternion, other.quaternion)
        )

    __hash__ = None

    def replace(self, **changes) -> FramePose:
        return replace(self, **changes)


def positions_of(poses) -> np.ndarray:
    """Stack the positions of a pose sequence into an (n, 3) array."""
    if len(poses) == 0:
        return np.zeros((0, 3))
    return np.array([p.position for p in poses])


def timestamps_of(items) -> np.ndarray:
    return np.array([x.timestamp_ns for x in items], dtype=np.int64)
