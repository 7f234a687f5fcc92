"""Euler-forward integration of IMU samples between two camera frames.

Biases are *added* to the raw measurements, ``(w + b_w)`` and ``(a + b_a)``,
and gravity is the reaction vector a level accelerometer reads at rest, so
``R a - g`` is the world-frame kinematic acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import FrameId, FrameTag, as_vec3, exp_so3
from .records import FramePose, ImuSample

DEFAULT_GRAVITY = (0.0, 0.0, 9.81)
BIAS_MODES = ("constant", "deterministic", "sampled")


@dataclass(frozen=True)
class BiasState:
    """Additive IMU biases and the variances driving their random walk."""

    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_var: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_var: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("accel_bias", "gyro_bias", "accel_var", "gyro_var"):
            arr = np.array(as_vec3(getattr(self, name), name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.accel_var < 0) or np.any(self.gyro_var < 0):
            raise InvalidInputError("bias variances must be nonnegative")


@dataclass(frozen=True, eq=False)
class FramePairWindow:
    """IMU samples in ``[t_i, t_j)`` plus the poses bounding them.

    Attributes:
        index: Index ``i`` of the first frame of the pair.
        start_pose: Pose of frame ``F_i`` in {W}.
        end_pose: Pose of frame ``F_j`` in {W}.
        samples: IMU samples with ``t_i <= t < t_j``.
        start_velocity: World-frame velocity at ``t_i`` (m/s).
        gravity: Gravity reaction vector in {W} (m/s^2).
        start_attitude: Body attitude ``R_WI`` at ``t_i``. Defaults to the
            start pose orientation.
        out_of_span: The pair is not fully covered by the IMU stream.
    """

    index: int
    start_pose: FramePose
    end_pose: FramePose
    samples: tuple[ImuSample, ...]
    start_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    start_attitude: np.ndarray | None = None
    out_of_span: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "start_velocity", as_vec3(self.start_velocity, "start_velocity"))
        object.__setattr__(self, "gravity", as_vec3(self.gravity, "gravity"))
        if self.end_pose.timestamp_ns <= self.start_pose.timestamp_ns:
            raise InvalidInputError("frame pair timestamps must be increasing")

    @property
    def empty(self) -> bool:
        return len(self.samples) == 0

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def attitude0(self) -> np.ndarray:
        if self.start_attitude is None:
            return self.start_pose.orientation
        return np.asarray(self.start_attitude, dtype=np.float64)

    @property
    def dt_ns(self) -> np.ndarray:
        """Per-sample step: gap to the next sample, or to ``t_j`` for the last."""
        ts = [s.timestamp_ns for s in self.samples] + [self.end_pose.timestamp_ns]
        return np.diff(np.array(ts, dtype=np.int64))

    @property
    def dts(self) -> np.ndarray:
        return self.dt_ns * 1e-9

    @property
    def uniform(self) -> bool:
        d = self.dt_ns
        return d.size > 0 and bool(np.all(d == d[0]))

    @property
    def dt(self) -> float:
        """Step size in seconds; the mean step when timestamps are non-uniform."""
        return float(np.mean(self.dts))

    @property
    def gyro(self) -> np.ndarray:
        return np.array([s.gyro for s in self.samples]).reshape(-1, 3)

    @property
    def accel(self) -> np.ndarray:
        return np.array([s.accel for s in self.samples]).reshape(-1, 3)

    def with_state(self, **changes) -> FramePairWindow:
        return replace(self, **changes)


@dataclass(frozen=True)
class InertialDelta:
    """Rotation, velocity change and translation accumulated over one window."""

    rotation: np.ndarray
    velocity_delta: np.ndarray
    translation: np.ndarray


def _require_samples(window: FramePairWindow):
    if window.empty:
        raise InvalidInputError(f"window {window.index} has no IMU samples")


def rotation_increments(window: FramePairWindow, bias: BiasState) -> list[np.ndarray]:
    """``exp((w(p) + b_w) dT_p)`` for each sample of the window."""
    _require_samples(window)
    rates = window.gyro + bias.gyro_bias
    return [exp_so3(w * dt) for w, dt in zip(rates, window.dts)]


def integrate_rotation(window: FramePairWindow, bias: BiasState) -> np.ndarray:
    """Relative rotation from frame i to frame j.

    Increments are right-multiplied in increasing time order.
    """
    R = np.eye(3)
    for dR in rotation_increments(window, bias):
        R = R @ dR
    return R


def attitudes(window: FramePairWindow, bias: BiasState) -> np.ndarray:
    """Body attitude ``R_WI`` at each sample, shape (N, 3, 3).

    The first entry is the start attitude; each later one appends the gyro
    increment of the preceding sample.
    """
    incs = rotation_increments(window, bias)
    out = np.empty((len(incs), 3, 3))
    R = window.attitude0
    for p, dR in enumerate(incs):
        out[p] = R
        R = R @ dR
    return out


def _world_accel(window, bias, atts) -> np.ndarray:
    _require_samples(window)
    atts = np.asarray(atts, dtype=np.float64)
    if atts.shape != (window.n, 3, 3):
        raise InvalidInputError(
            f"expected {window.n} attitudes, got array of shape {atts.shape}"
        )
    return np.einsum("nij,nj->ni", atts, window.accel + bias.accel_bias) - window.gravity


def integrate_velocity(window: FramePairWindow, bias: BiasState, atts) -> np.ndarray:
    """Velocity change ``sum_p (R_p (a(p) + b_a) - g) dT_p``."""
    acc = _world_accel(window, bias, atts)
    return np.sum(acc * window.dts[:, None], axis=0)


def integrate_translation(window: FramePairWindow, bias: BiasState, atts) -> np.ndarray:
    """Translation over the window in {W}.

    Uniform steps use the closed weighted sum
    ``N v dT + 1/2 sum_p (2(N-1-p)+1) f_p dT^2``; otherwise the equivalent
    per-step recursion is run with each sample's own step.
    """
    acc = _world_accel(window, bias, atts)
    v0 = window.start_velocity
    n = window.n
    if window.uniform:
        dt = window.dts[0]
        weights = 2.0 * (n - 1 - np.arange(n)) + 1.0
        return n * v0 * dt + 0.5 * (weights @ acc) * dt * dt
    t = np.zeros(3)
    v = v0.copy()
    for a, dt in zip(acc, window.dts):
        t = t + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
    return t


def integrate_window(window: FramePairWindow, bias: BiasState) -> InertialDelta:
    atts = attitudes(window, bias)
    return InertialDelta(
        rotation=integrate_rotation(window, bias),
        velocity_delta=integrate_velocity(window, bias, atts),
        translation=integrate_translation(window, bias, atts),
    )


def propagate_bias(
    bias: BiasState,
    dt: float,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> BiasState:
    """Advance the bias random walk by ``dt`` seconds.

    ``deterministic`` adds ``dt * var`` on every call. ``sampled`` adds a
    zero-mean Gaussian increment with per-axis variance ``var * dt`` and needs
    ``rng``. ``constant`` returns the state unchanged.
    """
    if dt <= 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if mode == "constant":
        return bias
    if mode == "deterministic":
        return replace(
            bias,
            accel_bias=bias.accel_bias + dt * bias.accel_var,
            gyro_bias=bias.gyro_bias + dt * bias.gyro_var,
        )
    if mode == "sampled":
        if rng is None:
            raise InvalidInputError("sampled bias mode needs a random generator")
        return replace(
            bias,
            accel_bias=bias.accel_bias + rng.normal(0.0, np.sqrt(bias.accel_var * dt)),
            gyro_bias=bias.gyro_bias + rng.normal(0.0, np.sqrt(bias.gyro_var * dt)),
        )
    raise InvalidInputError(f"unknown bias mode {mode!r}; expected one of {BIAS_MODES}")


def predict_highrate_pose(
    last_pose: FramePose,
    lambda_hat: float,
    samples: Sequence[ImuSample],
    bias: BiasState,
    velocity,
    gravity=DEFAULT_GRAVITY,
    end_time_ns: int | None = None,
    attitude=None,
) -> list[FramePose]:
    """Metric poses at IMU rate, dead-reckoned forward from the last frame.

    The start position is the monocular position scaled by ``lambda_hat``.
    Pose ``p`` is the state after applying sample ``p`` and is stamped at the
    next sample time (``end_time_ns`` for the last sample, or the previous step
    repeated when that is not given).

    Args:
        last_pose: Most recent frame pose in {W}, monocular units.
        lambda_hat: Current scale estimate, > 0.
        samples: IMU samples after ``last_pose``.
        bias: Biases added to the raw samples.
        velocity: Metric world-frame velocity at ``last_pose``.
        gravity: Gravity reaction vector in {W}.
        end_time_ns: Optional stamp closing the last sample's interval.
        attitude: Body attitude at ``last_pose``; defaults to its orientation.
    """
    if not lambda_hat > 0:
        raise InvalidInputError(f"lambda_hat must be positive, got {lambda_hat}")
    if len(samples) == 0:
        return []
    ts = [s.timestamp_ns for s in samples]
    if end_time_ns is not None:
        ts.append(int(end_time_ns))
    elif len(samples) > 1:
        ts.append(ts[-1] + (ts[-1] - ts[-2]))
    else:
        raise InvalidInputError("a single sample needs end_time_ns to define its step")
    g = as_vec3(gravity, "gravity")
    R = last_pose.orientation if attitude is None else np.asarray(attitude, dtype=np.float64)
    pos = lambda_hat * last_pose.position
    vel = as_vec3(velocity, "velocity").copy()
    out = []
    for s, t0, t1 in zip(samples, ts[:-1], ts[1:]):
        dt = (t1 - t0) * 1e-9
        a = R @ (s.accel + bias.accel_bias) - g
        pos = pos + vel * dt + 0.5 * a * dt * dt
        vel = vel + a * dt
        R = R @ exp_so3((s.gyro + bias.gyro_bias) * dt)
        out.append(
            FramePose(
                timestamp_ns=t1,
                position=pos,
                orientation=R,
                frame=FrameId(FrameTag.W),
                source="inertial",
                velocity=vel,
            )
        )
    return out
