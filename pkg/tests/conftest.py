"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from monoscale.geometry import FrameId, FrameTag
from monoscale.imu import FramePairWindow
from monoscale.records import FramePose, ImuSample


def pose(t_ns, position=(0.0, 0.0, 0.0), R=None, source="monocular"):
    return FramePose(
        timestamp_ns=int(t_ns),
        position=np.asarray(position, dtype=float),
        orientation=np.eye(3) if R is None else R,
        frame=FrameId(FrameTag.W),
        source=source,
    )


def make_window(gyro, accel, dt_ns, v0=(0.0, 0.0, 0.0), g=(0.0, 0.0, 0.0), R0=None, t0_ns=0):
    """Uniform window of ``len(gyro)`` samples spaced ``dt_ns`` apart, starting at ``t0_ns``."""
    gyro = np.atleast_2d(np.asarray(gyro, dtype=float))
    accel = np.atleast_2d(np.asarray(accel, dtype=float))
    n = len(gyro)
    samples = [ImuSample(t0_ns + k * dt_ns, gyro[k], accel[k]) for k in range(n)]
    return FramePairWindow(
        index=0,
        start_pose=pose(t0_ns, R=R0),
        end_pose=pose(t0_ns + n * dt_ns),
        samples=samples,
        start_velocity=np.asarray(v0, dtype=float),
        gravity=np.asarray(g, dtype=float),
    )


def rotvec_oracle(v):
    """Rotation matrix for a rotation vector, computed by scipy."""
    return Rotation.from_rotvec(np.asarray(v, dtype=float)).as_matrix()


def euler_oracle(R0, gyro, accel, dts, v0, g, ba=(0, 0, 0), bw=(0, 0, 0)):
    """Naive stepwise Euler: p += v dt + a dt^2/2, v += a dt, R <- R exp(w dt).

    Rotation increments come from scipy, not from the package.
    Returns (R, dv, dp).
    """
    R = np.array(R0, dtype=float)
    v = np.array(v0, dtype=float)
    p = np.zeros(3)
    ba, bw, g = (np.asarray(x, dtype=float) for x in (ba, bw, g))
    for w, a, dt in zip(gyro, accel, dts):
        acc = R @ (np.asarray(a) + ba) - g
        p = p + v * dt + 0.5 * acc * dt * dt
        v = v + acc * dt
        R = R @ rotvec_oracle((np.asarray(w) + bw) * dt)
    return R, v - np.asarray(v0, dtype=float), p


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()


def ar1_signal(alpha, n, rng, mean=0.0, sigma=1.0, burn=1000):
    """AR(1) process x_k = mean + alpha (x_{k-1} - mean) + e_k."""
    x = mean
    out = np.empty(n + burn)
    e = rng.normal(0.0, sigma, n + burn)
    for k in range(n + burn):
        x = mean + alpha * (x - mean) + e[k]
        out[k] = x
    return out[burn:]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
