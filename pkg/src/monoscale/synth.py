"""Synthetic sequences with analytic ground truth.

A run produces three consistent streams from one closed-form trajectory:
ground-truth poses at IMU rate, IMU samples whose specific force is
``R^T (a_world + g)``, and "monocular" poses at frame rate whose positions are
the ground truth divided by a known scale.

Trajectory kinds:
    hover             stationary at ``height``.
    line-const-accel  ``p = v0 t + a t^2 / 2``, identity attitude.
    circle            horizontal circle, yaw along the tangent.
    lissajous         3-D Lissajous figure, yaw along the horizontal tangent.
    dash              slow cruise along x with 2 s episodes of fast
                      back-and-forth motion (peak acceleration ``dash_accel``).

Sensor biases here are offsets *present in the readings*; an integrator that
adds its bias estimate must be configured with the negated value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import SequenceBundle
from .errors import InvalidConfigError
from .geometry import FrameId, FrameTag, RigidTransform, exp_so3, rot_z
from .imu import BiasState, propagate_bias
from .records import FramePose, ImuSample

KINDS = ("line-const-accel", "circle", "lissajous", "hover", "dash")
CALIB_PRESETS = ("identity", "tilted")


def calib_preset(name: str) -> RigidTransform:
    """``identity`` or ``tilted``: a camera looking forward with a small lever arm."""
    if name == "identity":
        return RigidTransform.identity()
    if name == "tilted":
        R = exp_so3([-np.pi / 2, 0.0, 0.0]) @ exp_so3([0.0, 0.05, -np.pi / 2])
        return RigidTransform(R, [0.05, -0.02, 0.01])
    raise InvalidConfigError(f"unknown calibration preset {name!r}; expected {CALIB_PRESETS}")


@dataclass
class SynthConfig:
    kind: str = "circle"
    duration: float = 10.0
    imu_rate: float = 200.0
    frame_rate: float = 20.0
    true_lambda: float = 1.0
    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    bias_mode: str = "constant"
    gyro_bias_var: tuple = (0.0, 0.0, 0.0)
    accel_bias_var: tuple = (0.0, 0.0, 0.0)
    gravity: tuple = (0.0, 0.0, 9.81)
    mono_noise_rel: float = 0.0
    mono_noise_abs: float = 0.0
    calib: str = "identity"
    seed: int = 0
    t0_ns: int = 0
    height: float = 1.0
    # line-const-accel
    line_accel: tuple = (2.0, 0.0, 0.0)
    line_velocity: tuple = (0.0, 0.0, 0.0)
    # circle
    circle_radius: float = 1.0
    circle_rate: float = 1.0
    # lissajous
    lissajous_amplitude: tuple = (2.0, 1.5, 0.3)
    lissajous_freq: tuple = (0.5, 1.0, 0.7)
    lissajous_phase: float = np.pi / 4
    # dash
    cruise_speed: float = 0.2
    dash_period: float = 10.0
    dash_start: float = 3.0
    dash_duration: float = 2.0
    dash_freq: float = 2.0
    dash_accel: float = 8.0
    dash_accel_noise: float = 0.0

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown trajectory kind {self.kind!r}; expected {KINDS}")
        if not (self.imu_rate > 0 and self.frame_rate > 0):
            raise InvalidConfigError("rates must be positive")
        if self.imu_rate < self.frame_rate:
            raise InvalidConfigError("imu_rate must be >= frame_rate")
        if not self.true_lambda > 0:
            raise InvalidConfigError("true_lambda must be positive")
        if not self.duration > 0:
            raise InvalidConfigError("duration must be positive")
        for name in ("gyro_noise", "accel_noise", "mono_noise_rel", "mono_noise_abs", "dash_accel_noise"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if self.bias_mode not in ("constant", "sampled"):
            raise InvalidConfigError("bias_mode must be 'constant' or 'sampled'")
        calib_preset(self.calib)
        return self

    @property
    def imu_step_ns(self) -> int:
        return int(round(1e9 / self.imu_rate))

    @property
    def frame_step_ns(self) -> int:
        return int(round(1e9 / self.frame_rate))


@dataclass
class GroundTruth:
    """Closed-form kinematics sampled on a time grid (arrays over samples)."""

    t_ns: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray
    attitude: np.ndarray
    body_rate: np.ndarray

    def poses(self) -> list[FramePose]:
        return [
            FramePose(
                timestamp_ns=int(t),
                position=p,
                orientation=R,
                frame=FrameId(FrameTag.W),
                source="groundtruth",
                velocity=v,
            )
            for t, p, R, v in zip(self.t_ns, self.position, self.attitude, self.velocity)
        ]

    def in_dash(self, cfg: SynthConfig) -> np.ndarray:
        return _dash_mask(cfg, (self.t_ns - cfg.t0_ns) * 1e-9)


def _dash_mask(cfg, t):
    if cfg.kind != "dash":
        return np.zeros_like(t, dtype=bool)
    tau = (t - cfg.dash_start) % cfg.dash_period
    return (t >= cfg.dash_start) & (tau < cfg.dash_duration)


def _yaw_from_velocity(v, a):
    vx, vy, ax, ay = v[:, 0], v[:, 1], a[:, 0], a[:, 1]
    yaw = np.arctan2(vy, vx)
    rate = (vx * ay - vy * ax) / (vx * vx + vy * vy)
    return yaw, rate


def kinematics(cfg: SynthConfig, t: np.ndarray):
    """Position, velocity, acceleration, yaw and yaw rate at times ``t`` (seconds)."""
    t = np.asarray(t, dtype=np.float64)
    n = t.size
    p = np.zeros((n, 3))
    v = np.zeros((n, 3))
    a = np.zeros((n, 3))
    yaw = np.zeros(n)
    rate = np.zeros(n)
    if cfg.kind == "hover":
        p[:, 2] = cfg.height
    elif cfg.kind == "line-const-accel":
        acc = np.asarray(cfg.line_accel, dtype=np.float64)
        v0 = np.asarray(cfg.line_velocity, dtype=np.float64)
        p = v0 * t[:, None] + 0.5 * acc * (t * t)[:, None]
        v = v0 + acc * t[:, None]
        a = np.broadcast_to(acc, (n, 3)).copy()
    elif cfg.kind == "circle":
        r, w = cfg.circle_radius, cfg.circle_rate
        c, s = np.cos(w * t), np.sin(w * t)
        p = np.stack([r * c, r * s, np.full(n, cfg.height)], axis=1)
        v = np.stack([-r * w * s, r * w * c, np.zeros(n)], axis=1)
        a = np.stack([-r * w * w * c, -r * w * w * s, np.zeros(n)], axis=1)
        yaw = w * t + np.copysign(np.pi / 2, w)
        rate = np.full(n, float(w))
    elif cfg.kind == "lissajous":
        A = np.asarray(cfg.lissajous_amplitude, dtype=np.float64)
        f = np.asarray(cfg.lissajous_freq, dtype=np.float64)
        ph = np.array([0.0, cfg.lissajous_phase, 0.0])
        arg = f * t[:, None] + ph
        p = A * np.sin(arg)
        p[:, 2] += cfg.height
        v = A * f * np.cos(arg)
        a = -A * f * f * np.sin(arg)
        yaw, rate = _yaw_from_velocity(v, a)
    elif cfg.kind == "dash":
        vc = cfg.cruise_speed
        p[:, 0] = vc * t
        v[:, 0] = vc
        p[:, 2] = cfg.height
        f = cfg.dash_freq
        amp = cfg.dash_accel / (2.0 * np.pi**2 * f * f)
        mask = _dash_mask(cfg, t)
        tau = ((t - cfg.dash_start) % cfg.dash_period)[mask]
        # x += amp * sin^2(pi f tau): zero position/velocity offset at both ends
        # of an episode when f * dash_duration is an integer
        p[mask, 0] += amp * np.sin(np.pi * f * tau) ** 2
        v[mask, 0] += amp * np.pi * f * np.sin(2 * np.pi * f * tau)
        a[mask, 0] += 2.0 * amp * (np.pi * f) ** 2 * np.cos(2 * np.pi * f * tau)
    else:
        raise InvalidConfigError(f"unknown trajectory kind {cfg.kind!r}")
    return p, v, a, yaw, rate


def _grid(cfg: SynthConfig, step_ns: int) -> np.ndarray:
    n = int(np.floor(cfg.duration * 1e9 / step_ns + 1e-9))
    return cfg.t0_ns + step_ns * np.arange(n, dtype=np.int64)


def sample_groundtruth(cfg: SynthConfig, t_ns: np.ndarray) -> GroundTruth:
    t = (np.asarray(t_ns, dtype=np.int64) - cfg.t0_ns) * 1e-9
    p, v, a, yaw, rate = kinematics(cfg, t)
    att = np.array([rot_z(y) for y in yaw]).reshape(-1, 3, 3)
    body_rate = np.zeros((t.size, 3))
    body_rate[:, 2] = rate
    return GroundTruth(np.asarray(t_ns, dtype=np.int64), p, v, a, att, body_rate)


def generate_groundtruth(cfg: SynthConfig) -> GroundTruth:
    """Ground truth on the IMU time grid ``t0 + k / imu_rate`` for ``k / imu_rate < duration``."""
    cfg.validate()
    return sample_groundtruth(cfg, _grid(cfg, cfg.imu_step_ns))


def _rngs(cfg: SynthConfig):
    imu_seq, mono_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    return np.random.default_rng(imu_seq), np.random.default_rng(mono_seq)


def simulate_imu(gt: GroundTruth, cfg: SynthConfig, rng: np.random.Generator | None = None) -> list[ImuSample]:
    """IMU readings consistent with ``gt``.

    ``accel = R^T (a_world + g) + bias + noise`` and ``gyro = body_rate + bias + noise``,
    noise being white Gaussian in the sensor frame. During dash episodes an
    extra ``dash_accel_noise`` is added to the accelerometer.
    """
    if rng is None:
        rng = _rngs(cfg)[0]
    n = gt.t_ns.size
    g = np.asarray(cfg.gravity, dtype=np.float64)
    specific = np.einsum("nji,nj->ni", gt.attitude, gt.accel + g)
    gyro_noise = rng.normal(0.0, 1.0, (n, 3)) * cfg.gyro_noise
    accel_noise = rng.normal(0.0, 1.0, (n, 3)) * cfg.accel_noise
    if cfg.dash_accel_noise > 0:
        extra = rng.normal(0.0, 1.0, (n, 3)) * cfg.dash_accel_noise
        accel_noise = accel_noise + extra * gt.in_dash(cfg)[:, None]
    bias = BiasState(
        accel_bias=cfg.accel_bias,
        gyro_bias=cfg.gyro_bias,
        accel_var=cfg.accel_bias_var,
        gyro_var=cfg.gyro_bias_var,
    )
    dt = cfg.imu_step_ns * 1e-9
    out = []
    for k in range(n):
        out.append(
            ImuSample(
                int(gt.t_ns[k]),
                gt.body_rate[k] + bias.gyro_bias + gyro_noise[k],
                specific[k] + bias.accel_bias + accel_noise[k],
            )
        )
        if cfg.bias_mode == "sampled":
            bias = propagate_bias(bias, dt, "sampled", rng)
    return out


def simulate_monocular(gt_frames: GroundTruth, cfg: SynthConfig, rng: np.random.Generator | None = None) -> list[FramePose]:
    """Up-to-scale camera poses in {V} at the frame times of ``gt_frames``.

    World positions are ``gt / true_lambda`` plus zero-mean Gaussian noise with
    per-axis std ``mono_noise_abs + mono_noise_rel * d``, where ``d`` is the
    (monocular) distance to the neighbouring frame. Poses are then expressed
    in {V} so that applying the calibration maps them back.
    """
    if rng is None:
        rng = _rngs(cfg)[1]
    T = calib_preset(cfg.calib)
    lam = cfg.true_lambda
    pos = gt_frames.position / lam
    n = len(pos)
    if cfg.mono_noise_rel > 0 or cfg.mono_noise_abs > 0:
        step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        d = np.concatenate([step[:1], step]) if n > 1 else np.zeros(n)
        std = cfg.mono_noise_abs + cfg.mono_noise_rel * d
        pos = pos + rng.normal(0.0, 1.0, (n, 3)) * std[:, None]
    T_inv = T.inverse()
    out = []
    for t, p, R_wi in zip(gt_frames.t_ns, pos, gt_frames.attitude):
        R_wc = R_wi @ T.rotation
        out.append(
            FramePose(
                timestamp_ns=int(t),
                position=T_inv.apply(p),
                orientation=T_inv.rotation @ R_wc,
                frame=FrameId(FrameTag.V),
                source="monocular",
            )
        )
    return out


def frame_times(cfg: SynthConfig) -> np.ndarray:
    return _grid(cfg, cfg.frame_step_ns)


def make_bundle(cfg: SynthConfig) -> SequenceBundle:
    """Simulate a full sequence: IMU, monocular poses and IMU-rate ground truth."""
    cfg.validate()
    rng_imu, rng_mono = _rngs(cfg)
    gt = generate_groundtruth(cfg)
    imu = simulate_imu(gt, cfg, rng_imu)
    mono = simulate_monocular(sample_groundtruth(cfg, frame_times(cfg)), cfg, rng_mono)
    return SequenceBundle(
        imu=imu,
        mono=mono,
        calib=calib_preset(cfg.calib),
        gravity=np.asarray(cfg.gravity, dtype=np.float64),
        gt=gt.poses(),
    )
