"""End-to-end scale estimation: windowing, integration, measurement, estimators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import SequenceBundle, associate_windows
from .errors import AlignmentError, InvalidConfigError, NoValidPairsError
from .evaluation import (
    EvaluationReport,
    align_by_timestamp,
    build_report,
    estimator_column,
    lambda_ground_truth,
    pair_ratios,
    running_lambda_gt,
)
from .imu import BIAS_MODES, BiasState, integrate_window, predict_highrate_pose, propagate_bias
from .records import FramePose, positions_of
from .scale import (
    EPS_INERTIAL,
    EPS_MONOCULAR,
    ESTIMATORS,
    EstimatorParams,
    ScaleMeasurement,
    invalid_measurement,
    make_estimator,
    measure_lambda,
)

log = logging.getLogger(__name__)

VEL_INIT = ("zero", "mono-fd", "gt")


@dataclass
class PipelineConfig:
    """Options for one estimation run.

    ``vel_init`` picks the velocity at the start of each frame pair:
    ``zero``; ``mono-fd``, the backward difference of the monocular positions
    scaled by the current estimate (``bootstrap_lambda`` until one exists);
    or ``gt``, the ground-truth velocity at the frame time.
    """

    estimators: list[str] = field(default_factory=lambda: ["ma-log"])
    params: EstimatorParams = field(default_factory=EstimatorParams)
    vel_init: str = "mono-fd"
    bias: BiasState = field(default_factory=BiasState)
    bias_mode: str = "constant"
    eps_i: float = EPS_INERTIAL
    eps_m: float = EPS_MONOCULAR
    bootstrap_lambda: float = 1.0
    seed: int = 0

    def validate(self):
        if self.vel_init not in VEL_INIT:
            raise InvalidConfigError(f"vel-init must be one of {VEL_INIT}")
        if self.bias_mode not in BIAS_MODES:
            raise InvalidConfigError(f"bias mode must be one of {BIAS_MODES}")
        if not self.estimators:
            raise InvalidConfigError("select at least one estimator")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise InvalidConfigError(f"unknown estimator {name!r}")
        if not self.bootstrap_lambda > 0:
            raise InvalidConfigError("bootstrap lambda must be positive")
        self.params.validate()
        return self


@dataclass
class PipelineResult:
    measurements: list[ScaleMeasurement]
    series: list[dict]
    estimates: dict[str, float | None]
    frames: list[FramePose]
    vel_init: str
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def n_valid(self) -> int:
        return sum(m.valid for m in self.measurements)


class _GtVelocity:
    """Ground-truth velocity at arbitrary times by linear interpolation.

    Streams without a velocity column fall back to central differences of the
    positions.
    """

    def __init__(self, gt: list[FramePose]):
        if not gt:
            raise InvalidConfigError("vel-init gt needs a ground-truth stream")
        self.t = np.array([p.timestamp_ns for p in gt], dtype=np.int64)
        if all(p.velocity is not None for p in gt):
            self.v = np.array([p.velocity for p in gt])
        else:
            pos = positions_of(gt)
            self.v = np.gradient(pos, self.t * 1e-9, axis=0) if len(gt) > 1 else np.zeros((1, 3))

    def __call__(self, t_ns: int) -> np.ndarray:
        k = int(np.searchsorted(self.t, t_ns))
        if k < len(self.t) and self.t[k] == t_ns:
            return self.v[k].copy()
        if k == 0 or k == len(self.t):
            raise AlignmentError(f"t={t_ns} ns is outside the ground-truth time span")
        t0, t1 = self.t[k - 1], self.t[k]
        w = (t_ns - t0) / (t1 - t0)
        return (1 - w) * self.v[k - 1] + w * self.v[k]


def run_pipeline(bundle: SequenceBundle, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Estimate the scale of ``bundle.mono`` from its IMU stream.

    Raises:
        NoValidPairsError: no frame pair produced a valid measurement.
    """
    cfg = (cfg or PipelineConfig()).validate()
    frames = bundle.mono_world()
    if len(frames) < 2:
        raise NoValidPairsError("need at least two monocular frames")
    windows = associate_windows(bundle.imu, frames, bundle.gravity)
    estimators = {name: make_estimator(name, cfg.params) for name in cfg.estimators}
    gt_vel = _GtVelocity(bundle.gt) if cfg.vel_init == "gt" else None
    R_ci = bundle.calib.rotation.T
    bias = cfg.bias
    rng = np.random.default_rng(cfg.seed)
    boot_order = ["ma-log"] + [n for n in cfg.estimators if n != "ma-log"]

    measurements, series = [], []
    for w in windows:
        i, j = w.index, w.index + 1
        if w.empty or w.out_of_span:
            m = invalid_measurement((i, j))
        else:
            if cfg.vel_init == "gt":
                v0 = gt_vel(frames[i].timestamp_ns)
            elif cfg.vel_init == "mono-fd" and i > 0:
                lam = next(
                    (estimators[n].value for n in boot_order if n in estimators and estimators[n].value),
                    cfg.bootstrap_lambda,
                )
                dt = (frames[i].timestamp_ns - frames[i - 1].timestamp_ns) * 1e-9
                v0 = lam * (frames[i].position - frames[i - 1].position) / dt
            else:
                v0 = np.zeros(3)
            w = w.with_state(start_velocity=v0, start_attitude=frames[i].orientation @ R_ci)
            delta = integrate_window(w, bias)
            t_mono = frames[j].position - frames[i].position
            m = measure_lambda(delta.translation, t_mono, cfg.eps_i, cfg.eps_m, pair=(i, j))
        if cfg.bias_mode != "constant":
            span = (frames[j].timestamp_ns - frames[i].timestamp_ns) * 1e-9
            bias = propagate_bias(bias, span, cfg.bias_mode, rng)
        measurements.append(m)
        row = {"frame_index": j, "t_ns": frames[j].timestamp_ns, "lambda_meas": m.lam}
        for name in ESTIMATORS:
            row[estimator_column(name)] = math.nan
        for name, est in estimators.items():
            value = est.update(m)
            row[estimator_column(name)] = math.nan if value is None else value
        row["lambda_gt_running"] = math.nan
        series.append(row)

    result = PipelineResult(
        measurements=measurements,
        series=series,
        estimates={name: est.value for name, est in estimators.items()},
        frames=frames,
        vel_init=cfg.vel_init,
    )
    ar = estimators.get("ar")
    if ar is not None and ar.disabled:
        result.notes["ar"] = f"disabled: {ar.disabled}"
    if result.n_valid == 0:
        raise NoValidPairsError(f"all {len(measurements)} frame pairs were invalid")
    log.info("%d of %d frame pairs valid", result.n_valid, len(measurements))
    return result


def evaluate_run(
    bundle: SequenceBundle,
    result: PipelineResult,
    skip_first: bool = True,
    tol_ns: int = 20_000_000,
) -> EvaluationReport:
    """Compare a run's estimates with the ground-truth scale of ``bundle.gt``.

    Ground-truth poses are matched to the monocular frames by nearest
    timestamp; per-pair distances are rotation invariant, so no spatial
    alignment is done.
    """
    if not bundle.gt:
        raise InvalidConfigError("evaluation needs a ground-truth stream")
    frames = result.frames
    idx = align_by_timestamp(bundle.gt, frames, tol_ns)
    gt_pos = positions_of(bundle.gt)[idx]
    mono_pos = positions_of(frames)
    gt_deltas = np.diff(gt_pos, axis=0)
    mono_deltas = np.diff(mono_pos, axis=0)
    lam_g = lambda_ground_truth(gt_deltas, mono_deltas, skip_first=skip_first)
    running = running_lambda_gt(pair_ratios(gt_deltas, mono_deltas), skip_first)
    series = [dict(row, lambda_gt_running=running[k]) for k, row in enumerate(result.series)]
    return build_report(result.estimates, lam_g, mono_pos, gt_pos, series)


def highrate_poses(bundle: SequenceBundle, result: PipelineResult, cfg: PipelineConfig) -> list[FramePose]:
    """Metric IMU-rate poses between frames, using the estimate available at each frame.

    Windows are restarted from each monocular frame (scaled) with the same
    velocity strategy the run used; ``mono-fd`` uses the final estimate.
    """
    frames = result.frames
    windows = associate_windows(bundle.imu, frames, bundle.gravity)
    name = cfg.estimators[0]
    col = estimator_column(name)
    gt_vel = _GtVelocity(bundle.gt) if cfg.vel_init == "gt" else None
    R_ci = bundle.calib.rotation.T
    final = result.estimates.get(name)
    out = []
    lam = None
    for w, row in zip(windows, result.series):
        if w.empty:
            continue
        if lam is None or not math.isfinite(lam):
            lam = final if final else cfg.bootstrap_lambda
        i = w.index
        if gt_vel is not None:
            v0 = gt_vel(frames[i].timestamp_ns)
        elif cfg.vel_init == "mono-fd" and i > 0:
            dt = (frames[i].timestamp_ns - frames[i - 1].timestamp_ns) * 1e-9
            v0 = lam * (frames[i].position - frames[i - 1].position) / dt
        else:
            v0 = np.zeros(3)
        out.extend(
            predict_highrate_pose(
                frames[i],
                lam,
                w.samples,
                cfg.bias,
                v0,
                bundle.gravity,
                end_time_ns=frames[i + 1].timestamp_ns,
                attitude=frames[i].orientation @ R_ci,
            )
        )
        lam = row[col]
    return out
