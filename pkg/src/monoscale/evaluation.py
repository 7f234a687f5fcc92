"""Scale evaluation: ground-truth scale, scale error, RMSE, rescaling.

Note that ``rmse`` here differences two scalings of the *same* monocular
positions, so it measures scale error only. It is not an absolute trajectory
error and involves no spatial alignment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError, InvalidInputError, NoValidPairsError
from .records import FramePose
from .scale import EPS_INERTIAL, EPS_MONOCULAR, ESTIMATORS

SERIES_COLUMNS = (
    "frame_index",
    "t_ns",
    "lambda_meas",
    "lambda_ma_add",
    "lambda_ma_log",
    "lambda_ar",
    "lambda_kf",
    "lambda_gt_running",
)


def _as_points(points, name="positions") -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must be an (n, 3) array, got shape {arr.shape}")
    return arr


def pair_ratios(gt_deltas, mono_deltas, eps_g=EPS_INERTIAL, eps_m=EPS_MONOCULAR) -> np.ndarray:
    """Per-pair ``|t_gt| / |t_mono|``, NaN where either norm is degenerate."""
    g = _as_points(gt_deltas, "gt_deltas")
    m = _as_points(mono_deltas, "mono_deltas")
    if g.shape != m.shape:
        raise InvalidInputError(f"delta lists differ in length: {len(g)} vs {len(m)}")
    ng = np.linalg.norm(g, axis=1)
    nm = np.linalg.norm(m, axis=1)
    ok = (ng >= eps_g) & (nm >= eps_m)
    out = np.full(len(g), np.nan)
    out[ok] = ng[ok] / nm[ok]
    return out


def lambda_ground_truth(
    gt_deltas,
    mono_deltas,
    skip_first: bool = False,
    eps_g: float = EPS_INERTIAL,
    eps_m: float = EPS_MONOCULAR,
) -> float:
    """Mean per-pair ratio of ground-truth to monocular translation norms.

    With ``skip_first`` the first valid pair is dropped, the same rule the
    moving averages apply, so both can be compared on one pair set.
    """
    ratios = pair_ratios(gt_deltas, mono_deltas, eps_g, eps_m)
    if len(ratios) == 0:
        raise InvalidInputError("need at least one frame pair")
    valid = ratios[np.isfinite(ratios)]
    if skip_first:
        valid = valid[1:]
    if valid.size == 0:
        raise NoValidPairsError("no valid frame pairs for the ground-truth scale")
    return float(np.mean(valid))


def scale_error(lambda_g: float, lambda_hat: float) -> float:
    return abs(lambda_g - lambda_hat)


def rmse(positions, lambda_g: float, lambda_hat: float) -> float:
    """Root-mean-square distance between two scalings of the same positions."""
    x = _as_points(positions)
    if len(x) == 0:
        raise InvalidInputError("rmse needs at least one position")
    # (lg - lh) * x rather than lg*x - lh*x: no cancellation when lg ~ lh
    with np.errstate(over="ignore"):
        diff = (lambda_g - lambda_hat) * x
        return float(np.sqrt(np.sum(diff * diff) / len(x)))


def rescale_trajectory(positions, lam: float) -> np.ndarray:
    """Metric positions: every monocular position multiplied by ``lam``."""
    if not lam > 0:
        raise InvalidInputError(f"scale must be positive, got {lam}")
    return lam * _as_points(positions)


def total_distance(positions) -> float:
    """Path length: sum of distances between consecutive positions."""
    x = _as_points(positions)
    if len(x) < 2:
        raise InvalidInputError("total distance needs at least two positions")
    return float(np.sum(np.linalg.norm(np.diff(x, axis=0), axis=1)))


def align_by_timestamp(
    reference: Sequence[FramePose],
    query: Sequence[FramePose],
    tol_ns: int = 20_000_000,
) -> np.ndarray:
    """Index of the reference pose nearest in time to each query pose.

    Raises:
        AlignmentError: some query pose has no reference pose within ``tol_ns``.
    """
    if len(reference) == 0:
        raise AlignmentError("reference stream is empty")
    ref_t = np.array([p.timestamp_ns for p in reference], dtype=np.int64)
    q_t = np.array([p.timestamp_ns for p in query], dtype=np.int64)
    right = np.clip(np.searchsorted(ref_t, q_t), 0, len(ref_t) - 1)
    left = np.clip(right - 1, 0, len(ref_t) - 1)
    pick = np.where(np.abs(ref_t[left] - q_t) <= np.abs(ref_t[right] - q_t), left, right)
    gap = np.abs(ref_t[pick] - q_t)
    bad = np.flatnonzero(gap > tol_ns)
    if bad.size:
        i = int(bad[0])
        raise AlignmentError(
            f"{bad.size} of {len(q_t)} poses have no reference within {tol_ns} ns "
            f"(first: t={int(q_t[i])}, nearest gap {int(gap[i])} ns)"
        )
    return pick


def running_lambda_gt(ratios: np.ndarray, skip_first: bool = True) -> np.ndarray:
    """Running mean of the valid pair ratios; NaN until the first accepted pair."""
    out = np.full(len(ratios), np.nan)
    total, count, seen = 0.0, 0, 0
    for k, r in enumerate(ratios):
        if np.isfinite(r):
            seen += 1
            if not (skip_first and seen == 1):
                total += r
                count += 1
        if count:
            out[k] = total / count
    return out


@dataclass
class EvaluationReport:
    """Scale estimates compared against the ground-truth scale."""

    lambda_hat: dict[str, float]
    lambda_g: float
    e_lambda: dict[str, float]
    rmse: dict[str, float]
    total_distance_gt: float
    total_distance: dict[str, float]
    best_estimator: str | None
    series: list[dict] = field(default_factory=list)

    @property
    def total_distance_best(self) -> float:
        if self.best_estimator is None:
            return math.nan
        return self.total_distance[self.best_estimator]

    def to_keyvalue(self) -> str:
        lines = [f"lambda_g = {self.lambda_g!r}"]
        for name in self.lambda_hat:
            lines.append(f"lambda_hat.{name} = {self.lambda_hat[name]!r}")
            lines.append(f"e_lambda.{name} = {self.e_lambda[name]!r}")
            lines.append(f"rmse.{name} = {self.rmse[name]!r}")
            lines.append(f"total_distance.{name} = {self.total_distance[name]!r}")
        lines.append(f"total_distance_gt = {self.total_distance_gt!r}")
        lines.append(f"best_estimator = {self.best_estimator}")
        lines.append(f"total_distance_best = {self.total_distance_best!r}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        report = out_dir / "report.txt"
        report.write_text(self.to_keyvalue())
        series = out_dir / "lambda_series.csv"
        write_series_csv(series, self.series)
        return report, series


def build_report(
    lambda_hat: dict[str, float | None],
    lambda_g: float,
    mono_positions,
    gt_positions,
    series: list[dict] | None = None,
) -> EvaluationReport:
    """Assemble an EvaluationReport; estimators without an estimate get NaN fields."""
    x = _as_points(mono_positions)
    e, r, dist = {}, {}, {}
    clean = {}
    for name, lam in lambda_hat.items():
        lam = math.nan if lam is None else float(lam)
        clean[name] = lam
        if math.isfinite(lam) and lam > 0:
            e[name] = scale_error(lambda_g, lam)
            r[name] = rmse(x, lambda_g, lam)
            with np.errstate(over="ignore"):
                dist[name] = total_distance(rescale_trajectory(x, lam))
        else:
            e[name] = r[name] = dist[name] = math.nan
    finite = [n for n in clean if math.isfinite(e[n])]
    best = min(finite, key=lambda n: e[n]) if finite else None
    return EvaluationReport(
        lambda_hat=clean,
        lambda_g=lambda_g,
        e_lambda=e,
        rmse=r,
        total_distance_gt=total_distance(gt_positions),
        total_distance=dist,
        best_estimator=best,
        series=series or [],
    )


def write_series_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c, math.nan)) for c in SERIES_COLUMNS])


def read_series_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                row[k] = int(v) if k in ("frame_index", "t_ns") else float(v)
            rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def estimator_column(name: str) -> str:
    assert name in ESTIMATORS
    return "lambda_" + name.replace("-", "_")
