"""Readers and writers for IMU, pose and calibration files, plus frame windowing.

Formats:
    - IMU CSV (EuRoC ``imu0/data.csv``): ``timestamp_ns, w_x, w_y, w_z, a_x, a_y, a_z``.
    - Ground-truth CSV (EuRoC): ``timestamp_ns, p_x, p_y, p_z, q_w, q_x, q_y, q_z``
      followed by optional velocity ``v_x, v_y, v_z`` and further ignored columns.
    - TUM text: ``t_sec tx ty tz qx qy qz qw`` separated by whitespace.
    - Calibration: ``key = value`` lines with ``gravity.x/.y/.z`` and ``T_IC``
      (12 row-major numbers of ``[R|t]``).

Floats are written with ``repr`` so a write/parse cycle is bit-exact.
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IntegrityError, IntegrityWarning, InvalidInputError, ParseError
from .geometry import FrameId, FrameTag, RigidTransform, as_vec3, quat_to_rot, rot_to_quat
from .imu import DEFAULT_GRAVITY, FramePairWindow
from .records import FramePose, ImuSample

POSE_FORMATS = ("euroc_gt_csv", "tum_txt")
QUAT_WARN_TOL = 1e-3
QUAT_ERROR_TOL = 1e-1
_QUAT_EXACT_TOL = 1e-12

IMU_HEADER = (
    "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
    "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]"
)
GT_HEADER = (
    "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],"
    "q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],"
    "v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1]"
)
TUM_HEADER = "# timestamp tx ty tz qx qy qz qw"


def _float(tok: str, path, line) -> float:
    tok = tok.strip()
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", path, line) from None
    # float() also accepts '1_000' and 'infinity'; neither belongs in these files
    if "_" in tok or not math.isfinite(v):
        raise ParseError(f"not a finite decimal number: {tok!r}", path, line)
    return v


def _int(tok: str, path, line) -> int:
    tok = tok.strip()
    if not tok.lstrip("-").isdigit():
        raise ParseError(f"not an integer timestamp: {tok!r}", path, line)
    return int(tok)


def _data_lines(path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            yield lineno, text


def _check_monotone(stamps: Sequence[int], lines: Sequence[int], path):
    for k in range(1, len(stamps)):
        if stamps[k] <= stamps[k - 1]:
            raise IntegrityError(
                f"{path}:{lines[k]}: timestamp {stamps[k]} does not increase "
                f"(previous {stamps[k - 1]})"
            )


def fmt_float(v: float) -> str:
    return repr(float(v))


# -- IMU ---------------------------------------------------------------------


def parse_imu_csv(path) -> list[ImuSample]:
    """Read an EuRoC IMU CSV into time-ordered samples.

    Raises:
        ParseError: malformed row (message carries the line number).
        IntegrityError: timestamps not strictly increasing.
    """
    samples, lines = [], []
    for lineno, text in _data_lines(path):
        cols = text.split(",")
        if len(cols) < 7:
            raise ParseError(f"expected 7 columns, got {len(cols)}", path, lineno)
        t = _int(cols[0], path, lineno)
        vals = [_float(c, path, lineno) for c in cols[1:7]]
        samples.append(ImuSample(t, vals[0:3], vals[3:6]))
        lines.append(lineno)
    _check_monotone([s.timestamp_ns for s in samples], lines, path)
    return samples


def write_imu_csv(path, samples: Iterable[ImuSample]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(IMU_HEADER + "\n")
        for s in samples:
            vals = ",".join(fmt_float(v) for v in (*s.gyro, *s.accel))
            fh.write(f"{s.timestamp_ns},{vals}\n")


# -- poses -------------------------------------------------------------------


def seconds_to_ns(tok: str) -> int:
    """Decimal seconds to integer nanoseconds, rounding half to even."""
    try:
        d = Decimal(tok.strip())
    except InvalidOperation:
        raise ValueError(f"not a decimal timestamp: {tok!r}") from None
    if not d.is_finite():
        raise ValueError(f"not a finite timestamp: {tok!r}")
    return int((d * 1_000_000_000).to_integral_value(rounding=ROUND_HALF_EVEN))


def ns_to_seconds(t_ns: int) -> str:
    sign = "-" if t_ns < 0 else ""
    t = abs(int(t_ns))
    return f"{sign}{t // 1_000_000_000}.{t % 1_000_000_000:09d}"


def _checked_quaternion(q, path, lineno) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    dev = abs(float(np.linalg.norm(q)) - 1.0)
    if dev > QUAT_ERROR_TOL:
        raise IntegrityError(f"{path}:{lineno}: quaternion norm off by {dev:.3g}")
    if dev > QUAT_WARN_TOL:
        warnings.warn(
            f"{path}:{lineno}: quaternion norm off by {dev:.3g}; normalized",
            IntegrityWarning,
            stacklevel=3,
        )
    if dev > _QUAT_EXACT_TOL:
        q = q / np.linalg.norm(q)
    return q


def parse_pose_file(
    path,
    fmt: str,
    source: str = "monocular",
    frame: FrameTag = FrameTag.W,
) -> list[FramePose]:
    """Read a pose file in ``euroc_gt_csv`` or ``tum_txt`` format.

    EuRoC ground-truth rows with at least 11 columns also yield the velocity.
    Quaternions off unit norm by more than 1e-3 are normalized with an
    IntegrityWarning; beyond 1e-1 they raise IntegrityError.
    """
    if fmt not in POSE_FORMATS:
        raise InvalidInputError(f"unknown pose format {fmt!r}; expected one of {POSE_FORMATS}")
    poses, lines = [], []
    for lineno, text in _data_lines(path):
        if fmt == "euroc_gt_csv":
            cols = text.split(",")
            if len(cols) < 8:
                raise ParseError(f"expected at least 8 columns, got {len(cols)}", path, lineno)
            t = _int(cols[0], path, lineno)
            p = [_float(c, path, lineno) for c in cols[1:4]]
            q = [_float(c, path, lineno) for c in cols[4:8]]
            vel = [_float(c, path, lineno) for c in cols[8:11]] if len(cols) >= 11 else None
        else:
            cols = text.split()
            if len(cols) != 8:
                raise ParseError(f"expected 8 fields, got {len(cols)}", path, lineno)
            try:
                t = seconds_to_ns(cols[0])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            p = [_float(c, path, lineno) for c in cols[1:4]]
            qx, qy, qz, qw = (_float(c, path, lineno) for c in cols[4:8])
            q = [qw, qx, qy, qz]
            vel = None
        q = _checked_quaternion(q, path, lineno)
        poses.append(
            FramePose(
                timestamp_ns=t,
                position=p,
                orientation=quat_to_rot(q),
                frame=FrameId(frame),
                source=source,
                velocity=vel,
                quaternion=q,
            )
        )
        lines.append(lineno)
    _check_monotone([x.timestamp_ns for x in poses], lines, path)
    return poses


def _quat_of(pose: FramePose) -> np.ndarray:
    return pose.quaternion if pose.quaternion is not None else rot_to_quat(pose.orientation)


def write_pose_file(path, poses: Iterable[FramePose], fmt: str):
    if fmt not in POSE_FORMATS:
        raise InvalidInputError(f"unknown pose format {fmt!r}; expected one of {POSE_FORMATS}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "tum_txt":
            fh.write(TUM_HEADER + "\n")
            for pose in poses:
                w, x, y, z = _quat_of(pose)
                vals = " ".join(fmt_float(v) for v in (*pose.position, x, y, z, w))
                fh.write(f"{ns_to_seconds(pose.timestamp_ns)} {vals}\n")
        else:
            fh.write(GT_HEADER + "\n")
            for pose in poses:
                vals = [*pose.position, *_quat_of(pose)]
                if pose.velocity is not None:
                    vals += list(pose.velocity)
                fh.write(f"{pose.timestamp_ns}," + ",".join(fmt_float(v) for v in vals) + "\n")


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    T_IC: RigidTransform = field(default_factory=RigidTransform.identity)
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))


def parse_calib(path) -> Calibration:
    """Read the key-value calibration file. Missing keys keep their defaults."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, text in _data_lines(path):
        if "=" not in text:
            raise ParseError("expected 'key = value'", path, lineno)
        key, val = (s.strip() for s in text.split("=", 1))
        values[key] = val
        lines[key] = lineno
    known = {"gravity.x", "gravity.y", "gravity.z", "T_IC"}
    for key in values:
        if key not in known:
            raise ParseError(f"unknown key {key!r}", path, lines[key])
    g = list(DEFAULT_GRAVITY)
    for axis, k in zip("xyz", range(3)):
        key = f"gravity.{axis}"
        if key in values:
            g[k] = _float(values[key], path, lines[key])
    T = RigidTransform.identity()
    if "T_IC" in values:
        toks = values["T_IC"].replace(",", " ").split()
        if len(toks) != 12:
            raise ParseError(f"T_IC needs 12 numbers, got {len(toks)}", path, lines["T_IC"])
        M = np.array([_float(t, path, lines["T_IC"]) for t in toks]).reshape(3, 4)
        try:
            T = RigidTransform.from_matrix(M)
        except InvalidInputError as exc:
            raise ParseError(f"T_IC: {exc}", path, lines["T_IC"]) from None
    return Calibration(T_IC=T, gravity=np.array(g))


def write_calib(path, calib: Calibration):
    M = calib.T_IC.as_matrix()[:3, :]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# camera-to-IMU transform [R|t], row-major; gravity reaction in {W}\n")
        for axis, v in zip("xyz", calib.gravity):
            fh.write(f"gravity.{axis} = {fmt_float(v)}\n")
        fh.write("T_IC = " + " ".join(fmt_float(v) for v in M.ravel()) + "\n")


# -- frames and windows ------------------------------------------------------


def monocular_to_world(poses: Sequence[FramePose], T_IC: RigidTransform) -> list[FramePose]:
    """Express vision-frame camera poses in {W}: ``p_W = R_IC p_V + t_IC``.

    Orientations become ``R_IC R_VC``, the camera attitude in {W}. Poses
    already tagged {W} pass through unchanged.
    """
    out = []
    for pose in poses:
        if pose.frame.tag == FrameTag.W:
            out.append(pose)
            continue
        if pose.frame.tag != FrameTag.V:
            raise InvalidInputError(f"cannot map a pose tagged {pose.frame} to the world frame")
        out.append(
            pose.replace(
                position=T_IC.apply(pose.position),
                orientation=T_IC.rotation @ pose.orientation,
                frame=FrameId(FrameTag.W, pose.frame.timestamp_ns),
                quaternion=None,
            )
        )
    return out


def associate_windows(
    imu: Sequence[ImuSample],
    frames: Sequence[FramePose],
    gravity=DEFAULT_GRAVITY,
) -> list[FramePairWindow]:
    """One window per consecutive frame pair holding the IMU samples in ``[t_i, t_j)``.

    Pairs not fully covered by the IMU stream are kept and flagged
    ``out_of_span``; pairs without samples are kept with ``empty`` True.
    """
    stamps = [s.timestamp_ns for s in imu]
    g = as_vec3(gravity, "gravity")
    windows = []
    first = stamps[0] if stamps else None
    last = stamps[-1] if stamps else None
    for i in range(len(frames) - 1):
        ti, tj = frames[i].timestamp_ns, frames[i + 1].timestamp_ns
        lo = bisect.bisect_left(stamps, ti)
        hi = bisect.bisect_left(stamps, tj)
        span_ok = first is not None and first <= ti and tj <= last
        windows.append(
            FramePairWindow(
                index=i,
                start_pose=frames[i],
                end_pose=frames[i + 1],
                samples=tuple(imu[lo:hi]),
                gravity=g,
                out_of_span=not span_ok,
            )
        )
    return windows


@dataclass
class SequenceBundle:
    """Everything one run needs: IMU, monocular poses, optional ground truth, calibration."""

    imu: list[ImuSample]
    mono: list[FramePose]
    calib: RigidTransform = field(default_factory=RigidTransform.identity)
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    gt: list[FramePose] | None = None

    def mono_world(self) -> list[FramePose]:
        return monocular_to_world(self.mono, self.calib)


BUNDLE_FILES = {
    "imu": "imu.csv",
    "mono": "mono_tum.txt",
    "gt": "groundtruth.csv",
    "calib": "calib.txt",
}


def load_bundle(imu_path, mono_path, calib_path=None, gt_path=None) -> SequenceBundle:
    """Parse the files of one sequence. Monocular TUM poses are read as {V} poses."""
    calib = parse_calib(calib_path) if calib_path else Calibration()
    return SequenceBundle(
        imu=parse_imu_csv(imu_path),
        mono=parse_pose_file(mono_path, "tum_txt", "monocular", FrameTag.V),
        calib=calib.T_IC,
        gravity=calib.gravity,
        gt=parse_pose_file(gt_path, "euroc_gt_csv", "groundtruth") if gt_path else None,
    )


def write_bundle(out_dir, bundle: SequenceBundle) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in BUNDLE_FILES.items()}
    write_imu_csv(paths["imu"], bundle.imu)
    write_pose_file(paths["mono"], bundle.mono, "tum_txt")
    write_calib(paths["calib"], Calibration(bundle.calib, np.asarray(bundle.gravity)))
    if bundle.gt is not None:
        write_pose_file(paths["gt"], bundle.gt, "euroc_gt_csv")
    else:
        del paths["gt"]
    return paths
