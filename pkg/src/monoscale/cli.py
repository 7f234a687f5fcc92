"""Command-line front end: ``monoscale {simulate,estimate,evaluate,rescale}``.

stdout carries only the ``key = value`` summary of a run; diagnostics go to
stderr. Every run writes ``manifest.json`` into its output directory.

Exit codes:
    0  success
    2  missing or unusable input (absent flag or file)
    3  invalid configuration value or command-line usage error
    4  malformed input file (parse or integrity error)
    5  no valid frame pair in the measurement stream
    6  timestamp alignment with ground truth failed
    7  output directory not writable
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    BUNDLE_FILES,
    SequenceBundle,
    load_bundle,
    parse_pose_file,
    parse_calib,
    write_bundle,
    write_pose_file,
)
from .errors import (
    AlignmentError,
    IntegrityError,
    InvalidConfigError,
    InvalidInputError,
    NoValidPairsError,
    ParseError,
)
from .evaluation import rescale_trajectory, total_distance, write_series_csv
from .geometry import FrameTag
from .imu import BiasState
from .pipeline import PipelineConfig, VEL_INIT, evaluate_run, highrate_poses, run_pipeline
from .records import positions_of
from .scale import ESTIMATORS, EstimatorParams, expand_estimators
from .synth import CALIB_PRESETS, KINDS, SynthConfig, make_bundle

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_INVALID_CONFIG = 3
EXIT_BAD_INPUT = 4
EXIT_NO_VALID = 5
EXIT_ALIGNMENT = 6
EXIT_UNWRITABLE = 7

log = logging.getLogger("monoscale")


class MissingInput(Exception):
    pass


class Unwritable(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors (unknown flag, bad choice) exit with the invalid-config code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID_CONFIG, f"{self.prog}: error: {message}\n")


def _vec3(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}") from None


def _input(path, flag) -> Path:
    if path is None:
        raise MissingInput(f"{flag} is required for this command")
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"{flag}: no such file: {p}")
    return p


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise Unwritable(f"cannot write to {out}: {exc}") from exc
    return out


def _emit(pairs: dict):
    for k, v in pairs.items():
        if isinstance(v, float):
            v = repr(v)
        print(f"{k} = {v}")


def _keyvalue_text(pairs: dict) -> str:
    return "".join(f"{k} = {repr(v) if isinstance(v, float) else v}\n" for k, v in pairs.items())


def _write_manifest(out: Path, args, outputs, extra=None):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": {
            "monoscale": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _pipeline_config(args) -> PipelineConfig:
    params = EstimatorParams(
        kf_q=args.kf_q,
        kf_r=args.kf_r,
        kf_p0=args.kf_p0,
        ar_order=args.ar_order,
    )
    return PipelineConfig(
        estimators=expand_estimators(args.estimator),
        params=params,
        vel_init=args.vel_init,
        bias=BiasState(),
        seed=args.seed,
    ).validate()


def _load(args, need_gt=False) -> SequenceBundle:
    imu = _input(args.imu, "--imu")
    poses = _input(args.poses, "--poses")
    calib = _input(args.calib, "--calib") if args.calib else None
    gt = None
    if need_gt or args.gt or args.vel_init == "gt":
        gt = _input(args.gt, "--gt")
    bundle = load_bundle(imu, poses, calib, gt)
    if args.gravity is not None:
        bundle.gravity = np.array(args.gravity)
    return bundle


def _summary(result) -> dict:
    out = {}
    for name, value in result.estimates.items():
        out[f"lambda_hat.{name}"] = math.nan if value is None else float(value)
    out["pairs"] = len(result.measurements)
    out["valid_pairs"] = result.n_valid
    out["vel_init"] = result.vel_init
    for k, v in result.notes.items():
        out[f"note.{k}"] = v
    return out


def cmd_estimate(args) -> int:
    cfg = _pipeline_config(args)
    bundle = _load(args)
    out = _outdir(args.out)
    result = run_pipeline(bundle, cfg)
    summary = _summary(result)
    files = [out / "lambda_series.csv", out / "summary.txt"]
    write_series_csv(files[0], result.series)
    files[1].write_text(_keyvalue_text(summary))
    if args.highrate:
        files.append(out / "highrate_tum.txt")
        write_pose_file(files[-1], highrate_poses(bundle, result, cfg), "tum_txt")
    _write_manifest(out, args, files + [out / "manifest.json"])
    _emit(summary)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _pipeline_config(args)
    bundle = _load(args, need_gt=True)
    out = _outdir(args.out)
    result = run_pipeline(bundle, cfg)
    report = evaluate_run(bundle, result)
    files = list(report.write(out))
    summary = _summary(result)
    files.append(out / "summary.txt")
    files[-1].write_text(_keyvalue_text(summary))
    _write_manifest(out, args, files + [out / "manifest.json"])
    sys.stdout.write(report.to_keyvalue())
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SynthConfig(
        kind=args.kind,
        duration=args.duration,
        imu_rate=args.imu_rate,
        frame_rate=args.frame_rate,
        true_lambda=args.true_lambda,
        accel_noise=args.accel_noise,
        gyro_noise=args.gyro_noise,
        mono_noise_rel=args.mono_noise,
        dash_accel_noise=args.dash_noise,
        calib=args.calib_preset,
        seed=args.seed,
        t0_ns=args.t0_ns,
    )
    if args.gravity is not None:
        cfg.gravity = args.gravity
    cfg.validate()
    out = _outdir(args.out)
    bundle = make_bundle(cfg)
    paths = write_bundle(out, bundle)
    _write_manifest(out, args, list(paths.values()) + [out / "manifest.json"], {"synth": asdict(cfg)})
    summary = {f"{k}_file": str(p) for k, p in paths.items()}
    summary.update(imu_samples=len(bundle.imu), frames=len(bundle.mono), true_lambda=float(cfg.true_lambda))
    _emit(summary)
    return EXIT_OK


def _lambda_arg(text: str, estimator: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    path = Path(text)
    if not path.is_file():
        raise MissingInput(f"--lambda: not a number and no such summary file: {text}")
    names = expand_estimators(estimator)
    key = f"lambda_hat.{names[0]}"
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            if k == key:
                return float(v)
    raise InvalidConfigError(f"{path} has no entry {key!r}")


def cmd_rescale(args) -> int:
    poses_path = _input(args.poses, "--poses")
    if args.lambda_ is None:
        raise MissingInput("--lambda is required for rescale")
    lam = _lambda_arg(args.lambda_, args.estimator)
    if not lam > 0:
        raise InvalidConfigError(f"--lambda must be positive, got {lam}")
    poses = parse_pose_file(poses_path, "tum_txt", "monocular", FrameTag.W)
    if args.calib:
        T = parse_calib(_input(args.calib, "--calib")).T_IC
        poses = [p.replace(position=T.apply(p.position), orientation=T.rotation @ p.orientation, quaternion=None) for p in poses]
    out = _outdir(args.out)
    scaled = rescale_trajectory(positions_of(poses), lam)
    rescaled = [p.replace(position=x) for p, x in zip(poses, scaled)]
    target = out / "rescaled_tum.txt"
    write_pose_file(target, rescaled, "tum_txt")
    _write_manifest(out, args, [target, out / "manifest.json"], {"lambda": lam})
    summary = {"lambda": lam, "poses": len(poses), "output": str(target)}
    if len(poses) >= 2:
        summary["total_distance_input"] = total_distance(positions_of(poses))
        summary["total_distance_rescaled"] = total_distance(scaled)
    _emit(summary)
    return EXIT_OK


def _add_pipeline_flags(p):
    p.add_argument("--imu", help="EuRoC IMU CSV")
    p.add_argument("--poses", help="monocular poses, TUM text in the vision frame")
    p.add_argument("--gt", help="EuRoC ground-truth CSV")
    p.add_argument("--calib", help="key-value calibration file (gravity, T_IC)")
    p.add_argument("--estimator", default="ma-log", help=f"one of {', '.join(ESTIMATORS)}, a comma list, or 'all'")
    p.add_argument("--kf-q", type=float, default=1e-5, help="KF process noise q >= 0")
    p.add_argument("--kf-r", type=float, default=1e-2, help="KF measurement noise r > 0")
    p.add_argument("--kf-p0", type=float, default=1.0, help="KF initial variance > 0")
    p.add_argument("--ar-order", type=int, default=4, help="AR filter order >= 1")
    p.add_argument("--gravity", type=_vec3, help="gravity reaction vector X,Y,Z (overrides calib)")
    p.add_argument("--vel-init", choices=VEL_INIT, default="mono-fd")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monoscale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the monocular scale from IMU data")
    _add_pipeline_flags(p)
    p.add_argument("--highrate", action="store_true", help="also write IMU-rate metric poses")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="estimate and compare with ground truth")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="write a synthetic sequence")
    p.add_argument("--kind", choices=KINDS, default="circle")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--imu-rate", type=float, default=200.0)
    p.add_argument("--frame-rate", type=float, default=20.0)
    p.add_argument("--lambda", dest="true_lambda", type=float, default=1.0, help="true scale")
    p.add_argument("--accel-noise", type=float, default=0.0)
    p.add_argument("--gyro-noise", type=float, default=0.0)
    p.add_argument("--mono-noise", type=float, default=0.0, help="relative to inter-frame distance")
    p.add_argument("--dash-noise", type=float, default=0.0, help="extra accel noise during dashes")
    p.add_argument("--calib-preset", choices=CALIB_PRESETS, default="identity")
    p.add_argument("--gravity", type=_vec3)
    p.add_argument("--t0-ns", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rescale", help="multiply monocular positions by a scale")
    p.add_argument("--poses", help="TUM pose file")
    p.add_argument("--lambda", dest="lambda_", help="scale value, or a summary/report file")
    p.add_argument("--estimator", default="ma-log", help="key to read from a summary file")
    p.add_argument("--calib", help="apply T_IC before rescaling")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rescale)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage error, --help or --version
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID_CONFIG
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING_INPUT
    except InvalidConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID_CONFIG
    except (ParseError, IntegrityError, InvalidInputError) as exc:
        log.error("bad input: %s", exc)
        return EXIT_BAD_INPUT
    except NoValidPairsError as exc:
        log.error("no valid measurements: %s", exc)
        return EXIT_NO_VALID
    except AlignmentError as exc:
        log.error("alignment failed: %s", exc)
        return EXIT_ALIGNMENT
    except (Unwritable, OSError) as exc:
        log.error("%s", exc)
        return EXIT_UNWRITABLE


if __name__ == "__main__":
    sys.exit(main())
