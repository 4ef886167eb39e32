"""Command-line front end.

Subcommands: ``rig``, ``synth``, ``lift``, ``fit``, ``eval``, ``gradcheck``,
``sample-cameras``.  Every input and output is JSON carrying a
``schema_version`` field (schemas documented in ``docs/schemas.md``).

Conventions
-----------
* The primary artifact goes to ``--out`` when given, else to stdout so
  commands compose in shell pipelines; a run report (command, config,
  seed, wall time, outputs, summary) goes to stdout when ``--out`` is
  given, else to stderr.
* Validation problems exit 1, numerical failures exit 2, both with a
  machine-readable ``{"error": {"code", "message"}}`` on stderr.
* Commands that draw randomness require ``--seed``; nothing is seeded
  implicitly.
* ``FLK_LOG`` sets the log level (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .errors import FlkError, NumericalError, SchemaError, ValidationError
from .fitter import FitOptions, fit_monocular
from .geometry import CameraSpaceConfig, SamplerStats, camera_from_pose, project_array, sample_camera
from .landmarks import LandmarkSet2D, LandmarkSet3D
from .lifting import LiftOptions, lift_multiview, observations_from_scene
from .masking import NormalTemplate, default_normal_template
from .metrics import EvalSample, cross_dataset_nme, nme, nmlc
from .synthgen import (
    NoiseConfig,
    Scene,
    make_default_rig,
    make_face_layout,
    make_scene,
    rig_from_json,
    rig_to_json,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        sys.exit(EXIT_VALIDATION)


def _emit_error(code: str, message: str):
    json.dump({"error": {"code": code, "message": message}}, sys.stderr)
    sys.stderr.write("\n")


def _atomic_write(path: Path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path):
    if path == "-":
        return json.load(sys.stdin)
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON in {path}: {exc}")


def _deliver(args, payload: dict, report: dict):
    """Artifact to --out (or stdout), report to stdout (or stderr)."""
    if getattr(args, "out", None):
        _atomic_write(Path(args.out), payload)
        report["outputs"] = [str(args.out)]
        json.dump(report, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    else:
        report["outputs"] = []
        json.dump(payload, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        json.dump(report, sys.stderr, sort_keys=True)
        sys.stderr.write("\n")


def _report(args, started: float, seed=None, summary=None) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    return {"schema_version": SCHEMA_VERSION, "command": args.command, "config": config,
            "seed": seed, "wall_time_ms": round((time.time() - started) * 1000.0, 3),
            "summary": summary or {}}


def _camera_config(args) -> CameraSpaceConfig:
    if getattr(args, "config", None):
        return CameraSpaceConfig.from_json(_load_json(args.config))
    return CameraSpaceConfig()


def _noise_config(args) -> NoiseConfig:
    return NoiseConfig(kind=args.noise, sigma=args.sigma, dropout_rate=args.dropout)


# ---------------------------------------------------------------------------
# subcommands


def cmd_rig(args):
    started = time.time()
    rig = make_default_rig()
    payload = rig_to_json(rig)
    _deliver(args, payload, _report(args, started, summary={"n_views": len(rig)}))
    return EXIT_OK


def cmd_synth(args):
    started = time.time()
    rig = rig_from_json(_load_json(args.rig)) if args.rig else None
    scene = make_scene(args.seed, rig=rig, noise=_noise_config(args), cfg=_camera_config(args),
                       n_points=args.n_points, jitter=args.jitter)
    payload = scene.to_json()
    summary = {"n_views": scene.n_views, "n_points": scene.n_points,
               "noise": scene.noise.to_json()}
    _deliver(args, payload, _report(args, started, seed=args.seed, summary=summary))
    return EXIT_OK


def _lift_one(scene_obj: dict, options: LiftOptions) -> dict:
    scene = Scene.from_json(scene_obj)
    result = lift_multiview(observations_from_scene(scene), options)
    return {"schema_version": SCHEMA_VERSION, "lift": result.to_json(), "scene": scene_obj}


def cmd_lift(args):
    started = time.time()
    options = LiftOptions(excluded_indices=() if args.include_all else "auto",
                          robust_kernel=args.robust)
    scene_path = args.scene or "-"

    if scene_path != "-" and Path(scene_path).is_dir():
        if not args.out:
            raise ValidationError("directory input requires --out DIRECTORY")
        scenes = sorted(Path(scene_path).glob("*.json"))
        if not scenes:
            raise ValidationError(f"no scene JSON files in {scene_path}")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        from joblib import Parallel, delayed

        payloads = Parallel(n_jobs=args.jobs)(
            delayed(_lift_one)(_load_json(str(p)), options) for p in scenes)
        outputs = []
        for src, payload in zip(scenes, payloads):
            dst = out_dir / src.name
            _atomic_write(dst, payload)
            outputs.append(str(dst))
        report = _report(args, started, summary={"n_scenes": len(outputs)})
        report["outputs"] = outputs
        json.dump(report, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK

    payload = _lift_one(_load_json(scene_path), options)
    lifted = payload["lift"]
    summary = {"n_valid": int(sum(lifted["valid"])), "final_cost": lifted["final_cost"],
               "iterations": lifted["iterations"]}
    _deliver(args, payload, _report(args, started, summary=summary))
    return EXIT_OK


def cmd_fit(args):
    started = time.time()
    detections = LandmarkSet2D.from_json(_require(_load_json(args.detections), "detections"))
    if args.template:
        tpl_obj = _load_json(args.template)
        template = LandmarkSet3D.from_json(_require(tpl_obj, "landmarks3d"))
        normal_template = NormalTemplate.from_json(_require(tpl_obj, "normal_template"))
        cfg = (CameraSpaceConfig.from_json(tpl_obj["config"]) if "config" in tpl_obj
               else _camera_config(args))
    else:
        template, normal_template = make_face_layout(0, jitter=0.0)
        cfg = _camera_config(args)
    options = FitOptions(lambda_offsets=args.lambda_off, max_iter=args.max_iters)
    result = fit_monocular(detections, template, normal_template, cfg, options)
    payload = {"schema_version": SCHEMA_VERSION, "fit": result.to_json()}
    summary = {"final_cost": result.final_cost, "iterations": result.iterations,
               "converged": result.converged}
    _deliver(args, payload, _report(args, started, seed=args.seed, summary=summary))
    return EXIT_OK


def _require(obj: dict, key: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"input JSON missing field {key!r}")
    return obj[key]


def _samples_from_lift_output(obj: dict):
    """Evaluation samples from a lift output: projections of lifted vs true landmarks."""
    scene = Scene.from_json(_require(obj, "scene"))
    lift = _require(obj, "lift")
    lifted = LandmarkSet3D.from_json(lift["landmarks3d"])
    valid = np.asarray(lift["valid"], dtype=bool)
    samples = []
    for cam in scene.cameras:
        preds, _ = project_array(lifted.points[valid], cam)
        verts, _ = project_array(scene.gt_landmarks3d.points, cam)
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        h, w = float(hi[1] - lo[1]), float(hi[0] - lo[0])
        samples.append(EvalSample(preds=preds, verts=verts, bbox=(h, w)))
    return samples, np.nonzero(valid)[0]


def _load_samples(args):
    path = args.infile or "-"
    if path != "-" and Path(path).is_dir():
        files = sorted(Path(path).glob("*.json"))
        if not files:
            raise ValidationError(f"no sample JSON files in {path}")
        objs = [_load_json(str(p)) for p in files]
        return [EvalSample(preds=np.asarray(_require(o, "preds"), dtype=float),
                           verts=np.asarray(_require(o, "verts"), dtype=float),
                           bbox=tuple(_require(o, "bbox"))) for o in objs], None
    obj = _load_json(path)
    if "lift" in obj:
        return _samples_from_lift_output(obj)
    entries = _require(obj, "samples")
    return [EvalSample(preds=np.asarray(_require(o, "preds"), dtype=float),
                       verts=np.asarray(_require(o, "verts"), dtype=float),
                       bbox=tuple(_require(o, "bbox"))) for o in entries], None


def cmd_eval(args):
    started = time.time()
    samples, implied_definition = _load_samples(args)
    landmark_map = None
    if args.map:
        landmark_map = np.asarray(_require(_load_json(args.map), "map"))

    if args.metric == "nmlc":
        if landmark_map is not None:
            samples = [EvalSample(preds=s.preds[landmark_map.astype(int)], verts=s.verts,
                                  bbox=s.bbox) for s in samples]
        value, assignment = nmlc(samples)
    else:
        if args.definition:
            definition = np.asarray(_require(_load_json(args.definition), "indices"), dtype=int)
        elif implied_definition is not None:
            definition = implied_definition
        else:
            raise ValidationError("eval nme needs --definition (or a lift-output input)")
        value = cross_dataset_nme(samples, definition, landmark_map)
        assignment = definition

    payload = {"schema_version": SCHEMA_VERSION, "metric": args.metric, "value": value,
               "value_x100": 100.0 * value, "assignment": [int(k) for k in assignment]}
    summary = {"metric": args.metric, "value_x100": 100.0 * value,
               "n_samples": len(samples)}
    _deliver(args, payload, _report(args, started, summary=summary))
    return EXIT_OK


def cmd_gradcheck(args):
    started = time.time()
    results = gradcheck_mod.run_all(args.seed, draws=args.draws)
    worst = max(results.values())
    payload = {"schema_version": SCHEMA_VERSION, "seed": args.seed, "draws": args.draws,
               "max_relative_error": results, "threshold": args.threshold,
               "pass": bool(worst < args.threshold)}
    _deliver(args, payload, _report(args, started, seed=args.seed,
                                    summary={"worst": worst, "pass": bool(worst < args.threshold)}))
    return EXIT_OK if worst < args.threshold else EXIT_NUMERICAL


def cmd_sample_cameras(args):
    started = time.time()
    cfg = _camera_config(args)
    if args.template:
        template = LandmarkSet3D.from_json(_require(_load_json(args.template), "landmarks3d"))
    else:
        template, _ = make_face_layout(0, jitter=0.0)
    rng = np.random.default_rng(args.seed)
    stats = SamplerStats()
    poses = [sample_camera(rng, cfg, template, stats=stats) for _ in range(args.n)]
    payload = {"schema_version": SCHEMA_VERSION, "poses": [p.to_json() for p in poses],
               "stats": {"angle_proposals": stats.angle_proposals,
                         "angle_accepts": stats.angle_accepts,
                         "dt_proposals": stats.dt_proposals}}
    summary = {"n_poses": len(poses),
               "angle_acceptance": stats.angle_accepts / max(stats.angle_proposals, 1)}
    _deliver(args, payload, _report(args, started, seed=args.seed, summary=summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flk", description="Multi-view landmark lifting, fitting, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rig", parents=[], help="write the default 41-view rig")
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_rig)

    p = sub.add_parser("synth", help="generate a synthetic ground-truthed scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rig", help="rig JSON (default: builtin 41-view rig)")
    p.add_argument("--noise", choices=["none", "gaussian", "laplacian"], default="none")
    p.add_argument("--sigma", type=float, default=0.0, help="noise std in pixels")
    p.add_argument("--dropout", type=float, default=0.0, help="detection dropout rate")
    p.add_argument("--n-points", type=int, default=98)
    p.add_argument("--jitter", type=float, default=0.01, help="per-seed layout jitter")
    p.add_argument("--config", help="camera-space config JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("lift", help="lift a scene's detections to 3D")
    p.add_argument("--scene", help="scene JSON, directory of scenes, or - for stdin")
    p.add_argument("--out", help="output file (or directory for directory input)")
    p.add_argument("--jobs", type=int, default=1, help="parallel scenes for directory input")
    p.add_argument("--include-all", action="store_true",
                   help="keep landmarks excluded by default (pupils)")
    p.add_argument("--robust", action="store_true", help="Huber-reweight residuals")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("fit", help="fit pose and shape to monocular detections")
    p.add_argument("--detections", required=True, help="detections JSON")
    p.add_argument("--template", help="template JSON (default: builtin layout)")
    p.add_argument("--config", help="camera-space config JSON")
    p.add_argument("--lambda-off", type=float, default=1e-2)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, help="recorded in the report; the fit is deterministic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate predictions (NME / NMLC)")
    p.add_argument("metric", choices=["nme", "nmlc"])
    p.add_argument("--in", dest="infile", help="samples JSON, directory, lift output, or - for stdin")
    p.add_argument("--definition", help="JSON with the dataset vertex assignment {indices: [...]}")
    p.add_argument("--map", help="JSON index map {map: [...]} applied to predictions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sample-cameras", help="draw admissible camera poses")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--template", help="template JSON for the bbox rule (default: builtin layout)")
    p.add_argument("--config", help="camera-space config JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample_cameras)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FLK_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        _emit_error(exc.code, str(exc))
        return EXIT_NUMERICAL
    except FlkError as exc:
        _emit_error(exc.code, str(exc))
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        _emit_error("io", str(exc))
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
