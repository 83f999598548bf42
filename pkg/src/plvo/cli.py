"""Command-line entry point: simulate, run, evaluate, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .errors import VOError
from .pipeline import run_sequence
from .sim.formats import load_dataset, read_tum, save_dataset, write_tum
from .sim.metrics import evaluate_final_drift, evaluate_rpe
from .sim.simulator import (
    SceneSpec,
    SensorSpec,
    TrajectorySpec,
    generate_dataset,
    spec_from_dict,
)

EXIT_DATA = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _emit(payload: dict, out: str | None, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# spec assembly

_SENSOR_FLAGS = {
    "pixel_noise": float, "depth_noise_a": float, "depth_noise_b": float, "dropout": float,
    "corruption_prob": float, "corruption_bias": float, "depth_min": float, "depth_max": float,
    "mismatch_prob": float,
}
_SCENE_FLAGS = {"n_points": int, "n_lines": int, "extent": float, "style": str, "height": float}
_TRAJ_FLAGS = {"length": float, "frames": int, "angular_rate": float, "fps": float}


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="JSON file with 'scene', 'trajectory' and 'sensor' objects")
    for name, typ in {**_SCENE_FLAGS, **_SENSOR_FLAGS, **_TRAJ_FLAGS}.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--trajectory", dest="traj_style", choices=("arc", "straight", "orbit"))


def _specs_from_args(args) -> tuple[SceneSpec, TrajectorySpec, SensorSpec]:
    base = {"scene": {}, "trajectory": {}, "sensor": {}}
    if args.spec:
        try:
            loaded = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise VOError(f"cannot read spec file: {exc}") from exc
        for k in base:
            base[k].update(loaded.get(k, {}))
    for group, flags in (("scene", _SCENE_FLAGS), ("sensor", _SENSOR_FLAGS), ("trajectory", _TRAJ_FLAGS)):
        for name in flags:
            v = getattr(args, name, None)
            if v is not None:
                base[group][name] = v
    if getattr(args, "traj_style", None):
        base["trajectory"]["style"] = args.traj_style
    return (spec_from_dict(SceneSpec, base["scene"]),
            spec_from_dict(TrajectorySpec, base["trajectory"]),
            spec_from_dict(SensorSpec, base["sensor"]))


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    scene, traj, sensor = _specs_from_args(args)
    ds = generate_dataset(scene, traj, sensor, seed=args.seed)
    save_dataset(ds, args.out)
    print(json.dumps({"dataset": str(args.out), "frames": len(ds)}))
    return 0


def cmd_run(args) -> int:
    ds = load_dataset(args.dataset)
    cfg = _config_from_args(args)
    traj, results = run_sequence(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tum(out / "trajectory.txt", traj)
    with open(out / "diagnostics.jsonl", "w") as f:
        for r in results:
            d = r.diagnostics
            rec = {"frame": r.frame_id, "timestamp": r.timestamp, "status": r.status,
                   "counts": r.counts, "cloud_size": d.get("cloud_size", 0),
                   "inlier_ratio": d.get("inlier_ratio", {}), "n_tracks": d.get("n_tracks", 0),
                   "n_estimated": d.get("n_estimated", 0), "fused": len(d.get("fused", []))}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {"frames": len(results), "mode": cfg.mode,
               "fallback_frames": sum(r.status != "tracked" for r in results),
               "trajectory": str(out / "trajectory.txt")}
    if ds.groundtruth is not None and len(results):
        summary.update(evaluate_final_drift(traj, ds.groundtruth))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    est = read_tum(args.estimate)
    gt = read_tum(args.groundtruth)
    statuses = None
    if args.diagnostics:
        with open(args.diagnostics) as f:
            statuses = [json.loads(line)["status"] for line in f if line.strip()]
    metrics = evaluate_rpe(est, gt, args.interval)
    metrics.update(evaluate_final_drift(est, gt, statuses or []))
    _emit(metrics, args.out, "metrics.json")
    return 0


def _sweep_cell(job):
    scene, traj, sensor, cfg, prob, seed = job
    sensor = SensorSpec(**{**sensor.__dict__, "corruption_prob": prob})
    ds = generate_dataset(scene, traj, sensor, seed=seed)
    drifts = {}
    for mode in ("A", "B"):
        t, results = run_sequence(ds, cfg.replace(mode=mode, seed=seed))
        m = evaluate_final_drift(t, ds.groundtruth)
        drifts[mode] = {"final_error": m["final_error"], "losses": m["losses"]}
    return prob, seed, drifts


def run_sweep(scene, traj, sensor, cfg: PipelineConfig, probs, seeds, jobs: int = 1) -> dict:
    """Mode A vs Mode B final drift over a corrupted-depth grid, averaged over seeds."""
    work = [(scene, traj, sensor, cfg, p, s) for p in probs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            raw = list(ex.map(_sweep_cell, work))
    else:
        raw = [_sweep_cell(w) for w in work]
    cells = []
    for p in probs:
        rows = [d for q, _, d in raw if q == p]
        a = float(np.mean([r["A"]["final_error"] for r in rows]))
        b = float(np.mean([r["B"]["final_error"] for r in rows]))
        cells.append({"corruption_prob": p, "drift_A": a, "drift_B": b, "b_not_worse": b <= a,
                      "losses_A": int(sum(r["A"]["losses"] for r in rows)),
                      "losses_B": int(sum(r["B"]["losses"] for r in rows))})
    return {"seeds": list(seeds), "cells": cells}


def cmd_sweep(args) -> int:
    scene, traj, sensor = _specs_from_args(args)
    cfg = _config_from_args(args)
    probs = [float(x) for x in args.probs.split(",")]
    seeds = list(range(args.seed, args.seed + args.seeds))
    result = run_sweep(scene, traj, sensor, cfg, probs, seeds, args.jobs)
    table = ["corruption  drift_A   drift_B   B<=A"]
    for c in result["cells"]:
        table.append(f"{c['corruption_prob']:<10.3f}  {c['drift_A']:.5f}  {c['drift_B']:.5f}  "
                     f"{'yes' if c['b_not_worse'] else 'no'}")
    sys.stderr.write("\n".join(table) + "\n")
    _emit(result, args.out, "sweep.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plvo", description="Point-and-line visual odometry toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    _add_spec_flags(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the odometry on a dataset")
    r.add_argument("--dataset", required=True)
    r.add_argument("--mode", choices=("A", "B"))
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="compare an estimated trajectory with ground truth")
    e.add_argument("estimate")
    e.add_argument("groundtruth")
    e.add_argument("--interval", type=float, default=1.0)
    e.add_argument("--diagnostics", help="diagnostics.jsonl from 'run', for the loss count")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="Mode A vs Mode B over corrupted-depth probabilities")
    w.add_argument("--seed", type=int, default=0, help="first seed")
    w.add_argument("--seeds", type=int, default=5, help="number of seeds")
    w.add_argument("--probs", default="0.05,0.1,0.2")
    w.add_argument("--config")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out")
    _add_spec_flags(w)
    w.set_defaults(func=cmd_sweep, mode=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required: simulate, run, evaluate or sweep")
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    try:
        return args.func(args)
    except (VOError, OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
