"""Command-line interface.

Subcommands: perceive, spoof-synth, attack, exp-success,
exp-frame-robust, exp-trace-robust, scenario, selftest.  Exit codes:
0 on success, 1 on selftest failure, 2 on validation errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .attack import (
    AttackTarget,
    SamplingSpec,
    generate_adversarial,
    save_attack_result,
)
from .detector import SurrogateDetector, load_params
from .errors import ValidationError
from .experiments import (
    DecisionConfig,
    RobustnessConfig,
    ScenarioSpec,
    SuccessExperimentConfig,
    decide,
    load_config,
    run_frame_robustness,
    run_scenario,
    run_success_experiment,
    run_trace_robustness,
    write_robustness_csv,
    write_success_csv,
    write_timeline_csv,
)
from .features import RoiSpec, roi_filter
from .perception import PerceptionConfig, perceive, save_obstacles
from .pointcloud import load_pointcloud
from .scene import Scene, SceneConfig
from .spoof import LidarTimingModel, align_trace, sample_trace_library, save_trace
from .selftest import run_selftest


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detector(args) -> SurrogateDetector:
    if getattr(args, "detector_params", None):
        return SurrogateDetector(load_params(args.detector_params))
    return SurrogateDetector()


def _load_scene_cloud(args):
    if args.input:
        return load_pointcloud(args.input)
    cfg = SceneConfig(kind=args.background)
    return Scene(args.seed, cfg).frame_cloud(0)


def cmd_perceive(args) -> int:
    out = _outdir(args)
    cloud = load_pointcloud(args.input)
    roi = RoiSpec(range_m=args.range)
    obstacles = perceive(cloud, PerceptionConfig(), roi, _detector(args))
    save_obstacles(obstacles, out / "obstacles.jsonl")
    state = decide(obstacles, DecisionConfig())
    print(f"{len(obstacles)} obstacle(s); decision {state.decision}")
    for obs in obstacles:
        print(
            f"  {obs.label} at ({obs.center_x:.2f}, {obs.center_y:.2f}) m, "
            f"{obs.point_count} pts, LxWxH {obs.length:.2f}x{obs.width:.2f}x{obs.height:.2f}"
        )
    return 0


def cmd_spoof_synth(args) -> int:
    out = _outdir(args)
    trace = sample_trace_library(LidarTimingModel.vlp16(), args.budget, args.seed)
    save_trace(trace, out / "trace", args.format)
    print(f"synthesized {len(trace)} spoofed points (budget {trace.budget}) into {out}")
    return 0


def cmd_attack(args) -> int:
    out = _outdir(args)
    cloud = _load_scene_cloud(args)
    roi = RoiSpec()
    X = roi_filter(cloud, roi)
    timing = LidarTimingModel.vlp16()
    T = align_trace(sample_trace_library(timing, args.budget, args.seed))
    target = AttackTarget.front(args.target_distance)
    spec = SamplingSpec(
        n=1 if args.mode == "vanilla" else args.samples,
        max_iterations=args.iterations,
    )
    result = generate_adversarial(X, T, _detector(args), target, spec, PerceptionConfig(), roi)
    save_attack_result(result, out, args.format)
    print(
        f"attack {'succeeded' if result.success else 'failed'}; "
        f"best loss {result.best_loss:.6f} at "
        f"(theta={result.best_params.theta:.4f}, tau_x={result.best_params.tau_x:.3f}, "
        f"s_h={result.best_params.s_h:.3f})"
    )
    return 0


def cmd_exp_success(args) -> int:
    out = _outdir(args)
    cfg = load_config(
        SuccessExperimentConfig, args.config, {"seed": args.seed, "budgets": _budgets(args)}
    )
    rows, records = run_success_experiment(cfg)
    write_success_csv(rows, out / "success.csv")
    with open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "scene_seed": r.scene_seed,
                        "budget": r.budget,
                        "mode": r.mode,
                        "target_distance": round(r.target_distance, 6),
                        "success": r.success,
                        "compliant": r.compliant,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    for row in rows:
        print(
            f"budget {row['budget']:>2} {row['mode']:<8} "
            f"{row['successes']}/{row['scenes']} = {row['success_rate']:.3f}"
        )
    return 0


def cmd_exp_frame_robust(args) -> int:
    out = _outdir(args)
    cfg = load_config(
        RobustnessConfig, args.config, {"seed": args.seed, "budgets": _budgets(args)}
    )
    rows = run_frame_robustness(cfg)
    write_robustness_csv(rows, out / "frame_robustness.csv", "frame_offset")
    print(f"wrote {len(rows)} rows to {out / 'frame_robustness.csv'}")
    return 0


def cmd_exp_trace_robust(args) -> int:
    out = _outdir(args)
    cfg = load_config(
        RobustnessConfig, args.config, {"seed": args.seed, "budgets": _budgets(args)}
    )
    rows = run_trace_robustness(cfg)
    write_robustness_csv(rows, out / "trace_robustness.csv", "resample")
    print(f"wrote {len(rows)} rows to {out / 'trace_robustness.csv'}")
    return 0


def cmd_scenario(args) -> int:
    out = _outdir(args)
    spec = load_config(
        ScenarioSpec,
        args.config,
        {"seed": args.seed, "budget": args.budget, "mode": args.mode},
    )
    timeline = run_scenario(args.kind, spec, attack=not args.no_attack)
    write_timeline_csv(timeline, out / "timeline.csv")
    stops = sum(1 for row in timeline if row["decision"] == "STOP")
    print(f"{args.kind}: {stops}/{len(timeline)} STOP frames")
    return 0


def cmd_selftest(args) -> int:
    return run_selftest(verbose=True)


def _budgets(args):
    if getattr(args, "budget", None) is None:
        return None
    return (args.budget,)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoofbench",
        description="LiDAR perception pipeline with a spoofed-point attack workbench "
        f"(kernel backend: {kernels.BACKEND})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget=True, mode=True):
        p.add_argument("--config", type=str, default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=0, help="experiment seed")
        p.add_argument("--out", type=str, default="out", help="output directory")
        if budget:
            p.add_argument("--budget", type=int, choices=(20, 40, 60), default=None)
        if mode:
            p.add_argument("--mode", choices=("vanilla", "sampling"), default=None)

    p = sub.add_parser("perceive", help="run the perception pipeline on a point file")
    p.add_argument("--input", required=True, help="point cloud file (.csv or .bin)")
    p.add_argument("--range", type=float, default=60.0)
    p.add_argument("--detector-params", type=str, default=None)
    common(p, budget=False, mode=False)
    p.set_defaults(func=cmd_perceive)

    p = sub.add_parser("spoof-synth", help="synthesize a spoof trace library entry")
    common(p, mode=False)
    p.add_argument("--format", choices=("csv", "packed-binary"), default="csv")
    p.set_defaults(func=cmd_spoof_synth, budget=60)

    p = sub.add_parser("attack", help="generate an adversarial spoofed cloud")
    common(p)
    p.add_argument("--input", type=str, default=None, help="scene point file; omit for synthetic")
    p.add_argument("--background", choices=("empty_road", "synthetic_traffic"), default="synthetic_traffic")
    p.add_argument("--target-distance", type=float, default=5.0)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--format", choices=("csv", "packed-binary"), default="csv")
    p.add_argument("--detector-params", type=str, default=None)
    p.set_defaults(func=cmd_attack)
    p.set_defaults(budget=60, mode="sampling")

    p = sub.add_parser("exp-success", help="success-rate table over seeded scenes")
    common(p, mode=False)
    p.set_defaults(func=cmd_exp_success)

    p = sub.add_parser("exp-frame-robust", help="persistence over consecutive frames")
    common(p, mode=False)
    p.set_defaults(func=cmd_exp_frame_robust)

    p = sub.add_parser("exp-trace-robust", help="robustness to re-synthesized traces")
    common(p, mode=False)
    p.set_defaults(func=cmd_exp_trace_robust)

    p = sub.add_parser("scenario", help="driving-decision case studies")
    p.add_argument("--kind", choices=("emergency_brake", "av_freezing"), required=True)
    p.add_argument("--no-attack", action="store_true", help="unattacked control run")
    common(p)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("selftest", help="quick internal consistency battery")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {"budget": None, "mode": None}
    for key, val in defaults.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
