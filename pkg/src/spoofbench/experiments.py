"""Experiment protocols and the driving-decision stub.

Every experiment is a deterministic function of (config, seed): scenes,
traces, and targets are derived from seeded generators, runs execute in a
fixed order, and CSV output uses fixed formatting, so repeated runs are
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .attack import (
    AttackTarget,
    DEFAULT_CORRIDOR_HALF_WIDTH,
    SamplingSpec,
    generate_adversarial,
    is_success,
)
from .detector import SurrogateDetector
from .errors import CapabilityViolation, ValidationError
from .features import RoiSpec, roi_filter
from .perception import PerceptionConfig, perceive
from .pointcloud import PointCloud, append
from .scene import Scene, SceneConfig
from .spoof import (
    LidarTimingModel,
    SpoofTrace,
    align_trace,
    conform_to_capability,
    sample_trace_library,
    transform_trace_3d,
)
from .transforms import TransformParams


def _config_from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    return cls(**coerced)


def load_config(cls, path=None, overrides: dict | None = None):
    data = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"config {path} must be a mapping")
        data.update(loaded)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return _config_from_dict(cls, data)


# ---------------------------------------------------------------------------
# Driving-decision stub


@dataclass(frozen=True)
class DecisionConfig:
    corridor_half_width: float = DEFAULT_CORRIDOR_HALF_WIDTH
    stop_distance_m: float = 15.0  # side passing needs at least this much room

    def __post_init__(self):
        if self.corridor_half_width <= 0 or self.stop_distance_m <= 0:
            raise ValidationError("decision distances must be positive")


@dataclass(frozen=True)
class DecisionState:
    decision: str  # PROCEED | STOP
    nearest_front_obstacle_distance: float | None


def decide(obstacles: list, cfg: DecisionConfig | None = None) -> DecisionState:
    """STOP iff an obstacle sits in the front corridor closer than the
    side-pass minimum; pure function of the obstacle list."""
    cfg = cfg or DecisionConfig()
    front = [
        o.center_x
        for o in obstacles
        if o.center_x > 0 and abs(o.center_y) <= cfg.corridor_half_width
    ]
    if not front:
        return DecisionState("PROCEED", None)
    nearest = min(front)
    decision = "STOP" if nearest < cfg.stop_distance_m else "PROCEED"
    return DecisionState(decision, nearest)


# ---------------------------------------------------------------------------
# Shared run machinery


@dataclass
class AttackRecord:
    scene_seed: int
    budget: int
    mode: str
    target_distance: float
    success: bool
    compliant: bool
    best_loss: float
    best_params: TransformParams
    trace: SpoofTrace | None


def _scene_seed(seed: int, index: int) -> int:
    return seed * 1_000_003 + index


def _target_distance(scene_seed: int, lo: float, hi: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([0x7A86, scene_seed]))
    return float(rng.uniform(lo, hi))


def _sampling_spec(mode: str, cfg) -> SamplingSpec:
    if mode not in ("vanilla", "sampling"):
        raise ValidationError(f"unknown optimizer mode {mode!r}")
    n = 1 if mode == "vanilla" else cfg.n_samples
    return SamplingSpec(
        n=n, max_iterations=cfg.max_iterations, learning_rate=cfg.learning_rate
    )


def _scene_config(background: str, scene_path=None, **kwargs) -> SceneConfig:
    return SceneConfig(kind=background, path=scene_path, **kwargs)


# ---------------------------------------------------------------------------
# Success-rate experiment


@dataclass(frozen=True)
class SuccessExperimentConfig:
    scenes: int = 50
    seed: int = 0
    budgets: tuple = (20, 40, 60)
    modes: tuple = ("vanilla", "sampling")
    background: str = "synthetic_traffic"
    scene_path: str | None = None
    target_min_m: float = 3.0
    target_max_m: float = 7.0
    distance_band: tuple = (2.0, 8.0)
    mask_sigma: float = 8.0
    n_samples: int = 5
    max_iterations: int = 50
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.scenes < 1:
            raise ValidationError("need at least one scene")
        for b in self.budgets:
            if b not in (0, 20, 40, 60):
                raise ValidationError(f"budget {b} not in {{0, 20, 40, 60}}")


def run_success_experiment(cfg: SuccessExperimentConfig):
    """Per (budget, mode): fraction of scenes where the attack succeeds.

    Budget 0 is the no-spoofed-points control and never succeeds.
    Returns (rows, records); rows are dicts ready for CSV."""
    detector = SurrogateDetector()
    pcfg = PerceptionConfig()
    roi = RoiSpec()
    timing = LidarTimingModel.vlp16()
    records = []
    for i in range(cfg.scenes):
        seed = _scene_seed(cfg.seed, i)
        scene = Scene(seed, _scene_config(cfg.background, cfg.scene_path))
        X = roi_filter(scene.frame_cloud(0), roi)
        d = _target_distance(seed, cfg.target_min_m, cfg.target_max_m)
        target = AttackTarget.front(
            d, distance_band=cfg.distance_band, mask_sigma=cfg.mask_sigma
        )
        for budget in cfg.budgets:
            if budget == 0:
                for mode in cfg.modes:
                    records.append(
                        AttackRecord(seed, 0, mode, d, False, True, float("nan"), TransformParams.identity(), None)
                    )
                continue
            T = align_trace(sample_trace_library(timing, budget, seed=seed * 100 + budget))
            for mode in cfg.modes:
                spec = _sampling_spec(mode, cfg)
                result = generate_adversarial(X, T, detector, target, spec, pcfg, roi)
                records.append(
                    AttackRecord(
                        seed,
                        budget,
                        mode,
                        d,
                        result.success,
                        result.compliant,
                        result.best_loss,
                        result.best_params,
                        result.adversarial_trace,
                    )
                )
    rows = []
    for budget in cfg.budgets:
        for mode in cfg.modes:
            runs = [r for r in records if r.budget == budget and r.mode == mode]
            successes = sum(r.success for r in runs)
            rows.append(
                {
                    "budget": budget,
                    "mode": mode,
                    "scenes": len(runs),
                    "successes": successes,
                    "success_rate": successes / len(runs) if runs else 0.0,
                }
            )
    return rows, records


def write_success_csv(rows: list, path) -> None:
    with open(path, "w") as fh:
        fh.write("budget,mode,scenes,successes,success_rate\n")
        for row in rows:
            fh.write(
                f"{row['budget']},{row['mode']},{row['scenes']},{row['successes']},"
                f"{row['success_rate']:.6f}\n"
            )


# ---------------------------------------------------------------------------
# Robustness experiments


@dataclass(frozen=True)
class RobustnessConfig:
    scenes: int = 12
    seed: int = 0
    budgets: tuple = (20, 40, 60)
    mode: str = "sampling"
    background: str = "synthetic_traffic"
    scene_path: str | None = None
    target_min_m: float = 3.0
    target_max_m: float = 7.0
    distance_band: tuple = (2.0, 8.0)
    mask_sigma: float = 8.0
    n_samples: int = 5
    max_iterations: int = 50
    learning_rate: float = 1e-4
    frame_offsets: int = 15
    jitter_sigma: float = 0.02
    resamples: int = 5


def _successful_attacks(cfg: RobustnessConfig, budget: int):
    """Attack each scene once; yield the successful ones with their
    context (scene, target, trace seed)."""
    detector = SurrogateDetector()
    pcfg = PerceptionConfig()
    roi = RoiSpec()
    timing = LidarTimingModel.vlp16()
    out = []
    for i in range(cfg.scenes):
        seed = _scene_seed(cfg.seed, i)
        scene = Scene(
            seed,
            _scene_config(cfg.background, cfg.scene_path, jitter_sigma=cfg.jitter_sigma),
        )
        X = roi_filter(scene.frame_cloud(0), roi)
        d = _target_distance(seed, cfg.target_min_m, cfg.target_max_m)
        target = AttackTarget.front(
            d, distance_band=cfg.distance_band, mask_sigma=cfg.mask_sigma
        )
        trace_seed = seed * 100 + budget
        T = align_trace(sample_trace_library(timing, budget, seed=trace_seed))
        result = generate_adversarial(
            X, T, detector, target, _sampling_spec(cfg.mode, cfg), pcfg, roi
        )
        if result.success:
            out.append((scene, target, trace_seed, T, result))
    return out, detector, pcfg, roi, timing


def run_frame_robustness(cfg: RobustnessConfig):
    """Apply each successful spoof trace unchanged to the next frames of
    its scene; report success rate per frame offset (one row per budget
    and offset, offsets 1..frame_offsets)."""
    rows = []
    for budget in cfg.budgets:
        attacks, detector, pcfg, roi, _ = _successful_attacks(cfg, budget)
        for offset in range(1, cfg.frame_offsets + 1):
            successes = 0
            for scene, target, _, _, result in attacks:
                frame = roi_filter(scene.frame_cloud(offset), roi)
                baseline = perceive(frame, pcfg, roi, detector)
                x_prime = append(frame, result.adversarial_trace.points)
                if is_success(
                    x_prime, target, pcfg, roi, detector, baseline_obstacles=baseline
                ):
                    successes += 1
            rows.append(
                {
                    "budget": budget,
                    "frame_offset": offset,
                    "attacks": len(attacks),
                    "successes": successes,
                    "success_rate": successes / len(attacks) if attacks else 0.0,
                }
            )
    return rows


def run_trace_robustness(cfg: RobustnessConfig):
    """Re-synthesize fresh traces with new seeds, replay the stored best
    transform, and report per-resample success (one row per budget and
    resample index)."""
    rows = []
    for budget in cfg.budgets:
        attacks, detector, pcfg, roi, timing = _successful_attacks(cfg, budget)
        for j in range(1, cfg.resamples + 1):
            successes = 0
            for scene, target, trace_seed, _, result in attacks:
                X = roi_filter(scene.frame_cloud(0), roi)
                fresh = align_trace(
                    sample_trace_library(timing, budget, seed=trace_seed + 7919 * j)
                )
                try:
                    emitted = conform_to_capability(
                        transform_trace_3d(fresh, result.best_params), timing
                    )
                except CapabilityViolation:
                    continue
                baseline = perceive(X, pcfg, roi, detector)
                if is_success(
                    append(X, emitted.points),
                    target,
                    pcfg,
                    roi,
                    detector,
                    baseline_obstacles=baseline,
                ):
                    successes += 1
            rows.append(
                {
                    "budget": budget,
                    "resample": j,
                    "attacks": len(attacks),
                    "successes": successes,
                    "success_rate": successes / len(attacks) if attacks else 0.0,
                }
            )
    return rows


def write_robustness_csv(rows: list, path, index_key: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"budget,{index_key},attacks,successes,success_rate\n")
        for row in rows:
            fh.write(
                f"{row['budget']},{row[index_key]},{row['attacks']},{row['successes']},"
                f"{row['success_rate']:.6f}\n"
            )


# ---------------------------------------------------------------------------
# Driving-decision scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    background: str = "synthetic_traffic"
    scene_path: str | None = None
    frame_count: int = 10
    distance_band: tuple = (2.0, 8.0)
    budget: int = 60
    mode: str = "sampling"
    target_distance_m: float = 5.0
    mask_sigma: float = 8.0
    attack_start: int = 3  # emergency_brake: first attacked frame
    ego_speed: float = 12.0  # m/s while moving (43 km/h ~ 12)
    jitter_sigma: float = 0.0
    n_samples: int = 5
    max_iterations: int = 50
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError("frame_count must be >= 1")
        if self.budget not in (20, 40, 60):
            raise ValidationError("scenario budget must be 20, 40, or 60")


def run_scenario(kind: str, spec: ScenarioSpec, attack: bool = True) -> list:
    """Per-frame decision timeline for the two case studies.

    av_freezing: static scene, the same adversarial trace injected every
    frame.  emergency_brake: moving scene, a fresh attack from
    ``attack_start`` on.  With ``attack`` false the unattacked control
    timeline is produced."""
    if kind not in ("av_freezing", "emergency_brake"):
        raise ValidationError(f"unknown scenario {kind!r}")
    detector = SurrogateDetector()
    pcfg = PerceptionConfig()
    roi = RoiSpec()
    timing = LidarTimingModel.vlp16()
    dcfg = DecisionConfig()
    moving = kind == "emergency_brake"
    scene = Scene(
        spec.seed,
        _scene_config(
            spec.background,
            spec.scene_path,
            jitter_sigma=spec.jitter_sigma,
            ego_speed=spec.ego_speed if moving else 0.0,
        ),
    )
    target = AttackTarget.front(
        spec.target_distance_m, distance_band=spec.distance_band, mask_sigma=spec.mask_sigma
    )
    spec_opt = SamplingSpec(
        n=1 if spec.mode == "vanilla" else spec.n_samples,
        max_iterations=spec.max_iterations,
        learning_rate=spec.learning_rate,
    )

    frozen_result = None
    if attack and not moving:
        X0 = roi_filter(scene.frame_cloud(0), roi)
        T = align_trace(
            sample_trace_library(timing, spec.budget, seed=spec.seed * 100 + spec.budget)
        )
        frozen_result = generate_adversarial(X0, T, detector, target, spec_opt, pcfg, roi)

    timeline = []
    for f in range(spec.frame_count):
        X = roi_filter(scene.frame_cloud(f), roi)
        attacked = attack and (not moving or f >= spec.attack_start)
        success = False
        cloud = X
        if attacked and moving:
            T = align_trace(
                sample_trace_library(
                    timing, spec.budget, seed=spec.seed * 100 + spec.budget + 17 * f
                )
            )
            result = generate_adversarial(X, T, detector, target, spec_opt, pcfg, roi)
            success = result.success
            cloud = result.adversarial_cloud
        elif attacked:
            success = frozen_result.success
            if frozen_result.adversarial_trace is not None:
                cloud = append(X, frozen_result.adversarial_trace.points)
        obstacles = perceive(cloud, pcfg, roi, detector)
        state = decide(obstacles, dcfg)
        timeline.append(
            {
                "frame": f,
                "attacked": attacked,
                "attack_success": success,
                "decision": state.decision,
                "nearest_front_distance": state.nearest_front_obstacle_distance,
            }
        )
    return timeline


def write_timeline_csv(timeline: list, path) -> None:
    with open(path, "w") as fh:
        fh.write("frame,attacked,attack_success,decision,nearest_front_distance\n")
        for row in timeline:
            near = row["nearest_front_distance"]
            near_s = "" if near is None else f"{near:.6f}"
            fh.write(
                f"{row['frame']},{int(row['attacked'])},{int(row['attack_success'])},"
                f"{row['decision']},{near_s}\n"
            )
