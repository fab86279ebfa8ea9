"""Adversarial spoof placement.

The attack merges a spoofed feature grid into a scene grid through a
differentiable cell-wise merge, warps the spoofed grid with a rigid
feature-space transform (rotation about the sensor, translation along x,
height scaling) realized by bilinear resampling, and minimizes a
Gaussian-masked loss that rewards high objectness*positiveness at the
target cell.  Optimization combines an n x n grid of starts over
(rotation, translation) with Adam refinement; the best parameters are
replayed on the 3D points and the spoofed trace re-quantized onto the
sensor's angular grid before emission.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .detector import SurrogateDetector, extract_attribute
from .errors import CapabilityViolation, OptimizationError, ValidationError
from .features import (
    CH_COUNT,
    CH_DIRECTION,
    CH_DISTANCE,
    CH_MAX_HEIGHT,
    CH_MAX_INTENSITY,
    CH_MEAN_HEIGHT,
    CH_MEAN_INTENSITY,
    CH_NONEMPTY,
    DEFAULT_RANGE,
    GRID_SIZE,
    FeatureGrid,
    RoiSpec,
    extract_features,
    lattice_center,
)
from .optim import adam_minimize
from .perception import PerceptionConfig, perceive
from .pointcloud import PointCloud, append, save_pointcloud
from .spoof import LidarTimingModel, SpoofTrace, conform_to_capability, save_trace, transform_trace_3d
from .transforms import TransformParams, wrap_angle

DEFAULT_CORRIDOR_HALF_WIDTH = 1.75  # m, half of a standard 3.5 m lane
OBSTACLE_MATCH_RADIUS = 1.0  # m, for deciding an obstacle is new


@dataclass(frozen=True)
class AttackTarget:
    """Where the fake obstacle should appear, in grid cell coordinates."""

    px: float
    py: float
    distance_band: tuple = (2.0, 8.0)
    mask_sigma: float = 8.0  # cells

    def __post_init__(self):
        lo, hi = self.distance_band
        if not (0.0 < lo < hi):
            raise ValidationError(f"distance band {self.distance_band} must be positive and ordered")
        if self.mask_sigma <= 0.0:
            raise ValidationError("mask sigma must be positive")

    @classmethod
    def front(
        cls,
        distance_m: float,
        range_m: float = DEFAULT_RANGE,
        size: int = GRID_SIZE,
        distance_band: tuple = (2.0, 8.0),
        mask_sigma: float = 8.0,
    ) -> "AttackTarget":
        """Target straight ahead at the given distance."""
        cell = 2.0 * range_m / size
        px = (range_m - distance_m) / cell - 0.5
        py = size / 2.0 - 0.5
        return cls(px=px, py=py, distance_band=distance_band, mask_sigma=mask_sigma)

    def world_xy(self, range_m: float = DEFAULT_RANGE, size: int = GRID_SIZE) -> tuple:
        cell = 2.0 * range_m / size
        return range_m - (self.px + 0.5) * cell, range_m - (self.py + 0.5) * cell


@dataclass(frozen=True)
class SamplingSpec:
    """Start-grid and optimizer settings.

    l_theta defaults to the angle that sweeps a 2 m arc at the target
    range.  n is the per-axis sample count; n=1 degenerates to the single
    centered start (vanilla optimization).
    """

    l_tau: float = 12.5
    l_theta: float | None = None
    n: int = 5
    max_iterations: int = 100
    learning_rate: float = 1e-4
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.n < 1 or self.max_iterations < 0:
            raise ValidationError("need n >= 1 and max_iterations >= 0")
        if self.l_tau <= 0.0 or (self.l_theta is not None and self.l_theta <= 0.0):
            raise ValidationError("sampling bounds must be positive")

    def resolved_l_theta(self, target_distance_m: float) -> float:
        if self.l_theta is not None:
            return self.l_theta
        return 2.0 / max(target_distance_m, 1e-6)


@dataclass
class AttackResult:
    best_params: TransformParams
    best_loss: float
    success: bool
    adversarial_trace: SpoofTrace | None
    adversarial_cloud: PointCloud
    trajectories: list = field(default_factory=list)  # one list per start
    start_params: list = field(default_factory=list)
    compliant: bool = True
    diagnostics: str | None = None


def mask_field(target: AttackTarget, size: int) -> np.ndarray:
    """Unnormalized Gaussian mask, peak 1 at (px, py)."""
    u = np.arange(size)[:, None] - target.px
    v = np.arange(size)[None, :] - target.py
    sigma = max(target.mask_sigma, 1e-9)
    return np.exp(-(u * u + v * v) / (2.0 * sigma * sigma))


def merge(x: FeatureGrid, t_prime: FeatureGrid) -> FeatureGrid:
    """Cell-wise combination of a scene grid with a spoofed grid.

    Counts add; means are count-weighted; max_height is the elementwise
    max; max_intensity follows the highest point (ties keep the scene's
    value).  Cells where either side is empty pass the other side through
    unchanged, so the result matches re-extracting features from the
    union cloud.  Direction/distance are per-cell constants and retain
    the scene's values.
    """
    if x.data.shape != t_prime.data.shape or x.range_m != t_prime.range_m:
        raise ValidationError("merge requires identical grid geometry")
    cx = x.data[CH_COUNT]
    ct = t_prime.data[CH_COUNT]
    total = cx + ct
    occupied = total > 0
    safe_total = np.where(occupied, total, 1.0)

    out = np.zeros_like(x.data)
    out[CH_COUNT] = total
    out[CH_MEAN_HEIGHT] = np.where(
        occupied,
        (x.data[CH_MEAN_HEIGHT] * cx + t_prime.data[CH_MEAN_HEIGHT] * ct) / safe_total,
        0.0,
    )
    out[CH_MEAN_INTENSITY] = np.where(
        occupied,
        (x.data[CH_MEAN_INTENSITY] * cx + t_prime.data[CH_MEAN_INTENSITY] * ct) / safe_total,
        0.0,
    )

    xh = x.data[CH_MAX_HEIGHT]
    th = t_prime.data[CH_MAX_HEIGHT]
    out[CH_MAX_HEIGHT] = np.where(
        ct == 0, xh, np.where(cx == 0, th, np.maximum(xh, th))
    )
    x_wins = xh >= th
    out[CH_MAX_INTENSITY] = np.where(
        ct == 0,
        x.data[CH_MAX_INTENSITY],
        np.where(
            cx == 0,
            t_prime.data[CH_MAX_INTENSITY],
            np.where(x_wins, x.data[CH_MAX_INTENSITY], t_prime.data[CH_MAX_INTENSITY]),
        ),
    )
    out[CH_NONEMPTY] = occupied.astype(np.float64)
    out[CH_DIRECTION] = x.data[CH_DIRECTION]
    out[CH_DISTANCE] = x.data[CH_DISTANCE]
    return FeatureGrid(out, x.range_m)


def bilinear_sample(channel: np.ndarray, u, v):
    """Differentiable bilinear read of a channel at fractional cell
    coordinates; positions outside the grid read as zero.  Accepts
    scalars or arrays."""
    channel = np.asarray(channel, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    h, w = channel.shape

    def gather(iu, iv):
        ok = (iu >= 0) & (iu < h) & (iv >= 0) & (iv < w)
        vals = channel[np.clip(iu, 0, h - 1), np.clip(iv, 0, w - 1)]
        return np.where(ok, vals, 0.0)

    out = (
        (1.0 - fu) * (1.0 - fv) * gather(i0, j0)
        + (1.0 - fu) * fv * gather(i0, j0 + 1)
        + fu * (1.0 - fv) * gather(i0 + 1, j0)
        + fu * fv * gather(i0 + 1, j0 + 1)
    )
    if out.ndim == 0:
        return float(out)
    return out


def _inverse_map(uu, vv, ca, sa, center, tau_x, size):
    du = -tau_x  # callers pass tau in cells
    a = uu - center - du
    b = vv - center
    su = ca * a + sa * b + center
    sv = -sa * a + ca * b + center
    return su, sv


def transform_features(t: FeatureGrid, params: TransformParams) -> FeatureGrid:
    """Feature-space dual of the point transform: inverse-map each output
    cell, bilinearly sample the spoofed grid, scale height channels by
    s_h, and recompute the occupancy indicator.  Count stays continuous."""
    size = t.size
    center = lattice_center(t.range_m, size)
    ca, sa = math.cos(params.theta), math.sin(params.theta)
    tau_cells = params.tau_x / t.cell_size
    uu, vv = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    su, sv = _inverse_map(uu, vv, ca, sa, center, tau_cells, size)

    out = np.zeros_like(t.data)
    count = bilinear_sample(t.data[CH_COUNT], su, sv)
    out[CH_COUNT] = count
    out[CH_MAX_HEIGHT] = params.s_h * bilinear_sample(t.data[CH_MAX_HEIGHT], su, sv)
    out[CH_MEAN_HEIGHT] = params.s_h * bilinear_sample(t.data[CH_MEAN_HEIGHT], su, sv)
    out[CH_MAX_INTENSITY] = bilinear_sample(t.data[CH_MAX_INTENSITY], su, sv)
    out[CH_MEAN_INTENSITY] = bilinear_sample(t.data[CH_MEAN_INTENSITY], su, sv)
    out[CH_NONEMPTY] = (count > 0).astype(np.float64)
    out[CH_DIRECTION] = t.data[CH_DIRECTION]
    out[CH_DISTANCE] = t.data[CH_DISTANCE]
    return FeatureGrid(out, t.range_m)


def adv_loss(x_prime: FeatureGrid, detector, target: AttackTarget) -> float:
    """Gaussian-masked sum of (1 - positiveness * objectness)."""
    if not np.isfinite(x_prime.data).all():
        raise ValidationError("adversarial grid contains non-finite values")
    dgrid = detector.detect(x_prime)
    obj = extract_attribute(dgrid, "objectness")
    pos = extract_attribute(dgrid, "positiveness")
    mask = mask_field(target, x_prime.size)
    return float(((1.0 - pos * obj) * mask).sum())


class AttackEvaluator:
    """Loss-as-a-function-of-transform-parameters for one (scene, trace).

    With the reference surrogate the loss is evaluated incrementally: the
    scene's head fields are precomputed once and each call only touches
    the cells the warped trace reaches.  The result equals the dense
    merge -> detect -> adv_loss pipeline to float64 rounding.  For any
    other detector the dense pipeline is used directly.
    """

    def __init__(self, x_grid: FeatureGrid, t_grid: FeatureGrid, detector, target: AttackTarget):
        if x_grid.data.shape != t_grid.data.shape or x_grid.range_m != t_grid.range_m:
            raise ValidationError("scene and trace grids must share geometry")
        self.x_grid = x_grid
        self.t_grid = t_grid
        self.detector = detector
        self.target = target
        self.size = x_grid.size
        self.center = lattice_center(x_grid.range_m, self.size)
        self.mask = mask_field(target, self.size)
        self.fast = isinstance(detector, SurrogateDetector)
        if self.fast:
            lin_obj, lin_pos, _, _ = detector.head_fields(x_grid)
            self._bg_lin_obj = lin_obj
            self._bg_lin_pos = lin_pos
            self._bg_prod = kernels.expit(lin_obj) * kernels.expit(lin_pos)
            self.baseline_loss = float(((1.0 - self._bg_prod) * self.mask).sum())
            occ = np.argwhere(t_grid.data[CH_COUNT] > 0)
            if occ.size == 0:
                self._src = None
            else:
                u0, v0 = occ.min(axis=0)
                u1, v1 = occ.max(axis=0)
                box = (slice(u0, u1 + 1), slice(v0, v1 + 1))
                self._src = (
                    np.ascontiguousarray(t_grid.data[CH_COUNT][box]),
                    np.ascontiguousarray(t_grid.data[CH_MAX_HEIGHT][box]),
                    np.ascontiguousarray(t_grid.data[CH_MEAN_INTENSITY][box]),
                    int(u0),
                    int(v0),
                )
            self._x_cnt = np.ascontiguousarray(x_grid.data[CH_COUNT])
            self._x_maxh = np.ascontiguousarray(x_grid.data[CH_MAX_HEIGHT])
            self._x_mint = np.ascontiguousarray(x_grid.data[CH_MEAN_INTENSITY])
            self._w_obj = detector.params.objectness_weights
            self._w_pos = detector.params.positiveness_weights
            self._radius = detector.params.smoothing_radius

    def loss(self, params: TransformParams) -> float:
        if not self.fast:
            x_prime = merge(self.x_grid, transform_features(self.t_grid, params))
            return adv_loss(x_prime, self.detector, self.target)
        if self._src is None:
            return self.baseline_loss
        src_cnt, src_maxh, src_mint, su0, sv0 = self._src
        delta = kernels.spoof_loss_delta(
            src_cnt,
            src_maxh,
            src_mint,
            su0,
            sv0,
            math.cos(params.theta),
            math.sin(params.theta),
            -params.tau_x / self.x_grid.cell_size,
            params.s_h,
            self.center,
            self._x_cnt,
            self._x_maxh,
            self._x_mint,
            self._bg_lin_obj,
            self._bg_lin_pos,
            self._bg_prod,
            self.mask,
            self._w_obj,
            self._w_pos,
            self._radius,
        )
        return self.baseline_loss + float(delta)

    def loss_array(self, arr: np.ndarray) -> float:
        return self.loss(TransformParams.from_array(arr))

    def gradient(self, params: TransformParams, step: float = 1e-3) -> np.ndarray:
        """Central-difference gradient of the loss at ``params``."""
        base = params.to_array()
        grad = np.zeros(3)
        for i in range(3):
            hi = base.copy()
            lo = base.copy()
            hi[i] += step
            lo[i] -= step
            grad[i] = (self.loss_array(hi) - self.loss_array(lo)) / (2.0 * step)
        return grad


def _project_params(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out[0] = wrap_angle(out[0])
    out[2] = max(out[2], 1e-3)
    return out


def vanilla_optimize(
    x: FeatureGrid,
    t: FeatureGrid,
    detector,
    target: AttackTarget,
    spec: SamplingSpec,
    init: TransformParams,
    loss_fn=None,
):
    """Adam descent from a single start; returns the best-seen point.

    ``loss_fn`` (an array -> float callable) overrides the attack loss,
    which the tests use to check convergence on analytic objectives.
    """
    if loss_fn is None:
        evaluator = AttackEvaluator(x, t, detector, target)
        loss_fn = evaluator.loss_array
    result = adam_minimize(
        loss_fn,
        init.to_array(),
        n_steps=spec.max_iterations,
        lr=spec.learning_rate,
        fd_step=spec.fd_step,
        project=_project_params,
    )
    return TransformParams.from_array(result.x), result.loss, result


def target_params(trace: SpoofTrace, target: AttackTarget, range_m: float, size: int) -> TransformParams:
    """Rotation/translation that move the trace centroid onto the target."""
    if len(trace) == 0:
        return TransformParams.identity()
    xy = trace.points.xyz[:, :2]
    rho = float(np.hypot(xy[:, 0], xy[:, 1]).mean())
    tx, ty = target.world_xy(range_m, size)
    if rho <= abs(ty):
        raise ValidationError("target is laterally unreachable for this trace")
    theta = math.asin(ty / rho)
    tau_x = tx - rho * math.cos(theta)
    return TransformParams(theta=theta, tau_x=tau_x, s_h=1.0)


def _offsets(bound: float, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-bound, bound, n)


def generate_adversarial(
    X: PointCloud,
    T: SpoofTrace,
    detector,
    target: AttackTarget,
    spec: SamplingSpec | None = None,
    cfg: PerceptionConfig | None = None,
    roi: RoiSpec | None = None,
    corridor_half_width: float = DEFAULT_CORRIDOR_HALF_WIDTH,
) -> AttackResult:
    """Full attack: sample an n x n grid of starts around the parameters
    that center the trace on the target, refine each with Adam, keep the
    global minimum, replay it on the 3D trace, and test perception.

    X must already be ROI-filtered; T must be aligned."""
    if not T.aligned:
        raise ValidationError("spoof trace must be aligned before attack generation")
    spec = spec or SamplingSpec()
    cfg = cfg or PerceptionConfig()
    roi = roi or RoiSpec()

    x = extract_features(X, roi.range_m)
    t = extract_features(T.points, roi.range_m)
    evaluator = AttackEvaluator(x, t, detector, target)

    centered = target_params(T, target, roi.range_m, x.size)
    tx, ty = target.world_xy(roi.range_m, x.size)
    l_theta = spec.resolved_l_theta(math.hypot(tx, ty))

    best = None  # (loss, start_index, params)
    trajectories = []
    start_params = []
    n_finite = 0
    for i, d_tau in enumerate(_offsets(spec.l_tau, spec.n)):
        for j, d_theta in enumerate(_offsets(l_theta, spec.n)):
            start = TransformParams(
                theta=centered.theta + d_theta,
                tau_x=centered.tau_x + d_tau,
                s_h=1.0,
            )
            start_params.append(start)
            params, loss, run = vanilla_optimize(
                x, t, detector, target, spec, start, loss_fn=evaluator.loss_array
            )
            trajectories.append(run.trajectory)
            if np.isfinite(loss):
                n_finite += 1
                if best is None or loss < best[0]:
                    best = (loss, i * spec.n + j, params)

    if best is None:
        raise OptimizationError("every optimization start produced a non-finite loss")

    best_loss, _, best_p = best
    raw_trace = transform_trace_3d(T, best_p)
    timing = LidarTimingModel(vertical_angles=T.vertical_angles)
    baseline = perceive(X, cfg, roi, detector)
    try:
        emitted = conform_to_capability(raw_trace, timing)
    except CapabilityViolation as exc:
        return AttackResult(
            best_params=best_p,
            best_loss=best_loss,
            success=False,
            adversarial_trace=None,
            adversarial_cloud=X,
            trajectories=trajectories,
            start_params=start_params,
            compliant=False,
            diagnostics=f"emitted trace violates capability: {exc}",
        )
    x_prime = append(X, emitted.points)
    success = is_success(
        x_prime,
        target,
        cfg,
        roi,
        detector,
        baseline_obstacles=baseline,
        corridor_half_width=corridor_half_width,
    )
    return AttackResult(
        best_params=best_p,
        best_loss=best_loss,
        success=success,
        adversarial_trace=emitted,
        adversarial_cloud=x_prime,
        trajectories=trajectories,
        start_params=start_params,
        compliant=True,
        diagnostics=None,
    )


def is_success(
    X_prime: PointCloud,
    target: AttackTarget,
    cfg: PerceptionConfig,
    roi: RoiSpec,
    detector,
    baseline_cloud: PointCloud | None = None,
    baseline_obstacles: list | None = None,
    corridor_half_width: float = DEFAULT_CORRIDOR_HALF_WIDTH,
) -> bool:
    """True iff perception on X_prime reports an obstacle centered in the
    target distance band, inside the lane corridor, that does not match
    any baseline obstacle (center within OBSTACLE_MATCH_RADIUS)."""
    if baseline_obstacles is None:
        if baseline_cloud is not None:
            baseline_obstacles = perceive(baseline_cloud, cfg, roi, detector)
        else:
            baseline_obstacles = []
    obstacles = perceive(X_prime, cfg, roi, detector)
    lo, hi = target.distance_band
    for obs in obstacles:
        if not (lo <= obs.center_x <= hi and abs(obs.center_y) <= corridor_half_width):
            continue
        is_new = all(
            math.hypot(obs.center_x - b.center_x, obs.center_y - b.center_y)
            > OBSTACLE_MATCH_RADIUS
            for b in baseline_obstacles
        )
        if is_new:
            return True
    return False


def save_attack_result(result: AttackResult, outdir, format: str = "csv") -> None:
    """Write the attack record, adversarial cloud/trace, and the per-start
    loss trajectories."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    record = {
        "theta": result.best_params.theta,
        "tau_x": result.best_params.tau_x,
        "s_h": result.best_params.s_h,
        "best_loss": result.best_loss,
        "success": result.success,
        "compliant": result.compliant,
        "diagnostics": result.diagnostics,
        "n_starts": len(result.start_params),
    }
    (outdir / "attack.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    suffix = "bin" if format == "packed-binary" else "csv"
    save_pointcloud(result.adversarial_cloud, outdir / f"adversarial_cloud.{suffix}", format)
    if result.adversarial_trace is not None:
        save_trace(result.adversarial_trace, outdir / "adversarial_trace", format)
    with open(outdir / "trajectories.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_index", "iteration", "theta", "tau_x", "s_h", "loss"])
        for start_index, rows in enumerate(result.trajectories):
            for iteration, theta, tau_x, s_h, loss in rows:
                writer.writerow(
                    [start_index, iteration, f"{theta:.9g}", f"{tau_x:.9g}", f"{s_h:.9g}", f"{loss:.9g}"]
                )
