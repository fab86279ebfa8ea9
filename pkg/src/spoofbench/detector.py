"""Cell-wise detection model.

The reference surrogate is a smoothed generalized-linear scorer with
logistic heads: each head applies a box filter (zero padding, constant
divisor) to the count, max-height, and mean-intensity channels and pushes
a weighted sum through a logistic.  Parameters are deliberately simple,
versioned, and frozen by golden tests so attack results are reproducible.
Any object with a compatible ``detect`` method can replace the surrogate
throughout the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .features import (
    CH_COUNT,
    CH_MAX_HEIGHT,
    CH_MEAN_INTENSITY,
    FeatureGrid,
)
from .kernels import expit
from .transforms import TransformParams

ATTRIBUTES = (
    "objectness",
    "positiveness",
    "object_height",
    "class_probability",
    "center_offset",
)


@dataclass(frozen=True)
class DetectionGrid:
    """Per-cell model outputs.

    center_offset is derived lazily from the smoothed count field: the
    offset to the strongest nearby cell (deterministic, nearest-wins tie
    break).
    """

    objectness: np.ndarray
    positiveness: np.ndarray
    object_height: np.ndarray
    class_probability: np.ndarray  # (2, h, w): vehicle, background
    smoothed_count: np.ndarray
    offset_radius: int = 2

    def __post_init__(self):
        for name in ("objectness", "positiveness", "object_height", "smoothed_count"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cp = np.asarray(self.class_probability, dtype=np.float64)
        cp.setflags(write=False)
        object.__setattr__(self, "class_probability", cp)
        if self.objectness.min() < 0.0 or self.objectness.max() > 1.0:
            raise ValidationError("objectness must lie in [0, 1]")
        if self.positiveness.min() < 0.0 or self.positiveness.max() > 1.0:
            raise ValidationError("positiveness must lie in [0, 1]")
        if self.object_height.size and self.object_height.min() < 0.0:
            raise ValidationError("object_height must be non-negative")
        sums = cp.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValidationError("class probabilities must sum to 1 per cell")

    @property
    def shape(self):
        return self.objectness.shape

    @cached_property
    def center_offset(self) -> np.ndarray:
        """(2, h, w) offset in cells toward the local smoothed-count
        maximum within offset_radius."""
        h, w = self.smoothed_count.shape
        r = max(1, self.offset_radius)
        best = self.smoothed_count.copy()
        off_u = np.zeros((h, w))
        off_v = np.zeros((h, w))
        shifts = sorted(
            (
                (du, dv)
                for du in range(-r, r + 1)
                for dv in range(-r, r + 1)
                if (du, dv) != (0, 0)
            ),
            key=lambda s: (s[0] ** 2 + s[1] ** 2, s[0], s[1]),
        )
        padded = np.full((h + 2 * r, w + 2 * r), -np.inf)
        padded[r : r + h, r : r + w] = self.smoothed_count
        for du, dv in shifts:
            shifted = padded[r + du : r + du + h, r + dv : r + dv + w]
            better = shifted > best
            best = np.where(better, shifted, best)
            off_u = np.where(better, float(du), off_u)
            off_v = np.where(better, float(dv), off_v)
        out = np.stack([off_u, off_v])
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class SurrogateParams:
    """Weights of the reference surrogate; see detector config files."""

    smoothing_radius: int = 1
    count_weight: float = 1.0
    height_weight: float = 1.8
    intensity_weight: float = 1.2
    bias: float = -6.0
    pos_count_weight: float = 0.5
    pos_height_weight: float = 0.9
    pos_intensity_weight: float = 0.6
    pos_bias: float = -3.0
    version: str = "ref-1"

    def __post_init__(self):
        if self.smoothing_radius < 0:
            raise ValidationError("smoothing radius must be >= 0")
        values = [
            self.count_weight,
            self.height_weight,
            self.intensity_weight,
            self.bias,
            self.pos_count_weight,
            self.pos_height_weight,
            self.pos_intensity_weight,
            self.pos_bias,
        ]
        if not np.isfinite(values).all():
            raise ValidationError("surrogate parameters must be finite")

    @property
    def objectness_weights(self) -> np.ndarray:
        return np.array([self.count_weight, self.height_weight, self.intensity_weight])

    @property
    def positiveness_weights(self) -> np.ndarray:
        return np.array(
            [self.pos_count_weight, self.pos_height_weight, self.pos_intensity_weight]
        )


def save_params(params: SurrogateParams, path) -> None:
    doc = {
        "version": params.version,
        "smoothing_radius": params.smoothing_radius,
        "objectness": {
            "count_weight": params.count_weight,
            "height_weight": params.height_weight,
            "intensity_weight": params.intensity_weight,
            "bias": params.bias,
        },
        "positiveness": {
            "count_weight": params.pos_count_weight,
            "height_weight": params.pos_height_weight,
            "intensity_weight": params.pos_intensity_weight,
            "bias": params.pos_bias,
        },
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_params(path) -> SurrogateParams:
    doc = yaml.safe_load(Path(path).read_text())
    try:
        obj = doc["objectness"]
        pos = doc["positiveness"]
        return SurrogateParams(
            smoothing_radius=int(doc["smoothing_radius"]),
            count_weight=float(obj["count_weight"]),
            height_weight=float(obj["height_weight"]),
            intensity_weight=float(obj["intensity_weight"]),
            bias=float(obj["bias"]),
            pos_count_weight=float(pos["count_weight"]),
            pos_height_weight=float(pos["height_weight"]),
            pos_intensity_weight=float(pos["intensity_weight"]),
            pos_bias=float(pos["bias"]),
            version=str(doc["version"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed detector config {path}: {exc}") from exc


def box_mean(plane: np.ndarray, radius: int) -> np.ndarray:
    """Box filter with zero padding and a constant (2r+1)^2 divisor."""
    if radius == 0:
        return plane.astype(np.float64, copy=True)
    h, w = plane.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius))
    padded[radius : radius + h, radius : radius + w] = plane
    acc = np.zeros((h, w))
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            acc += padded[di : di + h, dj : dj + w]
    return acc / float((2 * radius + 1) ** 2)


def _head_fields(grid: FeatureGrid, params: SurrogateParams):
    """Linear (pre-logistic) objectness and positiveness fields."""
    sm_cnt = box_mean(grid.data[CH_COUNT], params.smoothing_radius)
    sm_maxh = box_mean(grid.data[CH_MAX_HEIGHT], params.smoothing_radius)
    sm_mint = box_mean(grid.data[CH_MEAN_INTENSITY], params.smoothing_radius)
    wo = params.objectness_weights
    wp = params.positiveness_weights
    lin_obj = params.bias + wo[0] * sm_cnt + wo[1] * sm_maxh + wo[2] * sm_mint
    lin_pos = params.pos_bias + wp[0] * sm_cnt + wp[1] * sm_maxh + wp[2] * sm_mint
    return lin_obj, lin_pos, sm_cnt, sm_maxh


def detect(grid: FeatureGrid, params: SurrogateParams | None = None) -> DetectionGrid:
    """Run the surrogate over a feature grid.  Deterministic: the same
    grid and parameters always produce the same outputs."""
    if params is None:
        params = SurrogateParams()
    if not np.isfinite(grid.data).all():
        raise ValidationError("feature grid contains non-finite values")
    lin_obj, lin_pos, sm_cnt, sm_maxh = _head_fields(grid, params)
    objectness = expit(lin_obj)
    positiveness = expit(lin_pos)
    object_height = np.maximum(sm_maxh, 0.0)
    class_probability = np.stack([objectness, 1.0 - objectness])
    return DetectionGrid(
        objectness=objectness,
        positiveness=positiveness,
        object_height=object_height,
        class_probability=class_probability,
        smoothed_count=sm_cnt,
        offset_radius=params.smoothing_radius,
    )


def extract_attribute(dgrid: DetectionGrid, attribute: str) -> np.ndarray:
    """Project one named output channel; never mutates the grid."""
    if attribute not in ATTRIBUTES:
        raise ValidationError(
            f"unknown attribute {attribute!r}; expected one of {ATTRIBUTES}"
        )
    return getattr(dgrid, attribute)


class SurrogateDetector:
    """Bundles the surrogate parameters behind the pluggable interface.

    The attack generator special-cases this class to run its fast
    incremental loss kernel; any other detector implementing ``detect``
    works through the dense reference path.
    """

    def __init__(self, params: SurrogateParams | None = None):
        self.params = params or SurrogateParams()

    @property
    def version(self) -> str:
        return self.params.version

    def detect(self, grid: FeatureGrid) -> DetectionGrid:
        return detect(grid, self.params)

    def extract_attribute(self, dgrid: DetectionGrid, attribute: str) -> np.ndarray:
        return extract_attribute(dgrid, attribute)

    def head_fields(self, grid: FeatureGrid):
        return _head_fields(grid, self.params)


def detect_gradient(
    grid_fn,
    params: SurrogateParams,
    loss_fn,
    probe: TransformParams,
    step: float = 1e-3,
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(detect(grid_fn(p)))`` with
    respect to the probe's (theta, tau_x, s_h).

    grid_fn maps TransformParams to the FeatureGrid the detector sees.
    """

    def value(p: TransformParams) -> float:
        out = float(loss_fn(detect(grid_fn(p), params)))
        if not np.isfinite(out):
            raise ValidationError("loss is not finite at the probe point")
        return out

    base = probe.to_array()
    grad = np.zeros(3)
    for i in range(3):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (
            value(TransformParams.from_array(hi)) - value(TransformParams.from_array(lo))
        ) / (2.0 * step)
    return grad
