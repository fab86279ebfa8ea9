"""Bird's-eye-view feature extraction.

A ROI-filtered cloud is mapped to a square cell grid (512 x 512 covering
+-60 m by default) keyed on (w_x, w_y); each cell carries eight per-cell
statistics.  Grid orientation: u indexes decreasing w_x, v decreasing w_y,
so the area ahead of the vehicle maps to low u.  Points exactly on a cell
boundary belong to the lower-index cell (floor semantics); statistics of
empty cells are 0, not NaN.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .pointcloud import PointCloud
from . import kernels

GRID_SIZE = 512
DEFAULT_RANGE = 60.0
N_CHANNELS = 8

# Channel indices, in declaration order.
CH_MAX_HEIGHT = 0
CH_MAX_INTENSITY = 1
CH_MEAN_HEIGHT = 2
CH_MEAN_INTENSITY = 3
CH_COUNT = 4
CH_DIRECTION = 5
CH_DISTANCE = 6
CH_NONEMPTY = 7

CHANNEL_NAMES = (
    "max_height",
    "max_intensity",
    "mean_height",
    "mean_intensity",
    "count",
    "direction",
    "distance",
    "non_empty",
)

GRID_MAGIC = b"AFG1"


@dataclass(frozen=True)
class RoiSpec:
    """Geometric region of interest (stands in for map-based filtering)."""

    mode: str = "all_within_range"
    rectangle: tuple | None = None  # (x_min, x_max, y_min, y_max) meters
    range_m: float = DEFAULT_RANGE

    def __post_init__(self):
        if self.mode not in ("all_within_range", "rectangle"):
            raise ValidationError(f"unknown ROI mode {self.mode!r}")
        if self.range_m <= 0.0:
            raise ValidationError("ROI range must be positive")
        if self.mode == "rectangle":
            if self.rectangle is None:
                raise ValidationError("rectangle mode needs a rectangle")
            x0, x1, y0, y1 = self.rectangle
            if not (x0 <= x1 and y0 <= y1):
                raise ValidationError(f"rectangle {self.rectangle} is not well-ordered")


@dataclass(frozen=True)
class FeatureGrid:
    """8-channel square cell grid; ``data`` has shape (8, size, size)."""

    data: np.ndarray
    range_m: float = DEFAULT_RANGE

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != N_CHANNELS or arr.shape[1] != arr.shape[2]:
            raise ValidationError(f"grid must be (8, n, n), got {arr.shape}")
        if self.range_m <= 0.0:
            raise ValidationError("grid range must be positive")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def size(self) -> int:
        return self.data.shape[1]

    @property
    def cell_size(self) -> float:
        return 2.0 * self.range_m / self.size

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[CHANNEL_NAMES.index(name)]
        except ValueError:
            raise ValidationError(f"unknown channel {name!r}") from None


def world_to_cell(w_x: float, w_y: float, range_m: float = DEFAULT_RANGE, size: int = GRID_SIZE):
    """Integer cell (u, v) containing a world point; floor semantics."""
    if abs(w_x) > range_m or abs(w_y) > range_m:
        raise ValidationError(
            f"point ({w_x}, {w_y}) outside the +-{range_m} m grid extent"
        )
    cell = 2.0 * range_m / size
    u = min(int(math.floor((range_m - w_x) / cell)), size - 1)
    v = min(int(math.floor((range_m - w_y) / cell)), size - 1)
    return u, v


def cell_center(u: int, v: int, range_m: float = DEFAULT_RANGE, size: int = GRID_SIZE):
    """World coordinates of a cell's center (the inverse of world_to_cell)."""
    cell = 2.0 * range_m / size
    return range_m - (u + 0.5) * cell, range_m - (v + 0.5) * cell


def world_to_lattice(w: np.ndarray, range_m: float, size: int) -> np.ndarray:
    """Continuous lattice coordinate: cell (u, v) is centered at exactly
    (u, v) on this lattice."""
    cell = 2.0 * range_m / size
    return (range_m - np.asarray(w)) / cell - 0.5


def lattice_center(range_m: float, size: int) -> float:
    """Lattice coordinate of the sensor origin (same on both axes)."""
    return range_m / (2.0 * range_m / size) - 0.5


def roi_filter(cloud: PointCloud, roi: RoiSpec) -> PointCloud:
    """Keep points inside the ROI and within the bird's-eye range."""
    if len(cloud) == 0:
        return cloud
    x, y = cloud.data[:, 0], cloud.data[:, 1]
    keep = np.hypot(x, y) <= roi.range_m
    if roi.mode == "rectangle":
        x0, x1, y0, y1 = roi.rectangle
        keep &= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return PointCloud(cloud.data[keep])


_CONST_CACHE: dict = {}


def _constant_channels(range_m: float, size: int):
    """Per-cell direction and distance, functions of the cell index only."""
    key = (range_m, size)
    if key not in _CONST_CACHE:
        cell = 2.0 * range_m / size
        centers = range_m - (np.arange(size) + 0.5) * cell
        cx = centers[:, None]
        cy = centers[None, :]
        direction = np.arctan2(cy, cx) * np.ones_like(cx)
        distance = np.hypot(cx, cy) * np.ones_like(cy)
        direction.setflags(write=False)
        distance.setflags(write=False)
        _CONST_CACHE[key] = (direction, distance)
    return _CONST_CACHE[key]


def extract_features(
    cloud: PointCloud, range_m: float = DEFAULT_RANGE, size: int = GRID_SIZE
) -> FeatureGrid:
    """Per-cell statistics of the cloud; points outside +-range are dropped.

    max_intensity is the intensity of the highest point in the cell; equal
    heights resolve to the larger intensity so the result is independent
    of point order."""
    data = np.zeros((N_CHANNELS, size, size))
    direction, distance = _constant_channels(range_m, size)
    data[CH_DIRECTION] = direction
    data[CH_DISTANCE] = distance
    if len(cloud) > 0:
        cell = 2.0 * range_m / size
        u = np.floor((range_m - cloud.data[:, 0]) / cell).astype(np.int64)
        v = np.floor((range_m - cloud.data[:, 1]) / cell).astype(np.int64)
        ok = (u >= 0) & (u < size) & (v >= 0) & (v < size)
        if ok.any():
            idx = u[ok] * size + v[ok]
            heights = cloud.data[ok, 2]
            intens = cloud.data[ok, 3]
            count, sum_h, sum_i, max_h, max_i = kernels.bin_cells(
                idx, heights, intens, size * size
            )
            count = count.reshape(size, size)
            occupied = count > 0
            data[CH_COUNT] = count
            with np.errstate(invalid="ignore"):
                data[CH_MEAN_HEIGHT] = np.where(
                    occupied, sum_h.reshape(size, size) / np.maximum(count, 1), 0.0
                )
                data[CH_MEAN_INTENSITY] = np.where(
                    occupied, sum_i.reshape(size, size) / np.maximum(count, 1), 0.0
                )
            data[CH_MAX_HEIGHT] = np.where(occupied, max_h.reshape(size, size), 0.0)
            data[CH_MAX_INTENSITY] = np.where(occupied, max_i.reshape(size, size), 0.0)
            data[CH_NONEMPTY] = occupied.astype(np.float64)
    return FeatureGrid(data, range_m)


def save_grid(grid: FeatureGrid, path) -> None:
    """Channel-major packed binary with an 8-value header."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(
            struct.pack(
                "<IIIffII",
                grid.size,
                grid.size,
                N_CHANNELS,
                grid.range_m,
                grid.cell_size,
                0,
                0,
            )
        )
        fh.write(grid.data.astype("<f4").tobytes())


def load_grid(path) -> FeatureGrid:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 32:
        raise ParseError("truncated header", path=path, offset=len(blob))
    if blob[:4] != GRID_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}", path=path, offset=0)
    width, height, channels, range_m, _cell, _r0, _r1 = struct.unpack_from("<IIIffII", blob, 4)
    if width != height or channels != N_CHANNELS:
        raise ParseError(
            f"unsupported grid geometry {width}x{height}x{channels}", path=path, offset=4
        )
    expected = 32 + 4 * channels * width * height
    if len(blob) != expected:
        raise ParseError(
            f"size mismatch: expected {expected} bytes, got {len(blob)}",
            path=path,
            offset=min(expected, len(blob)),
        )
    arr = (
        np.frombuffer(blob, dtype="<f4", offset=32)
        .reshape(channels, width, height)
        .astype(np.float64)
    )
    return FeatureGrid(arr, float(range_m))
