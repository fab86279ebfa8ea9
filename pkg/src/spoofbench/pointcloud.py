"""Point clouds, sensor poses, and file I/O.

Sensor frame convention used across the package: +x forward (vehicle
heading), +y left, +z up, origin at the LiDAR center.  A cloud is an
ordered n x 4 array of (w_x, w_y, w_z, intensity) rows.

File formats:
  * CSV with header ``w_x,w_y,w_z,intensity``, one point per line, floats
    printed with shortest round-trip precision.
  * Packed binary: magic ``APC1``, little-endian uint64 point count, then
    four little-endian float32 values per point.  Values are stored as
    float32 on disk; coordinates outside float32 precision are rounded
    on save.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ParseError, ValidationError

CSV_HEADER = "w_x,w_y,w_z,intensity"
BINARY_MAGIC = b"APC1"


class Point(NamedTuple):
    w_x: float
    w_y: float
    w_z: float
    intensity: float


@dataclass(frozen=True)
class PointCloud:
    """Immutable ordered sequence of LiDAR points.

    ``data`` is an (n, 4) float64 array; the constructor copies and
    freezes it so instances can be shared across threads.
    """

    data: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValidationError(f"point cloud must be (n, 4), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("point cloud contains non-finite values")
        if arr.size and (arr[:, 3].min() < 0.0 or arr[:, 3].max() > 1.0):
            raise ValidationError("intensity values must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> Point:
        return Point(*self.data[i])

    def __iter__(self) -> Iterator[Point]:
        for row in self.data:
            yield Point(*row)

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]

    @classmethod
    def from_points(cls, points) -> "PointCloud":
        rows = [tuple(p) for p in points]
        if not rows:
            return cls()
        return cls(np.array(rows, dtype=np.float64))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3 orthonormal) plus translation (3,)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {rot.shape}")
        if tr.shape != (3,):
            raise ValidationError(f"translation must be a 3-vector, got {tr.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(tr).all()):
            raise ValidationError("pose contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > 1e-9:
            raise ValidationError(f"rotation is not orthonormal (max |R'R - I| = {err:.3e})")
        rot = rot.copy()
        tr = tr.copy()
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rodrigues rotation about ``axis`` by ``angle`` radians."""
        ax = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(ax)
        if norm == 0.0:
            raise ValidationError("rotation axis must be nonzero")
        ax = ax / norm
        k = np.array(
            [
                [0.0, -ax[2], ax[1]],
                [ax[2], 0.0, -ax[0]],
                [-ax[1], ax[0], 0.0],
            ]
        )
        rot = np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)


def transform_pose(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Map every point p to R @ p + t; intensity is unchanged."""
    if len(cloud) == 0:
        return cloud
    out = cloud.data.copy()
    out[:, :3] = cloud.xyz @ pose.rotation.T + pose.translation
    return PointCloud(out)


def append(cloud: PointCloud, extra: PointCloud) -> PointCloud:
    """Concatenate two clouds, preserving order and per-point values."""
    if len(extra) == 0:
        return cloud
    if len(cloud) == 0:
        return extra
    return PointCloud(np.vstack([cloud.data, extra.data]))


def save_csv(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in cloud.data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise ParseError("file does not exist", path=path)
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        return PointCloud()
    start = 0
    if lines[0].strip() == CSV_HEADER:
        start = 1
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", path=path, line=lineno)
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError("malformed float value", path=path, line=lineno) from None
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite value", path=path, line=lineno)
        rows.append(vals)
    if not rows:
        return PointCloud()
    return PointCloud(np.array(rows, dtype=np.float64))


def save_binary(cloud: PointCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(cloud)))
        fh.write(cloud.data.astype("<f4").tobytes())


def load_binary(path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise ParseError("file does not exist", path=path)
    blob = path.read_bytes()
    if len(blob) < 12:
        if len(blob) == 0:
            return PointCloud()
        raise ParseError("truncated header", path=path, offset=len(blob))
    if blob[:4] != BINARY_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}", path=path, offset=0)
    (count,) = struct.unpack_from("<Q", blob, 4)
    expected = 12 + 16 * count
    if len(blob) != expected:
        raise ParseError(
            f"size mismatch: header promises {count} points ({expected} bytes), file has {len(blob)}",
            path=path,
            offset=min(len(blob), expected),
        )
    if count == 0:
        return PointCloud()
    arr = np.frombuffer(blob, dtype="<f4", offset=12).reshape(count, 4).astype(np.float64)
    if not np.isfinite(arr).all():
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
        raise ParseError("non-finite value", path=path, offset=12 + 16 * bad)
    return PointCloud(arr)


def save_pointcloud(cloud: PointCloud, path, format: str = "csv") -> None:
    if format == "csv":
        save_csv(cloud, path)
    elif format == "packed-binary":
        save_binary(cloud, path)
    else:
        raise ValidationError(f"unknown format {format!r}")


def load_pointcloud(path, format: str | None = None) -> PointCloud:
    """Load a cloud; format inferred from the suffix when not given."""
    if format is None:
        format = "packed-binary" if str(path).endswith(".bin") else "csv"
    if format == "csv":
        return load_csv(path)
    if format == "packed-binary":
        return load_binary(path)
    raise ValidationError(f"unknown format {format!r}")
