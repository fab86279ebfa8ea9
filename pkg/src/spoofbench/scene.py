"""Procedural road scenes.

Scenes stand in for a recorded drive: a ground strip with seeded density
texture (dense patches where the surface returns strongly, thin spots
where it does not), parked and lead vehicles rendered as surface rasters,
and roadside clutter.  Everything is generated from a single seed; frames
after the first add Gaussian background jitter and advance moving blobs,
which models consecutive sweeps of the same scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .pointcloud import PointCloud, load_pointcloud

CELL_AREA_SIDE = 0.234375  # m, matches the 512-cell grid over +-60 m


@dataclass(frozen=True)
class SceneConfig:
    kind: str = "synthetic_traffic"  # empty_road | synthetic_traffic | file
    path: str | None = None  # point file for kind == "file"
    sensor_height: tuple = (1.65, 1.85)  # m, drawn per scene
    x_range: tuple = (-8.0, 30.0)
    y_range: tuple = (-8.0, 8.0)
    base_density: tuple = (1.4, 2.4)  # ground points per cell
    n_patches: tuple = (3, 8)  # dense ground patches per scene
    patch_region: tuple = (2.0, 9.0, -3.0, 3.0)  # x_min, x_max, y_min, y_max
    patch_amplitude: tuple = (2.2, 5.2)  # extra points per cell at the core
    patch_radius: tuple = (0.3, 0.95)  # m
    max_density: float = 7.2  # per-cell cap, below the ground-alone detection level
    n_parked: tuple = (1, 4)
    n_clutter: tuple = (2, 6)
    jitter_sigma: float = 0.02  # m, frame-to-frame background perturbation
    ego_speed: float = 0.0  # m/s, world flows past the sensor when moving
    frame_dt: float = 0.1  # s (10 Hz frames)

    def __post_init__(self):
        if self.kind not in ("empty_road", "synthetic_traffic", "file"):
            raise ValidationError(f"unknown scene kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValidationError("file scenes need a path")


def _vehicle_blob(rng, cx: float, cy: float, ground_z: float, length=4.0, width=2.0, height=1.5):
    """Surface raster of a vehicle seen from the sensor at the origin:
    the near face plus a sparse roof.  Density falls off with distance
    like an angular raster would."""
    dist = max(np.hypot(cx, cy), 1.0)
    face_x = cx - length / 2.0 if cx > 0 else cx + length / 2.0
    col_step = max(0.02, 0.0035 * dist)  # ~0.2 deg azimuth steps
    row_step = max(0.12, 0.035 * dist / 2.0)  # half the 2 deg line spacing
    ys = np.arange(cy - width / 2.0, cy + width / 2.0, col_step)
    zs = np.arange(ground_z + 0.05, ground_z + height, row_step)
    yy, zz = np.meshgrid(ys, zs)
    n_face = yy.size
    face = np.column_stack(
        [
            np.full(n_face, face_x) + rng.normal(0.0, 0.02, n_face),
            yy.ravel() + rng.normal(0.0, 0.01, n_face),
            zz.ravel() + rng.normal(0.0, 0.01, n_face),
            rng.uniform(0.35, 0.6, n_face),
        ]
    )
    n_roof = max(n_face // 6, 4)
    roof = np.column_stack(
        [
            rng.uniform(min(face_x, cx), max(face_x, cx) + length / 2.0, n_roof),
            rng.uniform(cy - width / 2.0, cy + width / 2.0, n_roof),
            np.full(n_roof, ground_z + height) + rng.normal(0.0, 0.02, n_roof),
            rng.uniform(0.3, 0.5, n_roof),
        ]
    )
    return np.vstack([face, roof])


def _clutter_blob(rng, cx: float, cy: float, ground_z: float):
    """Pole or bush: a thin sparse column."""
    n = rng.integers(15, 50)
    top = rng.uniform(0.8, 2.4)
    return np.column_stack(
        [
            np.full(n, cx) + rng.normal(0.0, 0.12, n),
            np.full(n, cy) + rng.normal(0.0, 0.12, n),
            ground_z + rng.uniform(0.0, top, n),
            rng.uniform(0.2, 0.5, n),
        ]
    )


class Scene:
    """A seeded scene able to render any frame index deterministically."""

    def __init__(self, seed: int, config: SceneConfig | None = None):
        self.seed = int(seed)
        self.config = config or SceneConfig()
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([0x5EED, self.seed]))
        if cfg.kind == "file":
            self.ground_z = -1.73
            self.base = load_pointcloud(cfg.path).data.copy()
            return
        h = rng.uniform(*cfg.sensor_height)
        self.ground_z = -h
        parts = [self._ground(rng)]
        if cfg.kind == "synthetic_traffic":
            for _ in range(rng.integers(*cfg.n_parked, endpoint=True)):
                side = rng.choice([-1.0, 1.0])
                cx = rng.uniform(8.0, 26.0)
                cy = side * rng.uniform(3.0, 6.0)
                parts.append(_vehicle_blob(rng, cx, cy, self.ground_z))
            if rng.random() < 0.6:  # lead vehicle, beyond the stop distance
                parts.append(
                    _vehicle_blob(rng, rng.uniform(20.0, 27.0), rng.uniform(-1.0, 1.0), self.ground_z)
                )
            for _ in range(rng.integers(*cfg.n_clutter, endpoint=True)):
                cx = rng.uniform(cfg.x_range[0] + 1, cfg.x_range[1] - 1)
                cy = rng.choice([-1.0, 1.0]) * rng.uniform(4.5, 7.5)
                parts.append(_clutter_blob(rng, cx, cy, self.ground_z))
        self.base = np.vstack(parts)
        np.clip(self.base[:, 3], 0.0, 1.0, out=self.base[:, 3])

    def _ground(self, rng) -> np.ndarray:
        """Ground returns: per-cell Poisson counts driven by a patchy
        density field."""
        cfg = self.config
        xs = np.arange(cfg.x_range[0], cfg.x_range[1], CELL_AREA_SIDE)
        ys = np.arange(cfg.y_range[0], cfg.y_range[1], CELL_AREA_SIDE)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        lam = np.full(xx.shape, rng.uniform(*cfg.base_density))
        n_patches = rng.integers(*cfg.n_patches, endpoint=True)
        px0, px1, py0, py1 = cfg.patch_region
        for _ in range(n_patches):
            pcx = rng.uniform(px0, px1)
            pcy = rng.uniform(py0, py1)
            rx = rng.uniform(*cfg.patch_radius)
            ry = rng.uniform(*cfg.patch_radius)
            amp = rng.uniform(*cfg.patch_amplitude)
            lam += amp * np.exp(
                -((xx - pcx) ** 2 / (2 * rx * rx) + (yy - pcy) ** 2 / (2 * ry * ry))
            )
        lam = np.clip(lam, 0.0, cfg.max_density)
        # Surface return density is locally regular: integer part plus a
        # Bernoulli fraction keeps per-cell noise well under Poisson.
        counts = np.floor(lam).astype(np.int64) + (rng.random(lam.shape) < (lam - np.floor(lam)))
        total = int(counts.sum())
        cell_x = np.repeat(xx.ravel(), counts.ravel())
        cell_y = np.repeat(yy.ravel(), counts.ravel())
        return np.column_stack(
            [
                cell_x + rng.uniform(0.0, CELL_AREA_SIDE, total),
                cell_y + rng.uniform(0.0, CELL_AREA_SIDE, total),
                np.full(total, self.ground_z) + rng.normal(0.0, 0.012, total),
                rng.uniform(0.2, 0.4, total),
            ]
        )

    def frame_cloud(self, frame: int = 0) -> PointCloud:
        """Render a frame.  Frame 0 is the exact base scene; later frames
        shift the world past a moving sensor and add background jitter."""
        pts = self.base.copy()
        cfg = self.config
        if frame > 0:
            pts[:, 0] -= cfg.ego_speed * cfg.frame_dt * frame
            if cfg.jitter_sigma > 0.0:
                rng = np.random.default_rng(np.random.SeedSequence([0xF4A3, self.seed, frame]))
                pts[:, :3] += rng.normal(0.0, cfg.jitter_sigma, (len(pts), 3))
        np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
        return PointCloud(pts)


def make_scene_cloud(seed: int, config: SceneConfig | None = None, frame: int = 0) -> PointCloud:
    return Scene(seed, config).frame_cloud(frame)
