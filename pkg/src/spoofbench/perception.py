"""Post-processing: detection grid -> perceived obstacles.

Cells with objectness above threshold are clustered into connected
components (4- or 8-connectivity), clusters below the mean-positiveness
threshold are dropped, and a box builder reconstructs each obstacle's
extent from the 3D points that fall into its cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import DetectionGrid
from .errors import ValidationError
from .features import CH_COUNT, FeatureGrid, RoiSpec, cell_center, extract_features, roi_filter
from .pointcloud import PointCloud


@dataclass(frozen=True)
class PerceptionConfig:
    objectness_threshold: float = 0.5
    positiveness_threshold: float = 0.1
    connectivity: int = 8

    def __post_init__(self):
        if not (0.0 < self.objectness_threshold < 1.0):
            raise ValidationError("objectness threshold must be in (0, 1)")
        if not (0.0 < self.positiveness_threshold < 1.0):
            raise ValidationError("positiveness threshold must be in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ValidationError("connectivity must be 4 or 8")


@dataclass(frozen=True)
class Obstacle:
    """One perceived obstacle: member cells, contributing points, scores,
    and the axis-aligned bounding box of its points."""

    cells: frozenset
    point_count: int
    avg_positiveness: float
    center_x: float
    center_y: float
    length: float
    width: float
    height: float
    label: str

    def to_record(self) -> dict:
        return {
            "center_x": self.center_x,
            "center_y": self.center_y,
            "length": self.length,
            "width": self.width,
            "height": self.height,
            "point_count": self.point_count,
            "avg_positiveness": self.avg_positiveness,
            "label": self.label,
            "n_cells": len(self.cells),
        }


_NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_NEIGHBORS_8 = _NEIGHBORS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def cluster(dgrid: DetectionGrid, cfg: PerceptionConfig) -> list:
    """Connected components over cells with objectness above threshold.

    Returns a list of cell lists ordered by each component's (min u,
    min v); the threshold comparison is strict.
    """
    mask = dgrid.objectness > cfg.objectness_threshold
    return cluster_mask(mask, cfg.connectivity)


def cluster_mask(mask: np.ndarray, connectivity: int) -> list:
    """Connected components of a boolean grid, BFS over the true cells."""
    neighbors = _NEIGHBORS_4 if connectivity == 4 else _NEIGHBORS_8
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for u, v in np.argwhere(mask):
        if seen[u, v]:
            continue
        stack = [(int(u), int(v))]
        seen[u, v] = True
        comp = []
        while stack:
            cu, cv = stack.pop()
            comp.append((cu, cv))
            for du, dv in neighbors:
                nu, nv = cu + du, cv + dv
                if 0 <= nu < h and 0 <= nv < w and mask[nu, nv] and not seen[nu, nv]:
                    seen[nu, nv] = True
                    stack.append((nu, nv))
        comps.append(sorted(comp))
    comps.sort(key=lambda comp: (min(c[0] for c in comp), min(c[1] for c in comp)))
    return comps


def filter_positiveness(clusters: list, dgrid: DetectionGrid, cfg: PerceptionConfig) -> list:
    """Keep clusters whose mean positiveness strictly exceeds the threshold."""
    kept = []
    for comp in clusters:
        us = [c[0] for c in comp]
        vs = [c[1] for c in comp]
        if float(dgrid.positiveness[us, vs].mean()) > cfg.positiveness_threshold:
            kept.append(comp)
    return kept


def build_boxes(
    clusters: list,
    cloud: PointCloud,
    grid: FeatureGrid,
    dgrid: DetectionGrid,
) -> list:
    """Assign in-range points to their cell's cluster and build the
    axis-aligned bounding box of each cluster's points.

    Clusters whose cells hold no points (possible with synthetic
    detection grids) become zero-size boxes at the cluster centroid."""
    size = grid.size
    cell = grid.cell_size
    labels = np.full((size, size), -1, dtype=np.int64)
    for k, comp in enumerate(clusters):
        for u, v in comp:
            labels[u, v] = k

    point_idx = [[] for _ in clusters]
    if len(cloud) > 0 and clusters:
        u = np.floor((grid.range_m - cloud.data[:, 0]) / cell).astype(np.int64)
        v = np.floor((grid.range_m - cloud.data[:, 1]) / cell).astype(np.int64)
        ok = (u >= 0) & (u < size) & (v >= 0) & (v < size)
        owners = np.full(len(cloud), -1, dtype=np.int64)
        owners[ok] = labels[u[ok], v[ok]]
        for i in np.nonzero(owners >= 0)[0]:
            point_idx[owners[i]].append(int(i))

    obstacles = []
    for k, comp in enumerate(clusters):
        us = [c[0] for c in comp]
        vs = [c[1] for c in comp]
        avg_pos = float(dgrid.positiveness[us, vs].mean())
        class_probs = dgrid.class_probability[:, us, vs].mean(axis=1)
        label = "vehicle" if int(np.argmax(class_probs)) == 0 else "background"
        idx = point_idx[k]
        if idx:
            pts = cloud.data[idx]
            lo = pts[:, :3].min(axis=0)
            hi = pts[:, :3].max(axis=0)
            cx, cy = (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0
            length, width, height = (hi - lo).tolist()
        else:
            centers = np.array([cell_center(u, v, grid.range_m, size) for u, v in comp])
            cx, cy = centers.mean(axis=0).tolist()
            length = width = height = 0.0
        obstacles.append(
            Obstacle(
                cells=frozenset(comp),
                point_count=len(idx),
                avg_positiveness=avg_pos,
                center_x=float(cx),
                center_y=float(cy),
                length=float(length),
                width=float(width),
                height=float(height),
                label=label,
            )
        )
    return obstacles


def perceive(
    cloud: PointCloud,
    cfg: PerceptionConfig,
    roi: RoiSpec,
    detector,
) -> list:
    """Full pipeline: ROI filter, feature extraction, detection,
    clustering, positiveness filter, box building."""
    filtered = roi_filter(cloud, roi)
    grid = extract_features(filtered, roi.range_m)
    dgrid = detector.detect(grid)
    comps = cluster(dgrid, cfg)
    comps = filter_positiveness(comps, dgrid, cfg)
    return build_boxes(comps, filtered, grid, dgrid)


def save_obstacles(obstacles: list, path) -> None:
    """Line-delimited JSON report, one obstacle per line."""
    with open(path, "w") as fh:
        for obs in obstacles:
            fh.write(json.dumps(obs.to_record(), sort_keys=True) + "\n")


def load_obstacle_records(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
