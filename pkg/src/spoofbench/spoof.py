"""Spoofed-point capability model.

A spoofer synchronized to the victim LiDAR injects one fake return per
firing slot it targets.  The firing sequence fixes which vertical angle a
slot maps to, the cycle index fixes the azimuth, and the pulse delay fixes
the apparent distance (d = c * delay / 2).  The capability is bounded: a
limited point budget, a narrow horizontal window, and returns only on the
sensor's native vertical angles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CapabilityViolation, ValidationError
from .pointcloud import PointCloud, load_pointcloud, save_pointcloud
from .transforms import TransformParams

SPEED_OF_LIGHT = 299792458.0  # m/s
MIN_SPOOF_DISTANCE = 1.0  # m
MAX_SPOOF_DISTANCE = 100.0  # m
BUDGETS = (20, 40, 60)


@dataclass(frozen=True)
class LidarTimingModel:
    """Firing-sequence timing of the victim sensor (VLP-16 by default)."""

    vertical_angles: tuple = tuple(range(-15, 16, 2))  # degrees
    cycle_period_us: float = 55.296
    slot_period_us: float = 2.304
    receive_window_ns: float = 667.0
    azimuth_resolution_deg: float = 0.2

    def __post_init__(self):
        angles = tuple(float(a) for a in self.vertical_angles)
        if list(angles) != sorted(angles):
            raise ValidationError("vertical angles must be sorted ascending")
        if angles and (angles[0] < -15.0 or angles[-1] > 15.0):
            raise ValidationError("vertical angles must lie within [-15, +15] degrees")
        if not (self.cycle_period_us > self.slot_period_us > 0.0):
            raise ValidationError("need cycle period > slot period > 0")
        object.__setattr__(self, "vertical_angles", angles)

    @classmethod
    def vlp16(cls) -> "LidarTimingModel":
        return cls()

    @property
    def firing_order(self) -> tuple:
        """Slot index -> vertical angle.  The sensor interleaves the lower
        and upper halves of the angle list (-15, +1, -13, +3, ...)."""
        angles = self.vertical_angles
        half = (len(angles) + 1) // 2
        lower, upper = angles[:half], angles[half:]
        order = []
        for i in range(half):
            order.append(lower[i])
            if i < len(upper):
                order.append(upper[i])
        return tuple(order)

    def slot_of_angle(self, angle: float) -> int:
        order = self.firing_order
        for i, a in enumerate(order):
            if abs(a - angle) < 1e-9:
                return i
        raise ValidationError(f"{angle} is not a supported vertical angle")


class PulseCommand(NamedTuple):
    """One scheduled fake return: which cycle (azimuth step relative to the
    window center), which firing slot, and the pulse delay."""

    cycle: int
    slot: int
    delay_ns: float


@dataclass(frozen=True)
class SpoofTrace:
    """A spoofed point cloud plus its capability metadata."""

    points: PointCloud
    budget: int
    azimuth_window_deg: float = 8.0
    aligned: bool = False
    vertical_angles: tuple = tuple(range(-15, 16, 2))

    def __post_init__(self):
        if self.budget not in BUDGETS:
            raise ValidationError(f"budget must be one of {BUDGETS}, got {self.budget}")
        if len(self.points) > self.budget:
            raise ValidationError(
                f"trace has {len(self.points)} points, over budget {self.budget}"
            )
        if self.azimuth_window_deg <= 0.0:
            raise ValidationError("azimuth window must be positive")
        object.__setattr__(
            self, "vertical_angles", tuple(float(a) for a in self.vertical_angles)
        )

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: PointCloud, aligned=None) -> "SpoofTrace":
        return replace(
            self, points=points, aligned=self.aligned if aligned is None else aligned
        )


def ranges_of(points: PointCloud) -> np.ndarray:
    return np.linalg.norm(points.xyz, axis=1)


def azimuths_deg(points: PointCloud) -> np.ndarray:
    return np.degrees(np.arctan2(points.data[:, 1], points.data[:, 0]))


def elevations_deg(points: PointCloud) -> np.ndarray:
    r = ranges_of(points)
    return np.degrees(np.arcsin(np.clip(points.data[:, 2] / r, -1.0, 1.0)))


def mean_azimuth_deg(points: PointCloud) -> float:
    az = np.radians(azimuths_deg(points))
    return math.degrees(math.atan2(np.sin(az).mean(), np.cos(az).mean()))


def azimuth_span_deg(points: PointCloud) -> float:
    if len(points) == 0:
        return 0.0
    mean = mean_azimuth_deg(points)
    rel = (azimuths_deg(points) - mean + 180.0) % 360.0 - 180.0
    return float(rel.max() - rel.min())


def check_capability(trace: SpoofTrace, angle_tol_deg: float = 1e-6) -> None:
    """Raise CapabilityViolation unless the trace is physically spoofable:
    within budget, azimuth span inside the window, every point on a valid
    vertical angle, and every range inside the spoofable band."""
    if len(trace) > trace.budget:
        raise CapabilityViolation(f"{len(trace)} points exceed budget {trace.budget}")
    if len(trace) == 0:
        return
    span = azimuth_span_deg(trace.points)
    if span > trace.azimuth_window_deg + 1e-9:
        raise CapabilityViolation(
            f"azimuth span {span:.3f} deg exceeds window {trace.azimuth_window_deg} deg"
        )
    r = ranges_of(trace.points)
    if r.min() < MIN_SPOOF_DISTANCE - 1e-9 or r.max() > MAX_SPOOF_DISTANCE + 1e-9:
        raise CapabilityViolation(
            f"ranges [{r.min():.2f}, {r.max():.2f}] outside "
            f"[{MIN_SPOOF_DISTANCE}, {MAX_SPOOF_DISTANCE}] m"
        )
    valid = np.asarray(trace.vertical_angles)
    elev = elevations_deg(trace.points)
    err = np.abs(elev[:, None] - valid[None, :]).min(axis=1)
    if err.max() > angle_tol_deg:
        raise CapabilityViolation(
            f"point elevation off the vertical-angle grid by {err.max():.6f} deg"
        )


def _spherical_to_xyz(rng_m: np.ndarray, az_deg: np.ndarray, el_deg: np.ndarray) -> np.ndarray:
    az = np.radians(az_deg)
    el = np.radians(el_deg)
    return np.column_stack(
        [
            rng_m * np.cos(el) * np.cos(az),
            rng_m * np.cos(el) * np.sin(az),
            rng_m * np.sin(el),
        ]
    )


def synthesize_trace(
    timing: LidarTimingModel,
    schedule: Sequence[PulseCommand],
    center_azimuth_deg: float = 0.0,
    azimuth_window_deg: float = 8.0,
    intensity: float = 1.0,
    budget: int | None = None,
) -> SpoofTrace:
    """Turn a per-slot delay schedule into the spoofed points it produces.

    Each command yields one point: azimuth from the cycle index (one
    azimuth step per firing cycle), elevation from the slot index per the
    firing sequence, distance d = c * delay / 2.
    """
    commands = [PulseCommand(*c) for c in schedule]
    if budget is None:
        budget = next((b for b in BUDGETS if len(commands) <= b), None)
        if budget is None:
            raise CapabilityViolation(
                f"{len(commands)} scheduled pulses exceed the largest budget {BUDGETS[-1]}"
            )
    if len(commands) > budget:
        raise CapabilityViolation(f"{len(commands)} pulses exceed budget {budget}")
    order = timing.firing_order
    half_window = azimuth_window_deg / 2.0
    rows = []
    for cmd in sorted(commands):
        az_offset = cmd.cycle * timing.azimuth_resolution_deg
        if abs(az_offset) > half_window + 1e-9:
            raise CapabilityViolation(
                f"cycle {cmd.cycle} sits {az_offset:.2f} deg from the window center, "
                f"outside the {azimuth_window_deg} deg azimuth window"
            )
        if not 0 <= cmd.slot < len(order):
            raise ValidationError(f"slot {cmd.slot} outside [0, {len(order)})")
        dist = SPEED_OF_LIGHT * cmd.delay_ns * 1e-9 / 2.0
        if not (MIN_SPOOF_DISTANCE - 1e-9 <= dist <= MAX_SPOOF_DISTANCE + 1e-9):
            raise ValidationError(
                f"delay {cmd.delay_ns} ns maps to {dist:.2f} m, outside "
                f"[{MIN_SPOOF_DISTANCE}, {MAX_SPOOF_DISTANCE}] m"
            )
        rows.append((dist, center_azimuth_deg + az_offset, order[cmd.slot]))
    if rows:
        arr = np.array(rows)
        xyz = _spherical_to_xyz(arr[:, 0], arr[:, 1], arr[:, 2])
        cloud = PointCloud(np.column_stack([xyz, np.full(len(rows), intensity)]))
    else:
        cloud = PointCloud()
    return SpoofTrace(
        points=cloud,
        budget=budget,
        azimuth_window_deg=azimuth_window_deg,
        aligned=False,
        vertical_angles=timing.vertical_angles,
    )


def delay_for_distance(distance_m: float) -> float:
    """Pulse delay in nanoseconds producing a fake return at distance_m."""
    return 2.0 * distance_m / SPEED_OF_LIGHT * 1e9


@dataclass(frozen=True)
class CapabilityDelta:
    """The three physical knobs: distance shift along each sensor ray,
    altitude shift in whole vertical-line steps, azimuth rotation."""

    delta_r: float = 0.0
    delta_h: int = 0
    delta_theta_deg: float = 0.0


def apply_capability(trace: SpoofTrace, delta: CapabilityDelta) -> SpoofTrace:
    """Move every point per the capability delta; intensity unchanged."""
    if len(trace) == 0:
        raise ValidationError("cannot modify an empty trace")
    r = ranges_of(trace.points)
    az = azimuths_deg(trace.points)
    el = elevations_deg(trace.points)

    new_r = r + delta.delta_r
    if new_r.min() <= 0.0:
        raise ValidationError(
            f"distance shift {delta.delta_r} m drives a point to range {new_r.min():.3f} m"
        )
    if delta.delta_h != 0:
        valid = np.asarray(trace.vertical_angles)
        idx = np.abs(el[:, None] - valid[None, :]).argmin(axis=1)
        new_idx = idx + int(delta.delta_h)
        if new_idx.min() < 0 or new_idx.max() >= len(valid):
            raise CapabilityViolation(
                f"vertical shift {delta.delta_h} leaves the supported angle set"
            )
        el = valid[new_idx]
    az = az + delta.delta_theta_deg

    xyz = _spherical_to_xyz(new_r, az, el)
    cloud = PointCloud(np.column_stack([xyz, trace.points.intensity]))
    return trace.with_points(cloud, aligned=trace.aligned and delta.delta_theta_deg == 0.0)


def transform_trace_3d(trace: SpoofTrace, params: TransformParams) -> SpoofTrace:
    """Apply the homogeneous attack transform to every point: rotate theta
    about z, translate tau_x along x, scale heights by s_h.  Intensities
    are preserved.  Requires an aligned trace."""
    if not trace.aligned:
        raise ValidationError("trace must be aligned to the x axis before transforming")
    mat = params.matrix()
    xyz = trace.points.xyz @ mat[:3, :3].T + mat[:3, 3]
    cloud = PointCloud(np.column_stack([xyz, trace.points.intensity]))
    identity_rotation = params.theta == 0.0
    return trace.with_points(cloud, aligned=trace.aligned and identity_rotation)


def align_trace(trace: SpoofTrace) -> SpoofTrace:
    """Rotate the trace about z so its mean azimuth is zero."""
    if len(trace) == 0:
        raise ValidationError("cannot align an empty trace")
    mean = mean_azimuth_deg(trace.points)
    r = ranges_of(trace.points)
    az = azimuths_deg(trace.points) - mean
    el = elevations_deg(trace.points)
    xyz = _spherical_to_xyz(r, az, el)
    cloud = PointCloud(np.column_stack([xyz, trace.points.intensity]))
    return trace.with_points(cloud, aligned=True)


# Vertical lines used by the library generator, chosen center-out: with the
# full 60-point budget the center 8-10 lines carry the stably spoofable
# points; smaller budgets shrink to the centermost lines.
_LINES_PER_BUDGET = {20: 5, 40: 8, 60: 10}


def sample_trace_library(
    timing: LidarTimingModel,
    budget: int,
    seed: int,
    range_band: tuple = (4.0, 6.0),
    intensity: float = 1.0,
) -> SpoofTrace:
    """Deterministic seeded trace with exactly ``budget`` points.

    Points sit on the centermost vertical lines over a narrow block of
    consecutive azimuth slots, with ranges drawn uniformly from
    ``range_band``.  The narrow azimuth footprint keeps the trace inside
    the window even after the attack transform drags it closer."""
    if budget not in BUDGETS:
        raise ValidationError(f"budget must be one of {BUDGETS}, got {budget}")
    n_lines = _LINES_PER_BUDGET[budget]
    angles = sorted(timing.vertical_angles, key=lambda a: (abs(a), a))[:n_lines]
    angles = sorted(angles)
    n_cycles = budget // n_lines
    rng = np.random.default_rng(seed)
    commands = []
    for j in range(n_cycles):
        cycle = j - (n_cycles - 1) // 2
        for angle in angles:
            dist = rng.uniform(*range_band)
            commands.append(
                PulseCommand(cycle, timing.slot_of_angle(angle), delay_for_distance(dist))
            )
    trace = synthesize_trace(timing, commands, budget=budget, intensity=intensity)
    check_capability(trace)
    return trace


def conform_to_capability(trace: SpoofTrace, timing: LidarTimingModel) -> SpoofTrace:
    """Re-quantize a transformed trace onto the sensor's native angular
    grid: snap each point's elevation to the nearest vertical angle,
    preserving range and azimuth.  Raises CapabilityViolation if the
    result is still not spoofable (azimuth span or range out of bounds)."""
    if len(trace) == 0:
        return trace
    r = ranges_of(trace.points)
    az = azimuths_deg(trace.points)
    el = elevations_deg(trace.points)
    valid = np.asarray(timing.vertical_angles)
    snapped = valid[np.abs(el[:, None] - valid[None, :]).argmin(axis=1)]
    xyz = _spherical_to_xyz(r, az, snapped)
    cloud = PointCloud(np.column_stack([xyz, trace.points.intensity]))
    out = replace(trace, points=cloud, vertical_angles=timing.vertical_angles)
    check_capability(out)
    return out


def save_trace(trace: SpoofTrace, basepath, format: str = "csv") -> None:
    """Write the trace points plus a sidecar metadata record."""
    base = Path(basepath)
    suffix = ".bin" if format == "packed-binary" else ".csv"
    save_pointcloud(trace.points, base.with_suffix(suffix), format)
    meta = {
        "budget": trace.budget,
        "azimuth_window_deg": trace.azimuth_window_deg,
        "aligned": trace.aligned,
        "vertical_angles": list(trace.vertical_angles),
    }
    base.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_trace(basepath) -> SpoofTrace:
    base = Path(basepath)
    meta = json.loads(base.with_suffix(".meta.json").read_text())
    for suffix, fmt in ((".csv", "csv"), (".bin", "packed-binary")):
        candidate = base.with_suffix(suffix)
        if candidate.exists():
            points = load_pointcloud(candidate, fmt)
            break
    else:
        raise ValidationError(f"no point file found next to {base}")
    return SpoofTrace(
        points=points,
        budget=int(meta["budget"]),
        azimuth_window_deg=float(meta["azimuth_window_deg"]),
        aligned=bool(meta["aligned"]),
        vertical_angles=tuple(meta["vertical_angles"]),
    )
