"""Quick internal consistency battery behind ``spoofbench selftest``.

Each check prints one PASS/FAIL line; the battery is a fast subset of the
full test suite for installed environments.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .attack import (
    AttackEvaluator,
    AttackTarget,
    adv_loss,
    bilinear_sample,
    merge,
    transform_features,
)
from .detector import SurrogateDetector
from .features import CH_COUNT, RoiSpec, extract_features, roi_filter
from .perception import PerceptionConfig, cluster_mask
from .pointcloud import PointCloud
from .scene import Scene
from .spoof import (
    LidarTimingModel,
    align_trace,
    azimuth_span_deg,
    check_capability,
    sample_trace_library,
    transform_trace_3d,
)
from .transforms import TransformParams


def _flood_fill_oracle(mask, connectivity):
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    neigh = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        neigh += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comps = []
    for su in range(h):
        for sv in range(w):
            if not mask[su, sv] or seen[su, sv]:
                continue
            comp = []
            frontier = [(su, sv)]
            seen[su, sv] = True
            while frontier:
                u, v = frontier.pop()
                comp.append((u, v))
                for du, dv in neigh:
                    nu, nv = u + du, v + dv
                    if 0 <= nu < h and 0 <= nv < w and mask[nu, nv] and not seen[nu, nv]:
                        seen[nu, nv] = True
                        frontier.append((nu, nv))
            comps.append(frozenset(comp))
    return set(comps)


def run_selftest(verbose: bool = True) -> int:
    checks = []

    def check(name, ok, detail=""):
        checks.append(ok)
        if verbose:
            mark = "PASS" if ok else "FAIL"
            print(f"[{mark}] {name}" + (f" ({detail})" if detail and not ok else ""))

    rng = np.random.default_rng(42)
    timing = LidarTimingModel.vlp16()
    det = SurrogateDetector()

    check("kernel backend available", kernels.BACKEND in ("native", "pure"), kernels.BACKEND)

    # Trace synthesis obeys the capability.
    ok = True
    for budget in (20, 40, 60):
        trace = sample_trace_library(timing, budget, seed=1)
        try:
            check_capability(trace)
        except Exception as exc:  # noqa: BLE001
            ok = False
            detail = str(exc)
    check("library traces satisfy the capability", ok)

    # Bilinear interpolation is exact at nodes and at the symmetric midpoint.
    patch = rng.uniform(0, 5, (8, 8))
    node_ok = abs(bilinear_sample(patch, 3.0, 4.0) - patch[3, 4]) < 1e-12
    quad = np.zeros((2, 2))
    quad[1, 1] = 4.0
    mid_ok = abs(bilinear_sample(quad, 0.5, 0.5) - 1.0) < 1e-12
    check("bilinear interpolation node/midpoint", node_ok and mid_ok)

    # Merge identity.
    pts = rng.uniform(-20, 20, (500, 4))
    pts[:, 3] = rng.uniform(0, 1, 500)
    x = extract_features(PointCloud(pts))
    zero = extract_features(PointCloud())
    check("merge identity", np.array_equal(merge(x, zero).data, x.data))

    # Point/feature transform duality at an integer cell shift.
    trace = align_trace(sample_trace_library(timing, 60, seed=2))
    t = extract_features(trace.points)
    shift = TransformParams(theta=0.0, tau_x=4 * t.cell_size, s_h=1.0)
    via_points = extract_features(transform_trace_3d(trace, shift).points)
    via_grid = transform_features(t, shift)
    check(
        "transform duality (integer shift)",
        np.allclose(via_points.data[CH_COUNT], via_grid.data[CH_COUNT], atol=1e-9),
    )

    # Incremental attack loss equals the dense pipeline.
    scene = Scene(3)
    roi = RoiSpec()
    X = roi_filter(scene.frame_cloud(0), roi)
    xg = extract_features(X)
    target = AttackTarget.front(5.0)
    ev = AttackEvaluator(xg, t, det, target)
    ok = True
    detail = ""
    for _ in range(3):
        p = TransformParams(
            theta=rng.uniform(-0.3, 0.3), tau_x=rng.uniform(-3, 3), s_h=rng.uniform(0.7, 1.4)
        )
        fast = ev.loss(p)
        ref = adv_loss(merge(xg, transform_features(t, p)), det, target)
        if abs(fast - ref) > 1e-9:
            ok = False
            detail = f"|{fast} - {ref}| = {abs(fast - ref):.2e}"
    check("incremental loss equals dense pipeline", ok, detail)

    # Backend agreement, when both are present.
    if "native" in kernels.available_backends():
        from .kernels import _native, pure

        p = TransformParams(theta=0.2, tau_x=-1.5, s_h=1.1)
        src = ev._src
        args = (
            src[0], src[1], src[2], src[3], src[4],
            math.cos(p.theta), math.sin(p.theta), -p.tau_x / xg.cell_size, p.s_h,
            ev.center, ev._x_cnt, ev._x_maxh, ev._x_mint,
            ev._bg_lin_obj, ev._bg_lin_pos, ev._bg_prod, ev.mask,
            ev._w_obj, ev._w_pos, ev._radius,
        )
        check(
            "native and pure kernels agree",
            abs(_native.spoof_loss_delta(*args) - pure.spoof_loss_delta(*args)) < 1e-9,
        )

    # Clustering equals the flood-fill oracle.
    ok = True
    for connectivity in (4, 8):
        mask = rng.random((32, 32)) < 0.35
        got = {frozenset(c) for c in cluster_mask(mask, connectivity)}
        want = _flood_fill_oracle(mask, connectivity)
        ok = ok and got == want
    check("clustering equals flood fill", ok)

    # Capability survives the attack transform plus re-quantization.
    moved = transform_trace_3d(trace, TransformParams(theta=0.1, tau_x=-1.0, s_h=1.2))
    from .spoof import conform_to_capability

    emitted = conform_to_capability(moved, timing)
    check(
        "emitted trace within azimuth window",
        azimuth_span_deg(emitted.points) <= trace.azimuth_window_deg,
    )

    failed = len(checks) - sum(checks)
    if verbose:
        print(f"{sum(checks)}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1
