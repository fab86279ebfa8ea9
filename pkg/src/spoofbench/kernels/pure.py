"""Pure-numpy implementations of the hot kernels.

These are the fallback backend; the compiled extension in ``_native.pyx``
implements the same contracts.  Both must agree to float64 rounding.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"


def expit(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def bin_cells(idx, heights, intens, n_cells):
    """Accumulate per-cell point statistics.

    Returns (count, sum_height, sum_intensity, max_height, max_intensity)
    as flat float64 arrays of length n_cells; max_intensity is the
    intensity of the highest point, ties resolved to the larger intensity.
    Cells with no points hold 0 in every output.
    """
    idx = np.asarray(idx, dtype=np.int64)
    heights = np.asarray(heights, dtype=np.float64)
    intens = np.asarray(intens, dtype=np.float64)
    count = np.bincount(idx, minlength=n_cells).astype(np.float64)
    sum_h = np.bincount(idx, weights=heights, minlength=n_cells)
    sum_i = np.bincount(idx, weights=intens, minlength=n_cells)
    max_h = np.zeros(n_cells)
    max_i = np.zeros(n_cells)
    if idx.size:
        order = np.lexsort((intens, heights, idx))
        sidx = idx[order]
        last = np.nonzero(np.diff(sidx))[0]
        last = np.concatenate([last, [sidx.size - 1]])
        max_h[sidx[last]] = heights[order][last]
        max_i[sidx[last]] = intens[order][last]
    return count, sum_h, sum_i, max_h, max_i


def _gather(plane, iu, iv):
    """plane[iu, iv] with zero outside the plane bounds."""
    sh, sw = plane.shape
    ok = (iu >= 0) & (iu < sh) & (iv >= 0) & (iv < sw)
    out = plane[np.clip(iu, 0, sh - 1), np.clip(iv, 0, sw - 1)]
    return np.where(ok, out, 0.0)


def spoof_loss_delta(
    src_cnt,
    src_maxh,
    src_mint,
    su0,
    sv0,
    ca,
    sa,
    du,
    s_h,
    center,
    x_cnt,
    x_maxh,
    x_mint,
    bg_lin_obj,
    bg_lin_pos,
    bg_prod,
    mask,
    w_obj,
    w_pos,
    radius,
):
    """Loss change from merging the warped spoof patch into the scene.

    The spoof patch (src_*, anchored at lattice cell (su0, sv0)) is pushed
    through the lattice rigid map (rotation ca/sa about ``center``, then
    u-translation ``du``), bilinearly resampled, merged into the scene
    feature planes, box-smoothed with ``radius``, and scored against the
    precomputed background head fields.  Returns the masked loss delta.
    Equal to rerunning the full dense pipeline, because the patch bounds
    cover every cell the warp can touch and the heads are linear in the
    box-smoothed features.
    """
    sh, sw = src_cnt.shape
    H, W = x_cnt.shape

    # Forward-map the padded source bbox corners to bound the output patch.
    cu = np.array([su0 - 1.0, su0 - 1.0, su0 + sh + 0.0, su0 + sh + 0.0])
    cv = np.array([sv0 - 1.0, sv0 + sw + 0.0, sv0 - 1.0, sv0 + sw + 0.0])
    fu = ca * (cu - center) - sa * (cv - center) + center + du
    fv = sa * (cu - center) + ca * (cv - center) + center
    ou0 = max(int(np.floor(fu.min())) - 1, 0)
    ou1 = min(int(np.ceil(fu.max())) + 1, H - 1)
    ov0 = max(int(np.floor(fv.min())) - 1, 0)
    ov1 = min(int(np.ceil(fv.max())) + 1, W - 1)
    if ou0 > ou1 or ov0 > ov1:
        return 0.0

    uu, vv = np.meshgrid(
        np.arange(ou0, ou1 + 1), np.arange(ov0, ov1 + 1), indexing="ij"
    )
    a = uu - center - du
    b = vv - center
    su = ca * a + sa * b + center
    sv = -sa * a + ca * b + center
    i0 = np.floor(su).astype(np.int64)
    j0 = np.floor(sv).astype(np.int64)
    fu = su - i0
    fv = sv - j0
    pi = i0 - su0
    pj = j0 - sv0

    w00 = (1.0 - fu) * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w10 = fu * (1.0 - fv)
    w11 = fu * fv

    def sample(plane):
        return (
            w00 * _gather(plane, pi, pj)
            + w01 * _gather(plane, pi, pj + 1)
            + w10 * _gather(plane, pi + 1, pj)
            + w11 * _gather(plane, pi + 1, pj + 1)
        )

    tc = sample(src_cnt)
    th = s_h * sample(src_maxh)
    tm = sample(src_mint)

    xc = x_cnt[uu, vv]
    xh = x_maxh[uu, vv]
    xm = x_mint[uu, vv]
    act = tc > 0.0
    dcnt = np.where(act, tc, 0.0)
    dmaxh = np.where(act, np.where(xc > 0.0, np.maximum(th - xh, 0.0), th), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        dmint = np.where(act, tc * (tm - xm) / np.where(act, xc + tc, 1.0), 0.0)

    # Smooth the deltas over the affected region (output patch + radius).
    au0 = max(ou0 - radius, 0)
    au1 = min(ou1 + radius, H - 1)
    av0 = max(ov0 - radius, 0)
    av1 = min(ov1 + radius, W - 1)
    ah, aw = au1 - au0 + 1, av1 - av0 + 1
    div = float((2 * radius + 1) ** 2)

    def smooth(dplane):
        full = np.zeros((ah + 2 * radius, aw + 2 * radius))
        iu, iv = ou0 - au0 + radius, ov0 - av0 + radius
        full[iu : iu + dplane.shape[0], iv : iv + dplane.shape[1]] = dplane
        acc = np.zeros((ah, aw))
        for di in range(2 * radius + 1):
            for dj in range(2 * radius + 1):
                acc += full[di : di + ah, dj : dj + aw]
        return acc / div

    sm_cnt = smooth(dcnt)
    sm_maxh = smooth(dmaxh)
    sm_mint = smooth(dmint)

    region = (slice(au0, au1 + 1), slice(av0, av1 + 1))
    lin_obj = bg_lin_obj[region] + w_obj[0] * sm_cnt + w_obj[1] * sm_maxh + w_obj[2] * sm_mint
    lin_pos = bg_lin_pos[region] + w_pos[0] * sm_cnt + w_pos[1] * sm_maxh + w_pos[2] * sm_mint
    prod = expit(lin_obj) * expit(lin_pos)
    return float(((bg_prod[region] - prod) * mask[region]).sum())
