# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels (see pure.py for contracts)."""

import numpy as np

from libc.math cimport ceil, exp, floor

BACKEND_NAME = "native"


cdef inline double _expit(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def bin_cells(idx, heights, intens, n_cells):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    heights = np.ascontiguousarray(heights, dtype=np.float64)
    intens = np.ascontiguousarray(intens, dtype=np.float64)
    count = np.zeros(n_cells)
    sum_h = np.zeros(n_cells)
    sum_i = np.zeros(n_cells)
    max_h = np.zeros(n_cells)
    max_i = np.zeros(n_cells)
    cdef long long[::1] cidx = idx
    cdef double[::1] ch = heights
    cdef double[::1] ci = intens
    cdef double[::1] ccount = count
    cdef double[::1] csum_h = sum_h
    cdef double[::1] csum_i = sum_i
    cdef double[::1] cmax_h = max_h
    cdef double[::1] cmax_i = max_i
    cdef Py_ssize_t k, n = cidx.shape[0]
    cdef long long c
    cdef double h, it
    for k in range(n):
        c = cidx[k]
        h = ch[k]
        it = ci[k]
        if ccount[c] == 0.0:
            cmax_h[c] = h
            cmax_i[c] = it
        elif h > cmax_h[c] or (h == cmax_h[c] and it > cmax_i[c]):
            cmax_h[c] = h
            cmax_i[c] = it
        ccount[c] += 1.0
        csum_h[c] += h
        csum_i[c] += it
    return count, sum_h, sum_i, max_h, max_i


def spoof_loss_delta(
    const double[:, ::1] src_cnt,
    const double[:, ::1] src_maxh,
    const double[:, ::1] src_mint,
    long su0,
    long sv0,
    double ca,
    double sa,
    double du,
    double s_h,
    double center,
    const double[:, ::1] x_cnt,
    const double[:, ::1] x_maxh,
    const double[:, ::1] x_mint,
    const double[:, ::1] bg_lin_obj,
    const double[:, ::1] bg_lin_pos,
    const double[:, ::1] bg_prod,
    const double[:, ::1] mask,
    const double[::1] w_obj,
    const double[::1] w_pos,
    long radius,
):
    cdef Py_ssize_t sh = src_cnt.shape[0]
    cdef Py_ssize_t sw = src_cnt.shape[1]
    cdef Py_ssize_t H = x_cnt.shape[0]
    cdef Py_ssize_t W = x_cnt.shape[1]

    # Forward-map padded source bbox corners to bound the output patch.
    cdef double[4] cu = [su0 - 1.0, su0 - 1.0, su0 + sh + 0.0, su0 + sh + 0.0]
    cdef double[4] cv = [sv0 - 1.0, sv0 + sw + 0.0, sv0 - 1.0, sv0 + sw + 0.0]
    cdef double fmin_u = 1e300, fmax_u = -1e300, fmin_v = 1e300, fmax_v = -1e300
    cdef double fu_c, fv_c
    cdef int k
    for k in range(4):
        fu_c = ca * (cu[k] - center) - sa * (cv[k] - center) + center + du
        fv_c = sa * (cu[k] - center) + ca * (cv[k] - center) + center
        if fu_c < fmin_u: fmin_u = fu_c
        if fu_c > fmax_u: fmax_u = fu_c
        if fv_c < fmin_v: fmin_v = fv_c
        if fv_c > fmax_v: fmax_v = fv_c
    cdef long ou0 = <long>floor(fmin_u) - 1
    cdef long ou1 = <long>ceil(fmax_u) + 1
    cdef long ov0 = <long>floor(fmin_v) - 1
    cdef long ov1 = <long>ceil(fmax_v) + 1
    if ou0 < 0: ou0 = 0
    if ov0 < 0: ov0 = 0
    if ou1 > H - 1: ou1 = H - 1
    if ov1 > W - 1: ov1 = W - 1
    if ou0 > ou1 or ov0 > ov1:
        return 0.0

    cdef long au0 = ou0 - radius
    cdef long au1 = ou1 + radius
    cdef long av0 = ov0 - radius
    cdef long av1 = ov1 + radius
    if au0 < 0: au0 = 0
    if av0 < 0: av0 = 0
    if au1 > H - 1: au1 = H - 1
    if av1 > W - 1: av1 = W - 1
    cdef Py_ssize_t ah = au1 - au0 + 1
    cdef Py_ssize_t aw = av1 - av0 + 1

    dcnt_a = np.zeros((ah, aw))
    dmaxh_a = np.zeros((ah, aw))
    dmint_a = np.zeros((ah, aw))
    cdef double[:, ::1] dcnt = dcnt_a
    cdef double[:, ::1] dmaxh = dmaxh_a
    cdef double[:, ::1] dmint = dmint_a

    cdef Py_ssize_t iu, iv, oi, oj
    cdef long i0, j0, pi, pj
    cdef double a, b, su, sv, fu, fv
    cdef double w00, w01, w10, w11
    cdef double tc, th, tm, xc, xh, xm, d
    cdef double v00c, v01c, v10c, v11c
    cdef double v00h, v01h, v10h, v11h
    cdef double v00m, v01m, v10m, v11m
    cdef bint in00, in01, in10, in11
    for iu in range(ou0, ou1 + 1):
        for iv in range(ov0, ov1 + 1):
            a = iu - center - du
            b = iv - center
            su = ca * a + sa * b + center
            sv = -sa * a + ca * b + center
            i0 = <long>floor(su)
            j0 = <long>floor(sv)
            fu = su - i0
            fv = sv - j0
            pi = i0 - su0
            pj = j0 - sv0
            in00 = 0 <= pi < sh and 0 <= pj < sw
            in01 = 0 <= pi < sh and 0 <= pj + 1 < sw
            in10 = 0 <= pi + 1 < sh and 0 <= pj < sw
            in11 = 0 <= pi + 1 < sh and 0 <= pj + 1 < sw
            if not (in00 or in01 or in10 or in11):
                continue
            w00 = (1.0 - fu) * (1.0 - fv)
            w01 = (1.0 - fu) * fv
            w10 = fu * (1.0 - fv)
            w11 = fu * fv
            v00c = src_cnt[pi, pj] if in00 else 0.0
            v01c = src_cnt[pi, pj + 1] if in01 else 0.0
            v10c = src_cnt[pi + 1, pj] if in10 else 0.0
            v11c = src_cnt[pi + 1, pj + 1] if in11 else 0.0
            tc = w00 * v00c + w01 * v01c + w10 * v10c + w11 * v11c
            if tc <= 0.0:
                continue
            v00h = src_maxh[pi, pj] if in00 else 0.0
            v01h = src_maxh[pi, pj + 1] if in01 else 0.0
            v10h = src_maxh[pi + 1, pj] if in10 else 0.0
            v11h = src_maxh[pi + 1, pj + 1] if in11 else 0.0
            th = s_h * (w00 * v00h + w01 * v01h + w10 * v10h + w11 * v11h)
            v00m = src_mint[pi, pj] if in00 else 0.0
            v01m = src_mint[pi, pj + 1] if in01 else 0.0
            v10m = src_mint[pi + 1, pj] if in10 else 0.0
            v11m = src_mint[pi + 1, pj + 1] if in11 else 0.0
            tm = w00 * v00m + w01 * v01m + w10 * v10m + w11 * v11m
            xc = x_cnt[iu, iv]
            xh = x_maxh[iu, iv]
            xm = x_mint[iu, iv]
            oi = iu - au0
            oj = iv - av0
            dcnt[oi, oj] = tc
            if xc > 0.0:
                d = th - xh
                dmaxh[oi, oj] = d if d > 0.0 else 0.0
            else:
                dmaxh[oi, oj] = th
            dmint[oi, oj] = tc * (tm - xm) / (xc + tc)

    # Box-smooth the deltas in place via two separable passes.
    cdef double div = (2 * radius + 1) * (2 * radius + 1)
    tmp_a = np.zeros((ah, aw))
    cdef double[:, ::1] tmp = tmp_a
    cdef Py_ssize_t i, j
    cdef long lo, hi, t
    cdef double acc, loss, lin_o, lin_p, sc, sm, sx
    sm_cnt_a = np.zeros((ah, aw))
    sm_maxh_a = np.zeros((ah, aw))
    sm_mint_a = np.zeros((ah, aw))
    cdef double[:, ::1] sm_cnt = sm_cnt_a
    cdef double[:, ::1] sm_maxh = sm_maxh_a
    cdef double[:, ::1] sm_mint = sm_mint_a
    cdef double[:, ::1] src
    cdef double[:, ::1] dst
    cdef int plane
    for plane in range(3):
        if plane == 0:
            src = dcnt
            dst = sm_cnt
        elif plane == 1:
            src = dmaxh
            dst = sm_maxh
        else:
            src = dmint
            dst = sm_mint
        for i in range(ah):
            for j in range(aw):
                lo = j - radius
                hi = j + radius
                if lo < 0: lo = 0
                if hi > aw - 1: hi = aw - 1
                acc = 0.0
                for t in range(lo, hi + 1):
                    acc += src[i, t]
                tmp[i, j] = acc
        for j in range(aw):
            for i in range(ah):
                lo = i - radius
                hi = i + radius
                if lo < 0: lo = 0
                if hi > ah - 1: hi = ah - 1
                acc = 0.0
                for t in range(lo, hi + 1):
                    acc += tmp[t, j]
                dst[i, j] = acc / div

    loss = 0.0
    for i in range(ah):
        for j in range(aw):
            sc = sm_cnt[i, j]
            sm = sm_maxh[i, j]
            sx = sm_mint[i, j]
            if sc == 0.0 and sm == 0.0 and sx == 0.0:
                continue
            lin_o = bg_lin_obj[au0 + i, av0 + j] + w_obj[0] * sc + w_obj[1] * sm + w_obj[2] * sx
            lin_p = bg_lin_pos[au0 + i, av0 + j] + w_pos[0] * sc + w_pos[1] * sm + w_pos[2] * sx
            loss += (bg_prod[au0 + i, av0 + j] - _expit(lin_o) * _expit(lin_p)) * mask[au0 + i, av0 + j]
    return loss
