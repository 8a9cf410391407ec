"""Numba kernels for the per-pixel lattice transforms.

The kernels consume float32 storage (lattice values, axes, frames) but run
the offset/weight arithmetic in float64 before casting the blended result
back to float32. Every pixel is computed independently, so results are
bitwise identical for any thread count.

Cell lookup uses binary search on explicit axes. Uniform axes take an O(1)
guessed index followed by a local fix-up against the stored coordinates,
which lands in exactly the same cell the binary search would; a query
sitting exactly on a grid coordinate keeps an offset of exactly 0 (or 1 at
the upper boundary), so grid points reproduce stored values bit for bit.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange


def set_threads(n: int) -> int:
    """Set the kernel worker count, clamped to what the runtime allows."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return numba.get_num_threads()


@njit(cache=True, nogil=True, inline="always")
def _locate(coords, inv, uniform, v):
    """Cell index and float64 offset of v within a sampling axis."""
    n = coords.shape[0]
    if uniform:
        i = int(np.float64(v) * (n - 1))
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
        while i > 0 and coords[i] > v:
            i -= 1
        while i < n - 2 and coords[i + 1] <= v:
            i += 1
    else:
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) >> 1
            if coords[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        i = lo - 1
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
    if v == coords[i + 1]:  # only reachable at v = 1.0
        return i, 1.0
    return i, (np.float64(v) - np.float64(coords[i])) * inv[i]


@njit(cache=True, nogil=True, inline="always")
def _clamp01(v: np.float32):
    if v < 0.0:
        return np.float32(0.0), 1
    if v > 1.0:
        return np.float32(1.0), 1
    return v, 0


@njit(cache=True, nogil=True, parallel=True)
def quad_apply_kernel(
    values, ar, ag, ab, ae, inv_r, inv_g, inv_b, inv_e, uniform, frame, prior, out
):
    """Quadrilinear 4D LUT transform of one frame.

    values is the flat float32 array in file order, ``flat = (((e*n + b)*n
    + g)*n + r)*3 + ch``, so the 16 cell corners sit on 8 adjacent float
    triples. Returns the number of clamped input scalars.
    """
    h, w = frame.shape[0], frame.shape[1]
    n = ar.shape[0]
    sg = 3 * n
    sb = 3 * n * n
    se = 3 * n * n * n
    clamped = 0
    for y in prange(h):
        row_clamped = 0
        for x in range(w):
            r, cr = _clamp01(frame[y, x, 0])
            g, cg = _clamp01(frame[y, x, 1])
            b, cb = _clamp01(frame[y, x, 2])
            e, ce = _clamp01(prior[y, x])
            row_clamped += cr + cg + cb + ce

            ir, fr = _locate(ar, inv_r, uniform, r)
            ig, fg = _locate(ag, inv_g, uniform, g)
            ib, fb = _locate(ab, inv_b, uniform, b)
            ie, fe = _locate(ae, inv_e, uniform, e)

            gr = 1.0 - fr
            base = ((ie * n + ib) * n + ig) * n * 3 + ir * 3
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for de in range(2):
                we = fe if de == 1 else 1.0 - fe
                for db in range(2):
                    web = we * (fb if db == 1 else 1.0 - fb)
                    for dg in range(2):
                        webg = web * (fg if dg == 1 else 1.0 - fg)
                        o = base + de * se + db * sb + dg * sg
                        w0 = webg * gr
                        w1 = webg * fr
                        acc0 += w0 * values[o] + w1 * values[o + 3]
                        acc1 += w0 * values[o + 1] + w1 * values[o + 4]
                        acc2 += w0 * values[o + 2] + w1 * values[o + 5]

            out[y, x, 0] = np.float32(acc0)
            out[y, x, 1] = np.float32(acc1)
            out[y, x, 2] = np.float32(acc2)
        clamped += row_clamped
    return clamped


@njit(cache=True, nogil=True, parallel=True)
def tri_apply_kernel(values, ar, ag, ab, inv_r, inv_g, inv_b, uniform, frame, out):
    """Trilinear 3D LUT transform; flat values ``((b*n + g)*n + r)*3 + ch``."""
    h, w = frame.shape[0], frame.shape[1]
    n = ar.shape[0]
    sg = 3 * n
    sb = 3 * n * n
    clamped = 0
    for y in prange(h):
        row_clamped = 0
        for x in range(w):
            r, cr = _clamp01(frame[y, x, 0])
            g, cg = _clamp01(frame[y, x, 1])
            b, cb = _clamp01(frame[y, x, 2])
            row_clamped += cr + cg + cb

            ir, fr = _locate(ar, inv_r, uniform, r)
            ig, fg = _locate(ag, inv_g, uniform, g)
            ib, fb = _locate(ab, inv_b, uniform, b)

            gr = 1.0 - fr
            base = (ib * n + ig) * n * 3 + ir * 3
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for db in range(2):
                wb = fb if db == 1 else 1.0 - fb
                for dg in range(2):
                    wbg = wb * (fg if dg == 1 else 1.0 - fg)
                    o = base + db * sb + dg * sg
                    w0 = wbg * gr
                    w1 = wbg * fr
                    acc0 += w0 * values[o] + w1 * values[o + 3]
                    acc1 += w0 * values[o + 1] + w1 * values[o + 4]
                    acc2 += w0 * values[o + 2] + w1 * values[o + 5]

            out[y, x, 0] = np.float32(acc0)
            out[y, x, 1] = np.float32(acc1)
            out[y, x, 2] = np.float32(acc2)
        clamped += row_clamped
    return clamped
