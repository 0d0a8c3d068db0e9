"""Hot loops: rectangular assignment and polyline stroking.

Each kernel has a numba path and a numpy path with identical semantics; the
numba one is used unless ``CURVELAB_DISABLE_NUMBA`` is set.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit


@njit(cache=True)
def _lsa_loops(cost):
    n, m = cost.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def _lsa_vectorized(cost):
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    padded = np.zeros((n + 1, m + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    js = np.nonzero(p[1:])[0] + 1
    col_of_row[p[js] - 1] = js - 1
    return col_of_row


def linear_sum_assignment(cost, use_numba: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment of a rectangular cost matrix.

    Returns ``(rows, cols)`` like :func:`scipy.optimize.linear_sum_assignment`;
    every row is assigned when ``n_rows <= n_cols`` (and vice versa). Among
    equal-cost alternatives the scan prefers the lowest column index first.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    solve = _lsa_loops if use_numba else _lsa_vectorized
    if cost.shape[0] <= cost.shape[1]:
        cols = solve(np.ascontiguousarray(cost))
        return np.arange(cost.shape[0]), cols
    rows_of_col = solve(np.ascontiguousarray(cost.T))
    order = np.argsort(rows_of_col)
    return rows_of_col[order], np.arange(cost.shape[1])[order]


@njit(cache=True)
def _stroke_loops(mask, uv, ok, label, half_width):
    h, w = mask.shape
    for s in range(uv.shape[0] - 1):
        if not (ok[s] and ok[s + 1]):
            continue
        x0, y0 = uv[s, 0], uv[s, 1]
        x1, y1 = uv[s + 1, 0], uv[s + 1, 1]
        c_lo = max(int(np.floor(min(x0, x1) - half_width)), 0)
        c_hi = min(int(np.ceil(max(x0, x1) + half_width)), w - 1)
        r_lo = max(int(np.floor(min(y0, y1) - half_width)), 0)
        r_hi = min(int(np.ceil(max(y0, y1) + half_width)), h - 1)
        dx, dy = x1 - x0, y1 - y0
        den = dx * dx + dy * dy
        for r in range(r_lo, r_hi + 1):
            py = r + 0.5
            for c in range(c_lo, c_hi + 1):
                px = c + 0.5
                t = 0.0
                if den > 0.0:
                    t = ((px - x0) * dx + (py - y0) * dy) / den
                    t = min(max(t, 0.0), 1.0)
                ex = px - (x0 + t * dx)
                ey = py - (y0 + t * dy)
                if ex * ex + ey * ey <= half_width * half_width:
                    mask[r, c] = label


def _stroke_vectorized(mask, uv, ok, label, half_width):
    h, w = mask.shape
    for s in range(uv.shape[0] - 1):
        if not (ok[s] and ok[s + 1]):
            continue
        x0, y0 = uv[s]
        x1, y1 = uv[s + 1]
        c_lo = max(int(np.floor(min(x0, x1) - half_width)), 0)
        c_hi = min(int(np.ceil(max(x0, x1) + half_width)), w - 1)
        r_lo = max(int(np.floor(min(y0, y1) - half_width)), 0)
        r_hi = min(int(np.ceil(max(y0, y1) + half_width)), h - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        py, px = np.mgrid[r_lo:r_hi + 1, c_lo:c_hi + 1] + 0.5
        dx, dy = x1 - x0, y1 - y0
        den = dx * dx + dy * dy
        if den > 0.0:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / den, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        ex = px - (x0 + t * dx)
        ey = py - (y0 + t * dy)
        hit = ex * ex + ey * ey <= half_width * half_width
        mask[r_lo:r_hi + 1, c_lo:c_hi + 1][hit] = label


def stroke_polyline(mask: np.ndarray, uv: np.ndarray, ok: np.ndarray, label: int,
                    width: float, use_numba: bool | None = None) -> np.ndarray:
    """Paint ``label`` into ``mask`` (in place) along consecutive ok-flagged vertices.

    A pixel is painted when its center lies within ``width / 2`` of a segment.
    """
    if width < 1:
        raise ValueError(f"stroke width must be >= 1, got {width}")
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    fn = _stroke_loops if use_numba else _stroke_vectorized
    fn(mask, np.ascontiguousarray(uv, dtype=np.float64), np.ascontiguousarray(ok, dtype=np.bool_),
       int(label), float(width) / 2.0)
    return mask
