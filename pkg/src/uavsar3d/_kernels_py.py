"""NumPy implementations of the hot kernels.

Mirror of the compiled core in ``_kernels_c.pyx``: same signatures, same
tie-breaking (lowest index wins), same arithmetic order where it matters,
so the two backends agree on results and either can back the package.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_RAY_EPS = 1e-12
_T_MIN = 1e-9


class AuctionConvergenceError(RuntimeError):
    """Auction assignment failed to converge within the round cap."""


def ray_cast(origins, dirs, vertices, triangles):
    """Nearest ray/triangle hit per ray (Moller-Trumbore, brute force).

    origins, dirs: (R, 3) float64; dirs need not be unit length (the hit
    parameter t is in units of the direction vector).
    vertices: (V, 3) float64; triangles: (T, 3) int64.

    Returns (t, tri): t (R,) float64 with inf on miss, tri (R,) int64 with
    -1 on miss. Ties in t resolve to the lowest triangle index.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    nrays = origins.shape[0]
    t_best = np.full(nrays, np.inf)
    tri_best = np.full(nrays, -1, dtype=np.int64)
    if triangles.shape[0] == 0 or nrays == 0:
        return t_best, tri_best

    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0

    # Component-wise arithmetic in the same association as the compiled
    # loop keeps the two backends bitwise identical.
    e1x, e1y, e1z = e1[:, 0], e1[:, 1], e1[:, 2]
    e2x, e2y, e2z = e2[:, 0], e2[:, 1], e2[:, 2]

    # Chunk rays so the (chunk, T) intermediates stay modest.
    ntri = triangles.shape[0]
    chunk = max(1, min(nrays, int(4e6 // max(ntri, 1)) + 1))
    for lo in range(0, nrays, chunk):
        o = origins[lo:lo + chunk]
        d = dirs[lo:lo + chunk]
        dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
        hx = dy * e2z - dz * e2y
        hy = dz * e2x - dx * e2z
        hz = dx * e2y - dy * e2x
        a = e1x * hx + e1y * hy + e1z * hz
        with np.errstate(divide="ignore", invalid="ignore"):
            f = 1.0 / a
            sx = o[:, 0:1] - v0[:, 0]
            sy = o[:, 1:2] - v0[:, 1]
            sz = o[:, 2:3] - v0[:, 2]
            u = f * (sx * hx + sy * hy + sz * hz)
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = f * (dx * qx + dy * qy + dz * qz)
            t = f * (e2x * qx + e2y * qy + e2z * qz)
            ok = (
                (np.abs(a) >= _RAY_EPS)
                & (u >= -_RAY_EPS)
                & (v >= -_RAY_EPS)
                & (u + v <= 1.0 + _RAY_EPS)
                & (t > _T_MIN)
            )
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(t.shape[0])
        tmin = t[rows, idx]
        hit = np.isfinite(tmin)
        t_best[lo:lo + chunk][hit] = tmin[hit]
        tri_best[lo:lo + chunk][hit] = idx[hit]
    return t_best, tri_best


def nn_dists(query, ref):
    """Exact nearest neighbour of each query point in ref (brute force).

    Returns (dist, idx): Euclidean distance and index into ref, ties to the
    lowest ref index.
    """
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n = query.shape[0]
    m = ref.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    chunk = max(1, min(n, int(4e6 // max(m, 1)) + 1))
    for lo in range(0, n, chunk):
        diff = query[lo:lo + chunk, None, :] - ref[None, :, :]
        d2 = (diff * diff).sum(axis=-1)
        j = np.argmin(d2, axis=1)
        rows = np.arange(d2.shape[0])
        dist[lo:lo + chunk] = np.sqrt(d2[rows, j])
        idx[lo:lo + chunk] = j
    return dist, idx


def farthest_point_indices(points, k, first):
    """Greedy max-min (farthest point) selection of k indices.

    first seeds the selection; subsequent picks maximize the distance to the
    already-selected set, ties to the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not (0 <= first < n):
        raise ValueError("first index out of range")
    if not (1 <= k <= n):
        raise ValueError("k must be in [1, n]")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    diff = points - points[first]
    d2 = (diff * diff).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        diff = points - points[nxt]
        d2 = np.minimum(d2, (diff * diff).sum(axis=1))
    return chosen


def auction_assign(cost, eps_final, eps_start=0.0, scale=0.2, max_rounds=1_000_000):
    """Assignment by Bertsekas auction with epsilon scaling (minimization).

    cost: (n, n) float64. Returns col_of_row (n,) int64, a bijection whose
    total cost is within n * eps_final of the optimum.

    Jacobi variant: every unassigned row bids simultaneously each round;
    an item goes to its highest bid, ties to the lowest bidder index.
    Prices persist across scaling phases (warm start); assignments reset.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if eps_final <= 0.0:
        raise ValueError("eps_final must be positive")

    benefit = -cost
    spread = float(cost.max() - cost.min())
    if spread == 0.0:
        return np.arange(n, dtype=np.int64)
    if eps_start <= 0.0:
        eps_start = spread / 4.0
    eps = max(eps_start, eps_final)

    prices = np.zeros(n)
    col_of_row = np.full(n, -1, dtype=np.int64)
    row_of_col = np.full(n, -1, dtype=np.int64)
    rounds = 0
    while True:
        col_of_row.fill(-1)
        row_of_col.fill(-1)
        while True:
            unassigned = np.nonzero(col_of_row < 0)[0]
            if unassigned.size == 0:
                break
            rounds += 1
            if rounds > max_rounds:
                raise AuctionConvergenceError(
                    "auction did not converge within %d rounds" % max_rounds
                )
            values = benefit[unassigned] - prices
            j1 = np.argmax(values, axis=1)
            rows = np.arange(unassigned.size)
            v1 = values[rows, j1]
            values[rows, j1] = -np.inf
            v2 = values.max(axis=1)
            bids = v1 - v2 + eps  # price increment over current price level
            new_price = prices[j1] + bids

            # Highest bid per item; ties to the lowest bidder index.
            # Sort by (item, -price, bidder) and keep the first row per item.
            order = np.lexsort((unassigned, -new_price, j1))
            j1o = j1[order]
            firsts = np.ones(order.size, dtype=bool)
            firsts[1:] = j1o[1:] != j1o[:-1]
            win_items = j1o[firsts]
            win_rows = unassigned[order][firsts]
            win_prices = new_price[order][firsts]

            prices[win_items] = win_prices
            prev = row_of_col[win_items]
            had_owner = prev >= 0
            col_of_row[prev[had_owner]] = -1
            col_of_row[win_rows] = win_items
            row_of_col[win_items] = win_rows
        if eps <= eps_final:
            return col_of_row
        eps = max(eps * scale, eps_final)
