# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: ray casting, nearest neighbours, FPS, auction.

Kept in lockstep with ``_kernels_py`` (same tie-breaking, same arithmetic
order); built without -ffast-math so results match the fallback bitwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

from uavsar3d._kernels_py import AuctionConvergenceError

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double RAY_EPS = 1e-12
cdef double T_MIN = 1e-9


def ray_cast(origins, dirs, vertices, triangles):
    """Nearest ray/triangle hit per ray. See _kernels_py.ray_cast."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] verts = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] tris = np.ascontiguousarray(triangles, dtype=np.int64)

    cdef Py_ssize_t nrays = o.shape[0]
    cdef Py_ssize_t ntri = tris.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_best = np.full(nrays, np.inf)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tri_best = np.full(nrays, -1, dtype=np.int64)
    if ntri == 0 or nrays == 0:
        return t_best, tri_best

    cdef cnp.ndarray[cnp.float64_t, ndim=2] v0 = verts[np.asarray(tris[:, 0])]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] e1 = verts[np.asarray(tris[:, 1])] - v0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] e2 = verts[np.asarray(tris[:, 2])] - v0

    cdef Py_ssize_t r, k
    cdef double ox, oy, oz, dx, dy, dz
    cdef double hx, hy, hz, sx, sy, sz, qx, qy, qz
    cdef double a, f, u, v, t, bt
    cdef Py_ssize_t bi
    for r in range(nrays):
        ox = o[r, 0]; oy = o[r, 1]; oz = o[r, 2]
        dx = d[r, 0]; dy = d[r, 1]; dz = d[r, 2]
        bt = INFINITY
        bi = -1
        for k in range(ntri):
            hx = dy * e2[k, 2] - dz * e2[k, 1]
            hy = dz * e2[k, 0] - dx * e2[k, 2]
            hz = dx * e2[k, 1] - dy * e2[k, 0]
            a = e1[k, 0] * hx + e1[k, 1] * hy + e1[k, 2] * hz
            if fabs(a) < RAY_EPS:
                continue
            f = 1.0 / a
            sx = ox - v0[k, 0]; sy = oy - v0[k, 1]; sz = oz - v0[k, 2]
            u = f * (sx * hx + sy * hy + sz * hz)
            if u < -RAY_EPS:
                continue
            qx = sy * e1[k, 2] - sz * e1[k, 1]
            qy = sz * e1[k, 0] - sx * e1[k, 2]
            qz = sx * e1[k, 1] - sy * e1[k, 0]
            v = f * (dx * qx + dy * qy + dz * qz)
            if v < -RAY_EPS or u + v > 1.0 + RAY_EPS:
                continue
            t = f * (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz)
            if t > T_MIN and t < bt:
                bt = t
                bi = k
        t_best[r] = bt
        tri_best[r] = bi
    return t_best, tri_best


def nn_dists(query, ref):
    """Exact nearest neighbour distances/indices. See _kernels_py.nn_dists."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(ref, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t m = p.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, j, bj
    cdef double ax, ay, az, ddx, ddy, ddz, d2, best
    for i in range(n):
        ax = q[i, 0]; ay = q[i, 1]; az = q[i, 2]
        best = INFINITY
        bj = -1
        for j in range(m):
            ddx = ax - p[j, 0]
            ddy = ay - p[j, 1]
            ddz = az - p[j, 2]
            d2 = ddx * ddx + ddy * ddy + ddz * ddz
            if d2 < best:
                best = d2
                bj = j
        dist[i] = sqrt(best)
        idx[i] = bj
    return dist, idx


def farthest_point_indices(points, k, first):
    """Greedy max-min selection. See _kernels_py.farthest_point_indices."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t kk = k
    cdef Py_ssize_t f0 = first
    if not (0 <= f0 < n):
        raise ValueError("first index out of range")
    if not (1 <= kk <= n):
        raise ValueError("k must be in [1, n]")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] chosen = np.empty(kk, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2 = np.empty(n)
    cdef Py_ssize_t i, j, nxt
    cdef double cx, cy, cz, ddx, ddy, ddz, dd, best
    chosen[0] = f0
    cx = p[f0, 0]; cy = p[f0, 1]; cz = p[f0, 2]
    for j in range(n):
        ddx = p[j, 0] - cx; ddy = p[j, 1] - cy; ddz = p[j, 2] - cz
        d2[j] = ddx * ddx + ddy * ddy + ddz * ddz
    for i in range(1, kk):
        best = -INFINITY
        nxt = 0
        for j in range(n):
            if d2[j] > best:
                best = d2[j]
                nxt = j
        chosen[i] = nxt
        cx = p[nxt, 0]; cy = p[nxt, 1]; cz = p[nxt, 2]
        for j in range(n):
            ddx = p[j, 0] - cx; ddy = p[j, 1] - cy; ddz = p[j, 2] - cz
            dd = ddx * ddx + ddy * ddy + ddz * ddz
            if dd < d2[j]:
                d2[j] = dd
    return chosen


def auction_assign(cost, eps_final, eps_start=0.0, scale=0.2, max_rounds=1_000_000):
    """Epsilon-scaling auction assignment. See _kernels_py.auction_assign."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    if c.shape[1] != n:
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    cdef double epsf = eps_final
    if epsf <= 0.0:
        raise ValueError("eps_final must be positive")

    cdef double spread = float(np.max(c) - np.min(c))
    if spread == 0.0:
        return np.arange(n, dtype=np.int64)
    cdef double eps0 = eps_start
    if eps0 <= 0.0:
        eps0 = spread / 4.0
    cdef double eps = eps0 if eps0 > epsf else epsf
    cdef double sc = scale
    cdef long cap = max_rounds

    cdef cnp.ndarray[cnp.float64_t, ndim=1] prices = np.zeros(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] col_of_row = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] row_of_col = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] high_bid = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] high_bidder = np.empty(n, dtype=np.int64)

    cdef long rounds = 0
    cdef Py_ssize_t i, j, j1, prev
    cdef double val, v1, v2, bid, newp
    cdef bint any_unassigned
    while True:
        for i in range(n):
            col_of_row[i] = -1
            row_of_col[i] = -1
        while True:
            any_unassigned = False
            for j in range(n):
                high_bid[j] = -INFINITY
                high_bidder[j] = -1
            # Bid phase: every unassigned row bids on its best item.
            for i in range(n):
                if col_of_row[i] >= 0:
                    continue
                any_unassigned = True
                v1 = -INFINITY
                v2 = -INFINITY
                j1 = 0
                for j in range(n):
                    val = -c[i, j] - prices[j]
                    if val > v1:
                        v2 = v1
                        v1 = val
                        j1 = j
                    elif val > v2:
                        v2 = val
                bid = v1 - v2 + eps
                newp = prices[j1] + bid
                if newp > high_bid[j1]:
                    high_bid[j1] = newp
                    high_bidder[j1] = i
            if not any_unassigned:
                break
            rounds += 1
            if rounds > cap:
                raise AuctionConvergenceError(
                    "auction did not converge within %d rounds" % cap
                )
            # Assignment phase: items go to their highest bidder.
            for j in range(n):
                if high_bidder[j] < 0:
                    continue
                prices[j] = high_bid[j]
                prev = row_of_col[j]
                if prev >= 0:
                    col_of_row[prev] = -1
                col_of_row[high_bidder[j]] = j
                row_of_col[j] = high_bidder[j]
        if eps <= epsf:
            return col_of_row
        eps = eps * sc
        if eps < epsf:
            eps = epsf
