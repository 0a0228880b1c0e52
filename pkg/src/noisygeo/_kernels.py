"""Numba kernels for the cluster membership sweep.

The membership test "sup_z |L[x,z] - L[y,z]| <= tau" only needs to know
whether the count of exceeding z is zero, and the count is exact when the
differences are formed in float64 (float32 table entries are exact in
float64, so subtraction does not round).  The kernels therefore compute the
canonical predicate directly; there is no approximate fast path to reconcile.

Loop shapes: centers are processed in blocks against the union of their
candidate rows, so each candidate row's z-chunk is streamed once per block
instead of once per center, keeping the sweep bandwidth-bound on L2 rather
than RAM.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def probe_counts(M_probe, centers, tau):
    """count per (center, row) of |M_probe[y,:] - M_probe[c,:]| > tau.

    M_probe is a small contiguous column subset of the table; a positive
    count here certifies sup > tau provided the exceeding column is not an
    excluded z (callers allow a slack of 2 for that).
    """
    nc = centers.shape[0]
    n, m = M_probe.shape
    out = np.empty((nc, n), np.int32)
    for a in range(nc):
        xrow = M_probe[centers[a]]
        for y in range(n):
            yrow = M_probe[y]
            c = 0
            for z in range(m):
                d = np.float64(yrow[z]) - np.float64(xrow[z])
                if d < 0.0:
                    d = -d
                if d > tau:
                    c += 1
            out[a, y] = c
    return out


@njit(cache=True, fastmath=True)
def pair_exceed_counts(M, centers, indptr, rows, tau, block, zchunk):
    """Exceed counts over all z for ragged per-center candidate lists.

    counts[k] is #{z : |M[rows[k], z] - M[centers[a], z]| > tau} for the
    center a with indptr[a] <= k < indptr[a+1].  Exclusions of z in {x, y}
    are left to the caller (cheap O(1) corrections).
    """
    nc = centers.shape[0]
    N, width = M.shape
    counts = np.zeros(rows.shape[0], np.int32)
    seen = np.empty(N, np.int64)
    union = np.empty(N, np.int64)
    pos = np.empty((block, N), np.int64)
    for a0 in range(0, nc, block):
        a1 = min(a0 + block, nc)
        nu = 0
        for k in range(indptr[a0], indptr[a1]):
            seen[rows[k]] = -1
        for k in range(indptr[a0], indptr[a1]):
            y = rows[k]
            if seen[y] < 0:
                seen[y] = nu
                union[nu] = y
                nu += 1
        for a in range(a0, a1):
            for u in range(nu):
                pos[a - a0, u] = -1
            for k in range(indptr[a], indptr[a + 1]):
                pos[a - a0, seen[rows[k]]] = k
        for z0 in range(0, width, zchunk):
            z1 = min(z0 + zchunk, width)
            for u in range(nu):
                yrow = M[union[u]]
                for a in range(a0, a1):
                    k = pos[a - a0, u]
                    if k < 0:
                        continue
                    xrow = M[centers[a]]
                    c = 0
                    for z in range(z0, z1):
                        d = np.float64(yrow[z]) - np.float64(xrow[z])
                        if d < 0.0:
                            d = -d
                        if d > tau:
                            c += 1
                    counts[k] += c
    return counts


@njit(cache=True)
def midpoint_batch(values, values_t, xs, ys):
    """argmin_z values[x, z] subject to values[z, y] < values[z, x], per pair.

    values_t is the contiguous transpose, so both constraint columns read as
    rows.  Returns -1 where no z satisfies the constraint.  Ties take the
    smallest z.  Infinities obey IEEE comparisons (no fastmath here), so
    missing entries simply never win.
    """
    n = values.shape[0]
    out = np.empty(xs.shape[0], np.int64)
    for k in range(xs.shape[0]):
        x = xs[k]
        y = ys[k]
        best = np.inf
        arg = -1
        vx = values[x]
        cy = values_t[y]
        cx = values_t[x]
        for z in range(n):
            if cy[z] < cx[z] and vx[z] < best:
                best = vx[z]
                arg = z
        out[k] = arg
    return out


@njit(cache=True)
def level_bfs(values, order, x0, theta0, maxdepth):
    """First-cover levels on the directed pair graph, collapsed per endpoint.

    Start node is the pair (t, x0) with theta0 = values[x0, t].  A pair (b, c)
    is reachable in L steps iff values[b, c] < theta_b(L-1), where theta_b
    aggregates the best finite values[b, a] over reached pairs (a, b); so the
    walk only needs per-endpoint thresholds, not |Y|^2 pair states.  order
    holds each row's argsort, letting every node consume its candidate list as
    a monotone prefix across re-expansions.  Threshold improvements are
    buffered and merged between levels to keep level counts exact.

    Returns lev with lev[c] = first level at which any pair (., c) is reached
    (lev[x0] = 0), or -1 if unreached within maxdepth.
    """
    n = values.shape[0]
    lev = np.full(n, -1, np.int32)
    theta = np.full(n, -np.inf)
    theta_new = np.full(n, -np.inf)
    ptr = np.zeros(n, np.int64)
    inq = np.full(n, -1, np.int32)
    frontier = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    lev[x0] = 0
    if not np.isfinite(theta0):
        return lev
    theta[x0] = theta0
    frontier[0] = x0
    fn = 1
    depth = 0
    while fn > 0 and depth < maxdepth:
        depth += 1
        nn = 0
        for fi in range(fn):
            b = frontier[fi]
            tb = theta[b]
            row = order[b]
            p = ptr[b]
            vb = values[b]
            while p < n:
                c = row[p]
                if not (vb[c] < tb):
                    break
                p += 1
                if lev[c] < 0:
                    lev[c] = depth
                w = values[c, b]
                if np.isfinite(w) and w > theta[c] and w > theta_new[c]:
                    theta_new[c] = w
                    if inq[c] != depth:
                        inq[c] = depth
                        nxt[nn] = c
                        nn += 1
            ptr[b] = p
        for fi in range(nn):
            c = nxt[fi]
            theta[c] = theta_new[c]
            theta_new[c] = -np.inf
        tmp = frontier
        frontier = nxt
        nxt = tmp
        fn = nn
    return lev


@njit(cache=True, fastmath=True)
def sup_abs_diff(M, x, cand):
    """max_z |M[y,z] - M[x,z]| over all z, per candidate row (no exclusions)."""
    out = np.empty(cand.shape[0])
    xrow = M[x]
    for k in range(cand.shape[0]):
        yrow = M[cand[k]]
        m = 0.0
        for z in range(M.shape[1]):
            d = np.float64(yrow[z]) - np.float64(xrow[z])
            if d < 0.0:
                d = -d
            if d > m:
                m = d
        out[k] = m
    return out
