"""Distance recovery from ordering comparators.

A Comparator is a table of pairwise scores whose single promised property is
that, per row x, score order tracks true geodesic order up to an additive
resolution epsilon: d(x,y) >= d(x,z) + eps implies value(x,y) > value(x,z)
whenever both entries are finite.  That ordering alone supports approximate
midpoints, dyadic geodesic paths, and a binary-searched distance-ratio query,
which compose into full recovery of all pairwise distances up to
O(eps log 1/eps) after diameter normalization.

When entries can be infinite (distant pairs unobserved), scores are only
trustworthy below a cutoff r.  Recovery then walks a directed graph on
ordered pairs, (a,b) -> (b,c) whenever inf > value(b,a) > value(b,c), whose
bounded-depth reachability both certifies per-point anchors tau(x) at
distance ~ r*diam and counts chain lengths that stand in for long distances.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import level_bfs, midpoint_batch
from .errors import InvalidInput, MidpointNotFound, RatioUnavailable, TauNotFound


@dataclass(frozen=True)
class Comparator:
    """Pairwise score table with a guaranteed ordering resolution.

    values[x, y] may be +inf (pair unobserved).  epsilon is the additive
    resolution the ordering contract is claimed at, not a noise level.
    """

    values: np.ndarray
    epsilon: float

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInput("comparator values must be a square matrix")
        if v.shape[0] < 1:
            raise InvalidInput("comparator needs at least one point")
        if np.isnan(v).any():
            raise InvalidInput("comparator values must not contain NaN")
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidInput("epsilon must lie in (0, 1)")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_proxy(cls, table, params):
        """Wrap a cluster ProxyTable; its scores order distances at 17*eps.

        On a diameter-1 space a resolution of 1 or more orders nothing, so
        the stored epsilon is capped just below 1: the contract is vacuous
        there either way and the level count stays at its floor of 1.
        """
        eps = min(17.0 * params.epsilon, math.nextafter(1.0, 0.0))
        return cls(np.asarray(table.values, dtype=np.float64), eps)

    @property
    def n_levels(self) -> int:
        return max(1, int(math.ceil(math.log2(1.0 / self.epsilon))))

    def __len__(self):
        return self.values.shape[0]

    def __call__(self, x, y) -> float:
        return float(self.values[x, y])


@dataclass(frozen=True)
class DyadicPath:
    """Indices f(a) in Y for dyadic a = k/2^n along an approximate geodesic."""

    x: int
    y: int
    n: int
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.int64))
        if nodes.ndim != 1 or nodes.shape[0] != (1 << self.n) + 1:
            raise InvalidInput("path must hold 2^n + 1 nodes")
        if nodes[0] != self.x or nodes[-1] != self.y:
            raise InvalidInput("path endpoints disagree with base pair")
        object.__setattr__(self, "nodes", nodes)

    @property
    def base(self):
        return (self.x, self.y)

    @property
    def values(self):
        m = 1 << self.n
        return {k / m: int(self.nodes[k]) for k in range(m + 1)}

    def at(self, a) -> int:
        k = a * (1 << self.n)
        if k != int(round(k)):
            raise InvalidInput(f"{a} is not dyadic at resolution 2^-{self.n}")
        return int(self.nodes[int(round(k))])


@dataclass(frozen=True)
class RecoveredMetric:
    """Symmetric recovered distances, max-normalized to diameter 1."""

    distances: np.ndarray
    anchor_info: dict

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidInput("distances must be square")
        if not np.array_equal(d, d.T):
            raise InvalidInput("distances must be symmetric")
        if np.diagonal(d).any():
            raise InvalidInput("diagonal must be zero")
        if not np.isfinite(d).all() or d.min() < 0.0:
            raise InvalidInput("distances must be finite and nonnegative")
        mx = d.max() if d.size else 0.0
        if d.shape[0] > 1 and mx not in (0.0, 1.0):
            raise InvalidInput("distances must be max-normalized")
        object.__setattr__(self, "distances", d)


def _transpose(values):
    return np.ascontiguousarray(values.T)


def _midpoints(values, values_t, xs, ys):
    xs = np.ascontiguousarray(np.asarray(xs, dtype=np.int64))
    ys = np.ascontiguousarray(np.asarray(ys, dtype=np.int64))
    out = midpoint_batch(values, values_t, xs, ys)
    bad = np.flatnonzero(out < 0)
    if bad.size:
        k = int(bad[0])
        raise MidpointNotFound(int(xs[k]), int(ys[k]))
    return out


def midpoint(cmp: Comparator, x: int, y: int) -> int:
    """z minimizing value(x,z) subject to value(z,y) < value(z,x).

    On a contract-honoring comparator both d(x,z) and d(y,z) land within
    9*eps/2 of d(x,y)/2.  Ties take the smallest index.
    """
    n = len(cmp)
    if not (0 <= x < n and 0 <= y < n):
        raise InvalidInput("midpoint endpoints out of range")
    v = cmp.values
    return int(_midpoints(v, _transpose(v), [x], [y])[0])


def _build_paths(values, values_t, starts, ends, n):
    """Batched dyadic subdivision; one midpoint sweep per level.

    Level k fills positions step*(2t+1), step = 2^(n-k), from the two
    enclosing nodes, so row i always holds the path starts[i] -> ends[i].
    """
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    m = starts.shape[0]
    nodes = np.empty((m, (1 << n) + 1), dtype=np.int64)
    nodes[:, 0] = starts
    nodes[:, -1] = ends
    for k in range(1, n + 1):
        step = 1 << (n - k)
        news = step * (2 * np.arange(1 << (k - 1), dtype=np.int64) + 1)
        lefts = nodes[:, news - step].ravel()
        rights = nodes[:, news + step].ravel()
        # exhausted intervals (grid resolution reached) keep their node
        mids = lefts.copy()
        live = lefts != rights
        if live.any():
            mids[live] = _midpoints(values, values_t, lefts[live], rights[live])
        nodes[:, news] = mids.reshape(m, news.shape[0])
    return nodes


def build_dyadic_path(cmp: Comparator, x: int, y: int, n=None) -> DyadicPath:
    if n is None:
        n = cmp.n_levels
    if n < 0:
        raise InvalidInput("n must be nonnegative")
    m = len(cmp)
    if not (0 <= x < m and 0 <= y < m):
        raise InvalidInput("path endpoints out of range")
    v = cmp.values
    nodes = _build_paths(v, _transpose(v), [x], [y], n)[0]
    return DyadicPath(x=int(x), y=int(y), n=int(n), nodes=nodes)


def _ratio_pairs(values, nodes, rows, bases, zs):
    """Largest node position i with value(base, z) >= value(base, nodes[row, i]).

    Vector binary search under the convention that position 0 passing is
    required (else 0) and the last position passing returns saturation.  The
    comparator contract makes any pass/fail crossing a valid answer, so
    non-monotone noise costs only the usual eps slack.
    """
    rows = np.asarray(rows, dtype=np.int64)
    bases = np.asarray(bases, dtype=np.int64)
    zs = np.asarray(zs, dtype=np.int64)
    last = nodes.shape[1] - 1
    target = values[bases, zs]
    p0 = target >= values[bases, nodes[rows, 0]]
    pl = target >= values[bases, nodes[rows, last]]
    lo = np.zeros(bases.shape[0], dtype=np.int64)
    hi = np.full(bases.shape[0], last, dtype=np.int64)
    active = p0 & ~pl
    while True:
        gap = active & (hi - lo > 1)
        if not gap.any():
            break
        mid = (lo + hi) >> 1
        pm = target >= values[bases, nodes[rows, mid]]
        lo = np.where(gap & pm, mid, lo)
        hi = np.where(gap & ~pm, mid, hi)
    out = np.where(pl, last, np.where(p0, lo, 0))
    return out.astype(np.int64)


def ratio(cmp: Comparator, path: DyadicPath, z: int) -> float:
    """a = largest dyadic with value(x,z) >= value(x, f(a)), x = path base.

    Estimates min{d(x,z), d(x,y)} / d(x,y) within (9n+1)*eps/d(x,y).  The
    paper's strict inequality is relaxed to >= so that z = y returns exactly
    a = 1 on an exact comparator; the contract argument is unchanged.
    """
    m = len(cmp)
    if not (0 <= z < m):
        raise InvalidInput("ratio target out of range")
    v = cmp.values
    probes = v[path.x, path.nodes]
    if not (np.isfinite(v[path.x, z]) and np.isfinite(probes).all()):
        raise RatioUnavailable(
            f"infinite comparator entry on pair ({path.x}, {z}) or its path"
        )
    idx = _ratio_pairs(v, path.nodes[None, :], [0], [path.x], [z])[0]
    return float(idx) / float(1 << path.n)


def _cascade_ratios(values, values_t, nodes, rows, bases, zs, n):
    """Saturation-free ratio estimates d(base, z) / d(base, end).

    A saturated search (a = 1) only certifies d(base,z) >= d(base,end), so
    halve the target with a midpoint and retry, doubling the answer; twice
    suffices because every anchor below is at least a quarter diameter.
    Returns (estimates, first-level saturations, second-level saturations).
    """
    scale = float(1 << n)
    rows = np.asarray(rows, dtype=np.int64)
    bases = np.asarray(bases, dtype=np.int64)
    zs = np.asarray(zs, dtype=np.int64)
    idx = _ratio_pairs(values, nodes, rows, bases, zs)
    est = idx / scale
    est[zs == bases] = 0.0  # self-pairs saturate on degenerate paths
    sat1 = np.flatnonzero((idx == (1 << n)) & (zs != bases))
    if sat1.size:
        m1 = _midpoints(values, values_t, bases[sat1], zs[sat1])
        idx1 = _ratio_pairs(values, nodes, rows[sat1], bases[sat1], m1)
        est[sat1] = 2.0 * idx1 / scale
        sat2 = np.flatnonzero(idx1 == (1 << n))
        if sat2.size:
            take = sat1[sat2]
            m2 = _midpoints(values, values_t, bases[take], m1[sat2])
            idx2 = _ratio_pairs(values, nodes, rows[take], bases[take], m2)
            est[take] = 4.0 * idx2 / scale
    else:
        sat2 = np.empty(0, dtype=np.int64)
    return est, int(sat1.size), int(sat2.size)


def recover_all(cmp: Comparator, n=None, row_block=256) -> RecoveredMetric:
    """All pairwise distances from a complete comparator, diameter-normalized.

    Anchors: x1 = 0, x2 = argmax value(x1, .) is nearly antipodal, and the
    midpoint x' of (x1, x2) splits Y into halves so that every y keeps an
    anchor x(y) in {x1, x2} at distance >= 1/4 - 7*eps.  Each pair distance
    is the product of two ratio estimates, d(y,z)/d(y,x(y)) and
    d(y,x(y))/d(x1,x2), so the unknown scale d(x1,x2) cancels under the final
    max-normalization.
    """
    v = cmp.values
    nn = v.shape[0]
    if nn < 2:
        raise InvalidInput("recovery needs at least two points")
    if not np.isfinite(v).all():
        raise RatioUnavailable("comparator has infinite entries; use recover_all_missing")
    if n is None:
        n = cmp.n_levels
    if n < 1:
        raise InvalidInput("n must be at least 1")
    vt = _transpose(v)

    x1 = 0
    x2 = int(np.argmax(v[x1]))
    if x2 == x1:
        raise InvalidInput("anchor selection failed: row 0 is maximized on the diagonal")
    anchor_paths = _build_paths(v, vt, [x1, x2], [x2, x1], n)
    xprime = int(anchor_paths[0, 1 << (n - 1)])

    use2 = v[x1] <= v[x1, xprime]
    # the split test can only misfile the anchors themselves (tiny nets
    # collapse x' onto x2); their assignment is forced either way
    use2[x1] = True
    use2[x2] = False
    ends = np.where(use2, x2, x1).astype(np.int64)
    paths = _build_paths(v, vt, np.arange(nn, dtype=np.int64), ends, n)

    # d(y, x(y)) / d(x1, x2), searched on the anchor pair's own path.
    est2, sat_a, sat_b = _cascade_ratios(
        v, vt, anchor_paths, use2.astype(np.int64), ends, np.arange(nn), n
    )

    r = np.empty((nn, nn), dtype=np.float64)
    zs_all = np.arange(nn, dtype=np.int64)
    for lo in range(0, nn, row_block):
        hi = min(lo + row_block, nn)
        ys = np.repeat(np.arange(lo, hi, dtype=np.int64), nn)
        zs = np.tile(zs_all, hi - lo)
        est1, s1, s2 = _cascade_ratios(v, vt, paths, ys, ys, zs, n)
        sat_a += s1
        sat_b += s2
        r[lo:hi] = est1.reshape(hi - lo, nn) * est2[lo:hi, None]

    s = 0.5 * (r + r.T)
    np.fill_diagonal(s, 0.0)
    norm = float(s.max())
    if norm > 0.0:
        s /= norm
    info = {
        "mode": "complete",
        "x1": x1,
        "x2": x2,
        "xprime": xprime,
        "n": int(n),
        "normalization": norm,
        "saturation_cascades": (int(sat_a), int(sat_b)),
    }
    return RecoveredMetric(distances=s, anchor_info=info)


def pair_graph_successors(cmp: Comparator, node) -> np.ndarray:
    """Successors of pair (a, b): all c with inf > value(b,a) > value(b,c)."""
    a, b = node
    m = len(cmp)
    if not (0 <= a < m and 0 <= b < m):
        raise InvalidInput("pair node out of range")
    vba = cmp.values[b, a]
    if not np.isfinite(vba):
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(cmp.values[b] < vba).astype(np.int64)


def _row_orders(values):
    # argsort rows once; level_bfs consumes each row as a monotone prefix
    return np.ascontiguousarray(np.argsort(values, axis=1, kind="stable"))


def _tau_search(values, order, x, maxdepth):
    """Smallest value(x,t) whose pair (t,x) reaches all of Y within maxdepth.

    Feasibility depends on t only through the starting threshold value(x,t)
    and is monotone in it, so binary search over the sorted finite row.
    Stable order breaks value ties toward the smaller index.
    """
    row = values[x]
    cand = np.argsort(row, kind="stable")
    nfin = int(np.isfinite(row[cand]).sum())
    if nfin == 0:
        raise TauNotFound(x, f"point {x}: no finite comparator entries")
    lo, hi = 0, nfin - 1

    def feasible(pos):
        lev = level_bfs(values, order, x, row[cand[pos]], maxdepth)
        return bool((lev >= 0).all())

    if not feasible(hi):
        raise TauNotFound(x)
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid + 1
    return int(cand[lo])


def tau(cmp: Comparator, r: float, x: int, maxdepth=None) -> int:
    """Anchor candidate minimizing value(x, t) under pair-graph reachability.

    From the pair (t, x) every z in Y must be reachable within floor(3/r)
    directed steps.  On contract-honoring comparators the returned t obeys
    d(x, t) in [r*D/9, r*D/2] for diameter D.
    """
    m = len(cmp)
    if not (0 <= x < m):
        raise InvalidInput("tau center out of range")
    if not (0.0 < r <= 1.0):
        raise InvalidInput("cutoff r must lie in (0, 1]")
    if maxdepth is None:
        maxdepth = int(math.floor(3.0 / r))
    if maxdepth < 1:
        raise InvalidInput("maxdepth must be at least 1")
    v = cmp.values
    return _tau_search(v, _row_orders(v), x, maxdepth)


def recover_all_missing(cmp: Comparator, r: float, n=None, row_block=256) -> RecoveredMetric:
    """Full recovery when entries beyond the cutoff r are unobserved.

    Per point x: anchor tau(x) at distance ~ r*D, dyadic path Gamma_x toward
    it, then d(x,y)/d(x,tau(x)) by ratio search when value(x,y) is finite and
    below value(x,tau(x)), else by the minimal k*eps*n_k over dyadic
    k*eps in [1/3, 2/3], where n_k counts pair-graph steps from
    (Gamma_x(k*eps), x) to y.  Anchor scales transfer to the point z = 0
    through ratio quotients, case-split on how z sees x versus tau(x); the
    common scale d(z, tau(z)) cancels under max-normalization.
    """
    v = cmp.values
    nn = v.shape[0]
    if nn < 2:
        raise InvalidInput("recovery needs at least two points")
    if not (0.0 < r <= 1.0):
        raise InvalidInput("cutoff r must lie in (0, 1]")
    if n is None:
        n = cmp.n_levels
    if n < 2:
        raise InvalidInput("missing-data recovery needs n >= 2")
    vt = _transpose(v)
    order = _row_orders(v)
    depth_tau = max(1, int(math.floor(3.0 / r)))
    depth_far = int(math.ceil(30.0 / r))

    taus = np.empty(nn, dtype=np.int64)
    for x in range(nn):
        taus[x] = _tau_search(v, order, x, depth_tau)

    gamma = _build_paths(v, vt, np.arange(nn, dtype=np.int64), taus, n)

    vtau = v[np.arange(nn), taus]
    near = np.isfinite(v) & (v < vtau[:, None])

    rho = np.full((nn, nn), np.nan)
    xs_near, ys_near = np.nonzero(near)
    for lo in range(0, xs_near.shape[0], row_block * nn):
        hi = min(lo + row_block * nn, xs_near.shape[0])
        xs = xs_near[lo:hi]
        idx = _ratio_pairs(v, gamma, xs, xs, ys_near[lo:hi])
        rho[xs, ys_near[lo:hi]] = idx / float(1 << n)

    # far pairs: one bounded BFS per (x, k), shared across every target y
    k_lo = int(math.ceil((1 << n) / 3.0))
    k_hi = int(math.floor(2.0 * (1 << n) / 3.0))
    far_unresolved = 0
    for x in range(nn):
        far_cols = np.flatnonzero(~near[x])
        if far_cols.size == 0:
            continue
        best = np.full(nn, np.inf)
        steps = {}  # Gamma nodes repeat on coarse grids; lev depends only on the node
        for k in range(k_lo, k_hi + 1):
            g = int(gamma[x, k])
            lev = steps.get(g)
            if lev is None:
                theta0 = v[x, g]
                if not np.isfinite(theta0):
                    continue
                raw = level_bfs(v, order, x, theta0, depth_far)
                lev = np.where(raw > 0, raw.astype(np.float64), np.inf)
                steps[g] = lev
            np.minimum(best, lev * (k / float(1 << n)), out=best)
        vals = best[far_cols]
        hit = np.isfinite(vals)
        far_unresolved += int(far_cols.size - hit.sum())
        rho[x, far_cols[hit]] = vals[hit]

    # anchor-scale transfer to z = 0: q[x] estimates d(x,tau(x)) / d(z,tau(z))
    z = 0
    vzx = v[z]
    vztau = v[z, taus]
    case1 = ~np.isfinite(vzx) | (vzx > vztau)
    with np.errstate(divide="ignore", invalid="ignore"):
        q1 = rho[z] / rho[np.arange(nn), z]
        q2 = rho[z, taus] * rho[taus, np.arange(nn)] / rho[taus, z]
        q = np.where(case1, q1, q2)
    q[z] = 1.0
    q[~np.isfinite(q)] = np.nan

    rmat = rho * q[:, None]
    rt = rmat.T
    a = np.where(np.isnan(rmat), rt, rmat)
    b = np.where(np.isnan(rt), rmat, rt)
    s = 0.5 * (a + b)
    np.fill_diagonal(s, 0.0)
    bad = ~np.isfinite(s)
    unresolved_pairs = int(bad.sum() // 2)
    if bad.any():
        finite_max = float(np.nanmax(np.where(bad, np.nan, s))) if (~bad).any() else 0.0
        s[bad] = finite_max
    norm = float(s.max())
    if norm > 0.0:
        s /= norm
    info = {
        "mode": "missing",
        "anchor": z,
        "tau": taus,
        "n": int(n),
        "r": float(r),
        "precondition_ok": bool(cmp.epsilon < r * r / 100.0),
        "near_fraction": float(near.mean()),
        "anchor_case1": int(case1.sum()),
        "far_unresolved": int(far_unresolved),
        "unresolved_pairs": unresolved_pairs,
        "normalization": norm,
    }
    return RecoveredMetric(distances=s, anchor_info=info)


def comparator_contract_violations(cmp: Comparator, distances, resolution=None) -> int:
    """Count ordered triples (x, y, z) breaking the ordering contract.

    A violation is d(x,y) >= d(x,z) + resolution with both comparator entries
    finite yet value(x,y) <= value(x,z).  Exhaustive over all triples.
    """
    d = np.asarray(distances, dtype=np.float64)
    v = cmp.values
    if d.shape != v.shape:
        raise InvalidInput("distance table shape mismatch")
    if resolution is None:
        resolution = cmp.epsilon
    finite = np.isfinite(v)
    total = 0
    for x in range(v.shape[0]):
        need = (d[x][:, None] >= d[x][None, :] + resolution) & (
            finite[x][:, None] & finite[x][None, :]
        )
        total += int((need & (v[x][:, None] <= v[x][None, :])).sum())
    return total
