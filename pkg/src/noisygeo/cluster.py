"""Cluster construction from pairwise inner-product statistics.

Given noisy distances d'(x, v) against a net Y, the empirical inner product

    L[x, y] = (1/|Y|) sum_{v in Y} d'(x, v) d'(y, v)

concentrates around its mean, and the row-difference statistic
sup_z |L[x,z] - L[y,z]| separates pairs at distance O(eps) from pairs at
distance 4*eps and beyond.  A cluster C(x) collects the sample points that
pass that test against x; its lowest-index member outside the net serves as
the representative x' whose fresh noisy distances feed the proxy table

    A[x, y] = mean_{w in C(y)} d'(x', w).

All membership predicates are evaluated exactly: table entries (float32 or
float64) are cast to float64, where differences of float32 values incur no
rounding, so the numba sweep and the plain numpy path agree bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ClusterDegenerate, InvalidInput
from .noise import NoisyOracle, draw_mask_block, draw_noisy_block


@dataclass(frozen=True)
class ClusterParams:
    """Thresholds for the membership test.

    sigma is the dispersion scale the thresholds are budgeted for (an input
    to the algorithm, not a measurement), kappa the density lower-bound
    constant of the sampling measure.  c1 gates the mask-overlap condition in
    the missing-data variant and must leave 1.5*c1 <= 1 so that fully present
    masks always pass.  c2 scales the missing-data threshold; the default
    8/15 makes (3/8)*kappa*sigma^2*c2 coincide with the complete-data
    threshold kappa*sigma^2/5.  threshold_scale is a single calibration knob
    applied to both thresholds.
    """

    epsilon: float
    delta: float
    sigma: float
    kappa: float
    c1: float = 0.5
    c2: float = 8.0 / 15.0
    threshold_scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.epsilon):
            raise InvalidInput("epsilon must be positive")
        if not (0.0 < self.delta < self.epsilon):
            raise InvalidInput("delta must lie in (0, epsilon)")
        if not (self.sigma > 0.0):
            raise InvalidInput("sigma must be positive")
        if not (self.kappa > 0.0):
            raise InvalidInput("kappa must be positive")
        if not (0.0 < self.c1 <= 2.0 / 3.0):
            raise InvalidInput("c1 must lie in (0, 2/3]")
        if not (self.c2 > 0.0):
            raise InvalidInput("c2 must be positive")
        if not (self.threshold_scale > 0.0):
            raise InvalidInput("threshold_scale must be positive")

    @property
    def threshold_complete(self) -> float:
        return self.threshold_scale * self.kappa * self.sigma ** 2 / 5.0

    @property
    def threshold_missing(self) -> float:
        return self.threshold_scale * 0.375 * self.kappa * self.sigma ** 2 * self.c2


@dataclass(frozen=True)
class InnerProductTable:
    """Symmetric table of empirical inner products over a net of size net_size."""

    values: np.ndarray
    net_size: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInput("values must be a square matrix")
        if v.dtype not in (np.float32, np.float64):
            raise InvalidInput("values must be float32 or float64")
        if not (1 <= self.net_size <= v.shape[0]):
            raise InvalidInput("net_size out of range")

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Cluster:
    center: int
    members: np.ndarray
    representative: int

    def __post_init__(self):
        if self.members.size == 0:
            raise ClusterDegenerate(self.center)
        if self.representative != int(self.members[0]):
            raise InvalidInput("representative must be the first member")

    def __len__(self):
        return int(self.members.size)


@dataclass(frozen=True)
class ProxyTable:
    """A[i, j] = masked mean of d'(rep_i, w) over w in members of cluster j.

    Entries are +inf where the mask count over the cluster did not exceed
    min_count.  Not symmetric in general.
    """

    values: np.ndarray
    representatives: np.ndarray
    min_count: float = 0.0

    def __len__(self):
        return self.values.shape[0]


def _symmetrize_inplace(m, block=2048):
    n = m.shape[0]
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for j0 in range(i0, n, block):
            j1 = min(j0 + block, n)
            avg = m[i0:i1, j0:j1] + m[j0:j1, i0:i1].T
            avg *= 0.5
            m[i0:i1, j0:j1] = avg
            m[j0:j1, i0:i1] = avg.T


def build_inner_products(oracle: NoisyOracle, net_size=None, dtype=np.float64,
                         row_block=4096) -> InnerProductTable:
    """Draw d'(x, v) for all x against the net and form L = G G^T / |Y|.

    The product is symmetrized exactly as (L + L^T)/2 so that downstream
    row-difference statistics are antisymmetric in (x, y).  float32 keeps the
    table at 4 bytes/entry for large runs; the membership sweep is exact
    either way.
    """
    n = len(oracle.sample)
    n0 = oracle.sample.net_size if net_size is None else int(net_size)
    if not (1 <= n0 <= n):
        raise InvalidInput("net_size out of range")
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise InvalidInput("dtype must be float32 or float64")
    cols = np.arange(n0)
    g = np.empty((n, n0), dtype)
    for r0 in range(0, n, row_block):
        r1 = min(r0 + row_block, n)
        g[r0:r1] = draw_noisy_block(oracle, np.arange(r0, r1), cols)
    m = g @ g.T
    _symmetrize_inplace(m)
    m /= dtype.type(n0)
    return InnerProductTable(values=m, net_size=n0)


def test_pair_separation(table: InnerProductTable, x: int, y: int) -> float:
    """sup over z not in {x, y} of |L[x,z] - L[y,z]|, exact in float64."""
    v = table.values
    n = v.shape[0]
    if n < 3:
        raise InvalidInput("separation statistic needs at least 3 points")
    x, y = int(x), int(y)
    if x == y:
        raise InvalidInput("x and y must differ")
    if not (0 <= x < n and 0 <= y < n):
        raise InvalidInput("index out of range")
    d = np.abs(v[x].astype(np.float64) - v[y].astype(np.float64))
    d[x] = -np.inf
    d[y] = -np.inf
    return float(d.max())


def _exclusion_corrections(values, x, rows, tau):
    """How many of the exceed counts for pairs (x, rows) came from z in {x, y}."""
    vxx = np.float64(values[x, x])
    colx = values[rows, x].astype(np.float64)
    coly = values[rows, rows].astype(np.float64)
    vx_at_rows = values[x, rows].astype(np.float64)
    corr = (np.abs(colx - vxx) > tau).astype(np.int32)
    corr += (np.abs(coly - vx_at_rows) > tau).astype(np.int32)
    # y == x contributes zero to both terms, so no special case is needed.
    return corr


def cluster_members_sweep(table: InnerProductTable, params: ClusterParams,
                          centers, candidates=None, probe_cols=256,
                          probe_chunk=256, block=64, zchunk=4096):
    """Membership index arrays for many centers against the complete-data test.

    candidates, when given, is a list of index arrays (one per center)
    restricting which rows are examined; rows outside it are treated as
    non-members without proof, so callers own the completeness of their
    candidate sets.  When omitted, every row is screened: a strided-column
    probe count certifies most non-members cheaply (a count above 2 cannot be
    explained by the two excluded columns), and the survivors get the exact
    full-width count.
    """
    values = table.values
    n = values.shape[0]
    if n < 3:
        raise InvalidInput("membership sweep needs at least 3 points")
    centers = np.asarray(centers, dtype=np.int64)
    if centers.ndim != 1 or centers.size == 0:
        raise InvalidInput("centers must be a nonempty 1-d index array")
    if centers.min() < 0 or centers.max() >= n:
        raise InvalidInput("center index out of range")
    tau = np.float64(params.threshold_complete)

    if candidates is None:
        candidates = []
        use_probe = n > 4 * probe_cols
        if use_probe:
            stride = n // probe_cols
            pcols = np.arange(0, stride * probe_cols, stride, dtype=np.int64)
            mp = np.ascontiguousarray(values[:, pcols])
        all_rows = np.arange(n, dtype=np.int64)
        for c0 in range(0, centers.size, probe_chunk):
            sub = centers[c0:c0 + probe_chunk]
            if use_probe:
                pc = _kernels.probe_counts(mp, sub, tau)
                for a in range(sub.size):
                    candidates.append(all_rows[pc[a] <= 2])
            else:
                candidates.extend([all_rows] * sub.size)
    else:
        if len(candidates) != centers.size:
            raise InvalidInput("one candidate array per center required")
        candidates = [np.asarray(c, dtype=np.int64) for c in candidates]

    lengths = np.array([c.size for c in candidates], dtype=np.int64)
    indptr = np.zeros(centers.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    rows = (np.concatenate(candidates) if indptr[-1] > 0
            else np.empty(0, dtype=np.int64))
    counts = _kernels.pair_exceed_counts(
        values, centers, indptr, rows, tau,
        int(min(block, centers.size)), int(zchunk))

    members = []
    for a in range(centers.size):
        x = int(centers[a])
        r = rows[indptr[a]:indptr[a + 1]]
        c = counts[indptr[a]:indptr[a + 1]]
        if r.size:
            c = c - _exclusion_corrections(values, x, r, tau)
        keep = r[c == 0]
        if not np.any(keep == x):
            keep = np.append(keep, x)
        keep.sort()
        members.append(keep)
    return members


def _truncate(members, net_size, center):
    kept = members[members >= net_size]
    if kept.size == 0:
        raise ClusterDegenerate(center)
    return Cluster(center=center, members=kept, representative=int(kept[0]))


def build_cluster(oracle: NoisyOracle, params: ClusterParams, x: int,
                  table: InnerProductTable = None) -> Cluster:
    """Cluster of x, truncated to indices outside the net.

    Points of the net itself are dropped so that the representative's fresh
    distance draws are independent of everything the table has already
    consumed.
    """
    if table is None:
        table = build_inner_products(oracle)
    members = cluster_members_sweep(table, params, np.array([x]))[0]
    return _truncate(members, table.net_size, int(x))


def build_all_clusters(oracle: NoisyOracle, params: ClusterParams,
                       centers=None, table: InnerProductTable = None,
                       candidates=None, **sweep_kwargs):
    if table is None:
        table = build_inner_products(oracle)
    if centers is None:
        centers = np.arange(table.net_size)
    centers = np.asarray(centers, dtype=np.int64)
    member_lists = cluster_members_sweep(table, params, centers,
                                         candidates=candidates, **sweep_kwargs)
    return [_truncate(m, table.net_size, int(c))
            for m, c in zip(member_lists, centers)]


# -- missing-data variant ---------------------------------------------------

@dataclass(frozen=True)
class MissingArrays:
    """Noisy draws and masks of every point against the net, plus the product."""

    g: np.ndarray
    w: np.ndarray
    gw: np.ndarray
    net_size: int


def build_missing_arrays(oracle: NoisyOracle, net_size=None, dtype=np.float64,
                         row_block=4096) -> MissingArrays:
    n = len(oracle.sample)
    n0 = oracle.sample.net_size if net_size is None else int(net_size)
    if not (1 <= n0 <= n):
        raise InvalidInput("net_size out of range")
    dtype = np.dtype(dtype)
    cols = np.arange(n0)
    g = np.empty((n, n0), dtype)
    w = np.empty((n, n0), dtype)
    for r0 in range(0, n, row_block):
        r1 = min(r0 + row_block, n)
        idx = np.arange(r0, r1)
        g[r0:r1] = draw_noisy_block(oracle, idx, cols)
        w[r0:r1] = draw_mask_block(oracle, idx, cols)
    return MissingArrays(g=g, w=w, gw=g * w, net_size=n0)


def _missing_membership(arrays: MissingArrays, params: ClusterParams, x: int,
                        out=None):
    """Membership mask for one center under the masked separation test.

    Per candidate z the statistic averages (d'(x,v) - d'(y,v)) d'(z,v) over
    the net points v observed by all three masks; z is skipped when fewer
    than c1*|Y| such v remain.  Condition (a) additionally requires the
    (x, y) mask overlap to reach 1.5*c1.  With all-present masks the
    statistic reduces to the complete-data row difference.
    """
    g, w, gw = arrays.g, arrays.w, arrays.gw
    n, n0 = g.shape
    wx = w[x]
    cover = (w @ wx) / n0
    cond_a = cover >= 1.5 * params.c1
    u = w * (wx * g[x])[None, :]
    u -= gw * wx[None, :]
    numer = np.matmul(u, gw.T, out=None if out is None else out[0])
    denom = np.matmul(w * wx[None, :], w.T, out=None if out is None else out[1])
    valid = denom >= params.c1 * n0
    np.abs(numer, out=numer)
    stat = np.divide(numer, denom, out=numer, where=denom > 0)
    stat[~valid] = 0.0
    stat[:, x] = 0.0
    np.fill_diagonal(stat, 0.0)
    sup = stat.max(axis=1)
    cond_b = sup <= params.threshold_missing
    member = cond_a & cond_b
    member[x] = True
    diag = {
        "center": int(x),
        "overlap_ok": cond_a,
        "separation_ok": cond_b,
        "separation_stat": sup,
        "mask_overlap": cover,
        "valid_z": valid.sum(axis=1),
    }
    return member, diag


def build_cluster_missing(oracle: NoisyOracle, params: ClusterParams, x: int,
                          arrays: MissingArrays = None,
                          with_diagnostics=False):
    if arrays is None:
        arrays = build_missing_arrays(oracle)
    member, diag = _missing_membership(arrays, params, int(x))
    cluster = _truncate(np.flatnonzero(member), arrays.net_size, int(x))
    return (cluster, diag) if with_diagnostics else cluster


def build_all_clusters_missing(oracle: NoisyOracle, params: ClusterParams,
                               centers=None, arrays: MissingArrays = None,
                               dtype=np.float64):
    if arrays is None:
        arrays = build_missing_arrays(oracle, dtype=dtype)
    if centers is None:
        centers = np.arange(arrays.net_size)
    n = arrays.g.shape[0]
    scratch = (np.empty((n, n), arrays.g.dtype), np.empty((n, n), arrays.g.dtype))
    clusters, diags = [], []
    for x in np.asarray(centers, dtype=np.int64):
        member, diag = _missing_membership(arrays, params, int(x), out=scratch)
        clusters.append(_truncate(np.flatnonzero(member), arrays.net_size, int(x)))
        diags.append({
            "center": diag["center"],
            "overlap_pass": int(diag["overlap_ok"].sum()),
            "separation_pass": int(diag["separation_ok"].sum()),
            "members": int(member.sum()),
            "valid_z_min": int(diag["valid_z"].min()),
        })
    return clusters, diags


def pair_interference(oracle: NoisyOracle, x: int, y: int, v: int, w: int,
                      net_size=None) -> float:
    """Fourth-order masked correlation |(1/|Y|) sum_z (d'xz-d'yz)(d'vz-d'wz) m...|.

    Diagnostic only; the membership test uses the per-z averaged statistic,
    which is the form the thresholds are calibrated for.
    """
    idx = (int(x), int(y), int(v), int(w))
    if len(set(idx)) != 4:
        raise InvalidInput("x, y, v, w must be four distinct indices")
    n0 = oracle.sample.net_size if net_size is None else int(net_size)
    cols = np.arange(n0)
    rows = np.asarray(idx)
    d = draw_noisy_block(oracle, rows, cols)
    m = draw_mask_block(oracle, rows, cols).astype(np.float64)
    prod = (d[0] - d[1]) * (d[2] - d[3]) * m.prod(axis=0)
    return float(abs(prod.sum()) / n0)


def build_proxy_table(oracle: NoisyOracle, clusters, min_count=0.0,
                      dtype=np.float64, row_block=512) -> ProxyTable:
    """Masked cluster means of fresh representative draws, via indicator gemm.

    A[i, j] averages d'(rep_i, w) over w in members of clusters[j], using
    only entries the mask kept; a column count at or below min_count yields
    +inf.  The complete-data case divides by exact member counts, which the
    all-present masked path reproduces bit for bit.
    """
    dtype = np.dtype(dtype)
    n = len(oracle.sample)
    k = len(clusters)
    if k == 0:
        raise InvalidInput("need at least one cluster")
    reps = np.array([c.representative for c in clusters], dtype=np.int64)
    ind = np.zeros((n, k), dtype)
    for j, c in enumerate(clusters):
        ind[c.members, j] = 1.0
    cols = np.arange(n)
    masked = oracle.missing.kind != "none"
    sums = np.empty((k, k), dtype)
    counts = np.empty((k, k), dtype) if masked else None
    for r0 in range(0, k, row_block):
        r1 = min(r0 + row_block, k)
        r = draw_noisy_block(oracle, reps[r0:r1], cols).astype(dtype, copy=False)
        if masked:
            wm = draw_mask_block(oracle, reps[r0:r1], cols).astype(dtype, copy=False)
            np.matmul(r * wm, ind, out=sums[r0:r1])
            np.matmul(wm, ind, out=counts[r0:r1])
        else:
            np.matmul(r, ind, out=sums[r0:r1])
    if masked:
        ok = counts > min_count
        a = np.divide(sums, counts, out=sums, where=ok)
        a[~ok] = np.inf
    else:
        sizes = np.array([len(c) for c in clusters], dtype=dtype)
        a = np.divide(sums, sizes[None, :], out=sums)
    return ProxyTable(values=a, representatives=reps, min_count=float(min_count))
