"""Sequential center discovery by regularized objective maximization.

The driver alternates three moves until a stopping rule fires: pick the
sample pair maximizing

    g~_k(x, y) = L[x, y] + beta * min_i D_i(x) + beta * min_i D_i(y),

collect the S3 points whose objective sits within a 3*gamma window of the
winner into a cluster, and refresh the per-cluster average-distance tables
D_i that feed the regularizer.  L[x, y] averages d'(x, z) d'(z, y) over the
dedicated sample S2, so the whole loop touches distances only through the
noisy oracle.  Cluster-to-cluster averages of d' then give an
order-faithful comparator on the discovered centers, and the complete-data
recovery chain turns it into distances.

Scale note: the concentration-derived sample sizes exist to make the
high-probability statements true and are astronomically large at any
epsilon worth running.  ``Algo2Schedule.from_theory`` reports them; actual
runs pin desk-scale sizes directly, widen the membership window through
the calibrated ``cluster_gamma`` / ``cluster_gamma1`` overrides (the
window is the only place the override applies; every other use of gamma
keeps the schedule algebra), and rescale the regularizer slope through
``beta_fudge``.  The slope matters at desk scale because the membership
window compares z in the dense S3 against the reference value at the
selected S1 point: the reference undershoots the S3 landscape top by
beta times the apex-to-S1 offset, and that surplus can cancel the
inner-product drop of a far-away z.  At the analytic beta ~ C/epsilon the
cancellation admits whole shells near competing depth apexes (measured,
not hypothetical); at unit slope the offset surplus is far below the
inner-product drop between apexes and the window behaves.  The
calibration protocol lives in scripts/calibrate_algo2.py.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ClusterUnderfull, InvalidInput
from .noise import MissingModel, NoiseModel, NoisyOracle, draw_noisy_block, draw_noisy_pairs
from .recovery import Comparator, RecoveredMetric, recover_all
from .spaces import (
    SampleSet,
    Space,
    ball_volume_lower,
    distances_to_point,
    pairwise_distances,
    sample_points,
    wedge_mass_lower,
)

# stream tags for the disjoint child seeds (noise table, then S1/S2/S3)
_STREAM_SPLIT = 0x414C4732


def _child_seed(master, tag):
    return int(rng._base_key(master, _STREAM_SPLIT + tag))


@dataclass(frozen=True)
class Algo2Schedule:
    """Constants and sample sizes for one center-discovery run.

    sigma, gamma, beta, delta, eta, and r are exact algebra in
    (epsilon, C, L_estimate, kappa) and live here as properties; the sizes
    N1/N2/N3/n/k_max are plain data so callers can pin desk-scale values
    (``from_theory`` fills the analytic ones).  ell is the exponent tying
    N3 to N1; 1 + 2/d balances the two N3 windows in dimension d.

    beta_fudge multiplies the analytic beta (the schedule constants carry
    unknown absolute factors, and the regularizer slope is the one that
    needs recalibrating at desk scale; see the module docstring).  delta,
    eta, and the stopping threshold follow the fudged beta so one slope is
    used consistently.  Default 1.0 keeps the formulas as written.
    """

    epsilon: float
    C: float
    L_estimate: float
    kappa: float
    c2: float
    N1: int
    N2: int
    N3: int
    n: int
    k_max: int
    ell: float = 3.0
    beta_fudge: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidInput("epsilon must lie in (0, 1)")
        if not self.C >= 1.0:
            raise InvalidInput("C must be at least 1")
        if self.L_estimate < 0.0:
            raise InvalidInput("L_estimate must be nonnegative")
        if not 0.0 < self.kappa <= 1.0:
            raise InvalidInput("kappa must lie in (0, 1]")
        if not self.c2 > 0.0:
            raise InvalidInput("c2 must be positive")
        if self.N1 < 2:
            raise InvalidInput("need N1 >= 2 (the argmax runs over pairs)")
        if self.N2 < 1 or self.n < 1:
            raise InvalidInput("N2 and n must be positive")
        if self.N3 < self.n:
            raise InvalidInput("N3 must be at least the cluster size n")
        if self.k_max < 1:
            raise InvalidInput("k_max must be positive")
        if self.ell < 1.0:
            raise InvalidInput("ell must be at least 1")
        if not self.beta_fudge > 0.0:
            raise InvalidInput("beta_fudge must be positive")
        # positivity of the derived constants is a theorem given the field
        # checks above (the beta denominator is epsilon/2 exactly, and
        # r > epsilon/(4 C^4) by algebra), but it is the load-bearing
        # contract, so fail loudly if it ever breaks
        for name in ("sigma", "gamma", "beta", "delta", "eta", "r"):
            if not getattr(self, name) > 0.0:
                raise InvalidInput(f"derived constant {name} is not positive")

    @property
    def sigma(self):
        return self.epsilon / (2.0 * (28.0 * self.C**2 + 36.0 * self.C**4))

    @property
    def gamma(self):
        return self.kappa * self.sigma**2 / (256.0 * self.C**2)

    @property
    def beta(self):
        den = self.epsilon - (28.0 * self.C**2 + 36.0 * self.C**4) * self.sigma
        return self.beta_fudge * 2.0 * self.C**4 * (2.0 * self.L_estimate + self.C) / den

    @property
    def delta(self):
        return self.gamma / (self.C * (self.L_estimate + self.C + self.beta))

    @property
    def eta(self):
        return self.gamma / (4.0 * (self.L_estimate + self.C) * self.C + 2.0 * self.C * self.beta)

    @property
    def r(self):
        """Center separation radius; always inside r_bounds by algebra."""
        return self.epsilon / (2.0 * self.C**4) - 14.0 * self.sigma / self.C**2

    @property
    def r_bounds(self):
        return self.epsilon / (4.0 * self.C**4), self.epsilon / (2.0 * self.C**4)

    def epsilon_tilde(self, L_tilde):
        """Stopping threshold for max_x min_i D_i(x), given the estimate L~."""
        return L_tilde + self.epsilon / self.C - 18.0 * self.C * self.sigma - self.gamma / (4.0 * self.beta)

    @classmethod
    def from_theory(cls, space, epsilon, C=1.0, L_estimate=0.0, *, kappa=None,
                    c2=None, c3=1.0, theta1=0.02, theta2=0.02, theta3=0.02,
                    k_cap=None, fudge=(1.0, 1.0, 1.0, 1.0)):
        """Sizes from the concentration requirements (report-scale only).

        kappa defaults to the worst-case wedge mass of the space and c2 to
        the observed floor of VR(r)/r^d over dyadic radii.  c3 is the
        sub-Gaussian proxy of the noise (0 is legal: the Hoeffding terms
        vanish and the floors n = 1, N2 from the bounded part remain).
        fudge carries the four absolute constants of the N2/n displays.
        """
        d = space.intrinsic_dim
        if kappa is None:
            kappa = wedge_mass_lower(space, 1.0)
        if c2 is None:
            c2 = min(
                ball_volume_lower(space, 2.0**-i) / (2.0**-i) ** d for i in range(13)
            )
        a1, a2, a3, a4 = fudge
        probe = cls(epsilon, C, L_estimate, kappa, c2,
                    N1=2, N2=1, N3=1, n=1, k_max=1, ell=1.0 + 2.0 / d)
        gamma, beta = probe.gamma, probe.beta
        # S1 must be an eta-net: coupon-collector over a maximal eta/3 packing
        vr_eta = ball_volume_lower(space, min(1.0, probe.eta / 3.0))
        n1 = math.ceil(math.log(theta2 * vr_eta) / math.log1p(-vr_eta))
        lc = L_estimate + C
        n2 = math.ceil(
            a1 * (c3**4 + (c3**2 + C**2) * lc**2) / gamma**2
            * math.log(a2 * n1**2 / theta1)
        )
        k_max = math.ceil(1.0 / ball_volume_lower(space, min(1.0, probe.r / 2.0)))
        if k_cap is not None:
            k_max = min(k_max, int(k_cap))
        n = max(1, math.ceil(
            a3 * c3**2 * beta**2 / gamma**2 * math.log(a4 * n1 * k_max / theta1)
        ))
        # N3: the out-fraction bound (N1^ell term) supersedes the two
        # VR(delta) occupancy bounds for small epsilon, but take the max
        vr_delta = ball_volume_lower(space, min(1.0, probe.delta))
        occ = 1.0 - theta1 / n1**2
        tail = math.log(k_max / theta3)
        n3 = math.ceil(max(
            16.0 / (occ * vr_delta) * tail,
            10.0 * n1**probe.ell / theta1 * tail,
            4.0 * n / (occ * vr_delta),
        ))
        return cls(epsilon, C, L_estimate, kappa, c2,
                   N1=n1, N2=n2, N3=n3, n=n, k_max=k_max, ell=1.0 + 2.0 / d)


@dataclass(frozen=True)
class Algo2Config:
    """Inputs for ``run_algorithm2``.

    cluster_gamma / cluster_gamma1 replace the schedule gamma inside the
    3*gamma membership window only (first cluster uses cluster_gamma1: its
    objective peak is smooth, later peaks are beta-sloped tents, so the two
    need different calibrated scales).  None means the paper algebra.
    """

    space: Space
    noise: NoiseModel
    schedule: Algo2Schedule
    master_seed: int
    cluster_gamma: float = None
    cluster_gamma1: float = None
    pilot_size: int = 1000

    def __post_init__(self):
        if self.noise.monotone_form is None:
            raise InvalidInput("the objective needs a monotone mean f = F(d)")
        for g in (self.cluster_gamma, self.cluster_gamma1):
            if g is not None and not g > 0.0:
                raise InvalidInput("membership gamma overrides must be positive")
        if self.pilot_size < 1:
            raise InvalidInput("pilot_size must be positive")


@dataclass(frozen=True)
class CenterSet:
    """Result of a center-discovery run.

    centers/companions are global sample indices into ``sample`` (all in
    S1); clusters hold n global indices each (all in S3).  d_tables[i] is
    D_i over S1 followed by S3 (length N1 + N3).  cross_distances is the
    A matrix of cluster-cluster averages with a zero diagonal.
    """

    sample: SampleSet
    centers: np.ndarray
    companions: np.ndarray
    clusters: tuple
    d_tables: np.ndarray
    cross_distances: np.ndarray
    terminated: bool
    diagnostics: tuple

    def __post_init__(self):
        k = len(self.centers)
        if not (len(self.companions) == len(self.clusters) == k >= 1):
            raise InvalidInput("centers, companions and clusters must align")
        sizes = {len(c) for c in self.clusters}
        if len(sizes) != 1:
            raise InvalidInput("clusters must share one size n")
        if self.d_tables.shape[0] != k or self.cross_distances.shape != (k, k):
            raise InvalidInput("table shapes must match the center count")

    def __len__(self):
        return len(self.centers)


class Algo2State:
    """Mutable run state threaded through the center-discovery ops.

    Global sample indices: S1 is [0, N1), S2 is [N1, N1+N2), S3 is
    [N1+N2, N1+N2+N3).  S1 positions coincide with global indices, so
    centers and companions are stored globally; cluster members are global
    too.  ip_s1 holds L over S1 pairs (exactly symmetric); _d_s1s2 and
    _d_s3s2 keep the realized d' blocks against S2 so per-center objective
    rows over S3 are a single matvec.
    """

    def __init__(self, config, sample, oracle, ip_s1, d_s1s2, d_s3s2, pilot):
        self.config = config
        self.schedule = config.schedule
        self.sample = sample
        self.oracle = oracle
        self.ip_s1 = ip_s1
        self._d_s1s2 = d_s1s2
        self._d_s3s2 = d_s3s2
        self.pilot = pilot
        sched = config.schedule
        self.s1_global = np.arange(sched.N1, dtype=np.int64)
        self.s3_global = np.arange(sched.N3, dtype=np.int64) + sched.N1 + sched.N2
        self.centers = []
        self.companions = []
        self.clusters = []
        self.d_s1 = []
        self.d_s3 = []
        self.diagnostics = []
        self.last_margin = None

    @property
    def k(self):
        """Number of completed clusters."""
        return len(self.clusters)

    def membership_gamma(self, k):
        cfg = self.config
        override = cfg.cluster_gamma1 if k == 1 else cfg.cluster_gamma
        return self.schedule.gamma if override is None else override

    def min_d_s1(self):
        return np.minimum.reduce(self.d_s1)

    def min_d_s3(self):
        return np.minimum.reduce(self.d_s3)

    def push_center(self, x, y):
        if len(self.centers) != len(self.clusters):
            raise InvalidInput("previous center has no cluster yet")
        n1 = self.schedule.N1
        if not (0 <= x < n1 and 0 <= y < n1 and x != y):
            raise InvalidInput("center pair must be two distinct S1 points")
        self.centers.append(int(x))
        self.companions.append(int(y))


def prepare_state(config):
    """Draw S1/S2/S3, realize the d' blocks, and build the L table."""
    sched = config.schedule
    space = config.space
    parts = [
        sample_points(space, size, 1, _child_seed(config.master_seed, tag)).coords
        for tag, size in ((1, sched.N1), (2, sched.N2), (3, sched.N3))
    ]
    coords = np.concatenate(parts, axis=0)
    coords.setflags(write=False)
    sample = SampleSet(space=space, coords=coords, net_size=sched.N1,
                       seed=config.master_seed)
    oracle = NoisyOracle(space=space, sample=sample, noise=config.noise,
                         missing=MissingModel(), noise_seed=_child_seed(config.master_seed, 0))

    # rough intercept estimate: noisy draws from the first sample point,
    # averaged for the upper value and corrected down to the smallest
    # observed draw (whose distance is ~0 in a dense sample, so d' ~ F(0))
    m = min(config.pilot_size, len(sample) - 1)
    draws = draw_noisy_pairs(oracle, np.zeros(m, dtype=np.int64),
                             np.arange(1, m + 1, dtype=np.int64))
    pilot = {
        "pilot_mean": float(draws.mean()),
        "pilot_min": float(draws.min()),
        "pilot_estimate": max(0.0, float(draws.min())),
    }

    idx1 = np.arange(sched.N1, dtype=np.int64)
    idx2 = np.arange(sched.N2, dtype=np.int64) + sched.N1
    idx3 = np.arange(sched.N3, dtype=np.int64) + sched.N1 + sched.N2
    # both blocks are filled in row chunks: the pairwise draw materializes
    # index/truth temporaries of the chunk size, and a full S1 x S2 grid
    # at criterion scale would transiently cost several GB
    step = max(1, 2**24 // sched.N2)
    d12 = np.empty((sched.N1, sched.N2))
    for s in range(0, sched.N1, step):
        d12[s : s + step] = draw_noisy_block(oracle, idx1[s : s + step], idx2)
    ip = d12 @ d12.T
    ip += ip.T.copy()  # force exact symmetry; gemm blocks need not commute
    ip *= 0.5 / sched.N2
    # float32 keeps the big block at criterion scale inside memory; the
    # objective sums it in float64 chunks, so the only cost is the input
    # quantization (~1e-8 absolute, far below any window in use)
    d32 = np.empty((sched.N3, sched.N2), dtype=np.float32)
    for s in range(0, sched.N3, step):
        d32[s : s + step] = draw_noisy_block(oracle, idx3[s : s + step], idx2)
    return Algo2State(config, sample, oracle, ip, d12, d32, pilot)


def _ip_s3_column(state, yhat):
    """(1/N2) sum_z d'(x, z) d'(z, yhat) for every x in S3, float64."""
    w = state._d_s1s2[yhat] / state.schedule.N2
    block = state._d_s3s2
    out = np.empty(block.shape[0])
    step = max(1, 2**22 // block.shape[1])
    for s in range(0, block.shape[0], step):
        out[s : s + step] = block[s : s + step].astype(np.float64) @ w
    return out


def objective_estimate(state, x, y):
    """g~ for S1 positions x and y (min terms are 0 before any cluster)."""
    base = float(state.ip_s1[x, y])
    if state.k == 0:
        return base
    mins = state.min_d_s1()
    return base + state.schedule.beta * (float(mins[x]) + float(mins[y]))


def select_center(state):
    """Argmax pair of g~ over distinct S1 points, smallest indices first."""
    if len(state.ip_s1) < 2:
        raise InvalidInput("need at least two S1 points to pick a pair")
    if state.k == 0:
        scores = state.ip_s1.copy()
    else:
        p = state.schedule.beta * state.min_d_s1()
        scores = state.ip_s1 + p[:, None]
        scores += p[None, :]
    np.fill_diagonal(scores, -np.inf)
    flat = int(np.argmax(scores))  # row-major first hit = smallest (x, y)
    x, y = divmod(flat, scores.shape[1])
    return int(x), int(y)


def _mean_curve(noise, d):
    # closed-form F(d) for the monotone mean families; F(0) = L is the
    # intercept even though realized d'(i, i) is pinned to 0
    if noise.mean_kind == "identity":
        return np.asarray(d, dtype=np.float64).copy()
    return noise.intercept + noise.slope * np.asarray(d, dtype=np.float64)


def build_cluster_algo2(state, k):
    """Build cluster k (1-based) for the already selected k-th center.

    Membership is the 3*gamma objective-window test over S3, truncated to
    the first n members in index order.  Ground-truth diagnostics count
    members inside/outside B(x^_k, 5*sigma), record how far the untruncated
    candidate set reaches, and check the cluster-average surrogate
    |mean_f(x, C_k) - F(d(x, x^_k))| < 8*C*sigma over S1.
    """
    if k != len(state.centers) or k != len(state.clusters) + 1:
        raise InvalidInput(f"clusters are built in order; next is {len(state.clusters) + 1}")
    sched = state.schedule
    xhat, yhat = state.centers[k - 1], state.companions[k - 1]

    ip3 = _ip_s3_column(state, yhat)
    ref = float(state.ip_s1[xhat, yhat])
    if k > 1:
        m1 = state.min_d_s1()
        g3 = ip3 + sched.beta * (state.min_d_s3() + m1[yhat])
        ref += sched.beta * (float(m1[xhat]) + float(m1[yhat]))
    else:
        g3 = ip3
    window = 3.0 * state.membership_gamma(k)
    keep = np.flatnonzero(np.abs(g3 - ref) < window)
    if keep.size < sched.n:
        raise ClusterUnderfull(k, int(keep.size), sched.n)
    members = state.s3_global[keep[: sched.n]]

    # fresh noisy distances from every S1 and S3 point to the members
    sweep = np.concatenate([state.s1_global, state.s3_global])
    table = draw_noisy_block(state.oracle, sweep, members).mean(axis=1)
    state.clusters.append(members)
    state.d_s1.append(table[: sched.N1])
    state.d_s3.append(table[sched.N1 :])

    coords = state.sample.coords
    truth_members = distances_to_point(state.config.space, coords[members], coords[xhat])
    n_in = int(np.count_nonzero(truth_members <= 5.0 * sched.sigma))
    # reach of the whole candidate set, pre-truncation: the exclusion lemma
    # says it stays inside B(x^_k, 5*sigma) when the window is small enough
    reach = distances_to_point(state.config.space, coords[state.s3_global[keep]], coords[xhat])
    # surrogate for the cluster-average assumption, on closed-form means
    truth_s1 = distances_to_point(state.config.space, coords[: sched.N1], coords[xhat])
    f_members = _mean_curve(
        state.oracle.noise,
        pairwise_distances(state.config.space, coords[: sched.N1], coords[members]),
    ).mean(axis=1)
    f_center = _mean_curve(state.oracle.noise, truth_s1)
    margin = float(np.abs(f_members - f_center).max())
    state.diagnostics.append({
        "k": k,
        "center": int(xhat),
        "companion": int(yhat),
        "objective": ref,
        "window": window,
        "candidates": int(keep.size),
        "candidate_reach": float(reach.max()),
        "members_in": n_in,
        "members_out": sched.n - n_in,
        "assumption_margin": margin,
        "assumption_ok": bool(margin < 8.0 * sched.C * sched.sigma),
    })
    return members


def termination_test(state):
    """True iff every S1 point has min_i D_i within epsilon~ of the floor."""
    if not state.clusters:
        raise InvalidInput("termination needs at least one cluster")
    l_tilde = float(state.d_s1[0].min())
    eps_t = state.schedule.epsilon_tilde(l_tilde)
    worst = float(state.min_d_s1().max())
    state.last_margin = eps_t - worst
    return worst <= eps_t


def cluster_cluster_distance(state, i, j):
    """A(x^_i, x^_j): the n^2 average of d' across clusters i and j (1-based)."""
    if i == j:
        raise InvalidInput("cluster-cluster distance needs two distinct clusters")
    k = len(state.clusters)
    if not (1 <= i <= k and 1 <= j <= k):
        raise InvalidInput(f"cluster indices must lie in 1..{k}")
    block = draw_noisy_block(state.oracle, state.clusters[i - 1], state.clusters[j - 1])
    return float(block.mean())


def run_algorithm2(config):
    """Full loop: select/build until termination or k_max, then recover.

    Returns (CenterSet, RecoveredMetric).  The comparator entries are the
    cluster-cluster averages (diagonal pinned to 0); its resolution is the
    36 C^2 sigma gap below which A may misorder distances.
    """
    state = prepare_state(config)
    sched = config.schedule
    terminated = False
    while True:
        x, y = select_center(state)
        state.push_center(x, y)
        k = len(state.centers)
        build_cluster_algo2(state, k)
        terminated = termination_test(state)
        state.diagnostics[-1]["termination_margin"] = state.last_margin
        if terminated or k >= sched.k_max:
            break

    k = len(state.clusters)
    cross = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            cross[i, j] = cross[j, i] = cluster_cluster_distance(state, i + 1, j + 1)
    if k == 1:
        metric = RecoveredMetric(distances=np.zeros((1, 1)),
                                 anchor_info={"mode": "single-center"})
    else:
        resolution = min(36.0 * sched.C**2 * sched.sigma, 0.5)
        metric = recover_all(Comparator(values=cross, epsilon=resolution))
    centers = CenterSet(
        sample=state.sample,
        centers=np.asarray(state.centers, dtype=np.int64),
        companions=np.asarray(state.companions, dtype=np.int64),
        clusters=tuple(state.clusters),
        d_tables=np.stack([np.concatenate([a, b]) for a, b in zip(state.d_s1, state.d_s3)]),
        cross_distances=cross,
        terminated=terminated,
        diagnostics=tuple(state.diagnostics),
    )
    return centers, metric
