"""Experiment orchestration: config files, end-to-end runs, evaluation.

A run is one INI-style config file: typed sections for the space, the
noise and missingness models, the run proper, the center-discovery sizes,
and output paths.  ``run_experiment`` samples, builds the oracle, runs the
selected algorithm, scores the recovered matrix against exact geodesic
distances, counts contract breaches, and writes the report plus artifacts
(JSON report, CSV matrix, JSONL diagnostics).  Module errors still produce
a structured failure report before propagating; nothing fails silently.

Evaluation normalizes both matrices to max entry 1 before differencing
(the recovered side is already normalized, so this is a guard, not a
transformation).  Reports carry the paper-scale sample requirement next to
the configured size and an ``under_sampled`` tag when the run is below it,
which at any desk-scale epsilon it is.
"""

import configparser
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .algo2 import Algo2Config, Algo2Schedule, run_algorithm2
from .cluster import (
    ClusterParams,
    build_all_clusters,
    build_all_clusters_missing,
    build_inner_products,
    build_missing_arrays,
    build_proxy_table,
)
from .errors import ConfigError, InvalidInput
from .noise import (
    MissingModel,
    NoiseModel,
    NoisyOracle,
    draw_noisy_pairs,
    mean_pairs,
)
from .recovery import (
    Comparator,
    comparator_contract_violations,
    recover_all,
    recover_all_missing,
)
from .spaces import (
    Space,
    distances_to_point,
    pairwise_distances,
    sample_points,
    wedge_mass_lower,
)

ALGORITHMS = ("Algo1Complete", "Algo1Missing", "Algo2")

# calibrated constant of the inner-product Hoeffding bound; the pinned copy
# in tests/pins.json must match (scripts/calibrate_thresholds.py)
HOEFFDING_C = 1.33


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; a config file maps onto this 1:1.

    delta/sigma/kappa default to the conventions the cluster module is
    calibrated for: delta = epsilon/4, sigma = the expectation gap at
    distance gap epsilon (epsilon over the mean's comparison constant),
    kappa = the space's worst-case wedge mass.  cutoff_r is the recovery
    cutoff for missing runs and defaults to the missingness radius r0.
    violation_rows = 0 means exhaustive breach counting; a positive value
    counts over that many evenly spaced rows instead (the counters then
    cover exactly those rows, and the diagnostics lines say which).
    Algo2 runs size themselves from the schedule, so n_points/net_size may
    be omitted there; otherwise they are required.
    """

    space: Space
    noise: NoiseModel
    missing: MissingModel
    algorithm: str
    epsilon: float
    n_points: int = None
    net_size: int = None
    master_seed: int = 0
    delta: float = None
    sigma: float = None
    kappa: float = None
    threshold_scale: float = 1.0
    proxy_min_count: float = 0.0
    cutoff_r: float = None
    violation_tolerance: int = 0
    violation_rows: int = 0
    algo2: Algo2Schedule = None
    cluster_gamma: float = None
    cluster_gamma1: float = None
    report_path: str = None
    matrix_path: str = None
    diagnostics_path: str = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError("epsilon must lie in (0, 1/2)")
        if self.algorithm == "Algo2":
            if self.algo2 is None:
                raise ConfigError("Algo2 needs an [algo2] schedule section")
            s = self.algo2
            if self.n_points is None:
                object.__setattr__(self, "n_points", s.N1 + s.N2 + s.N3)
            if self.net_size is None:
                object.__setattr__(self, "net_size", 1)
        elif self.n_points is None or self.net_size is None:
            raise ConfigError("n_points and net_size are required")
        if self.n_points < 1 or self.net_size < 1:
            raise ConfigError("sizes must be positive")
        if self.net_size > self.n_points:
            raise ConfigError("net_size exceeds n_points")
        if self.violation_tolerance < 0 or self.violation_rows < 0:
            raise ConfigError("violation settings must be nonnegative")

    def cluster_params(self):
        sigma = self.sigma
        if sigma is None:
            sigma = self.epsilon / self.noise.comparison_constant
        kappa = self.kappa if self.kappa is not None else wedge_mass_lower(self.space, 1.0)
        return ClusterParams(
            epsilon=self.epsilon,
            delta=self.delta if self.delta is not None else self.epsilon / 4.0,
            sigma=sigma, kappa=kappa, threshold_scale=self.threshold_scale)


@dataclass(frozen=True)
class ErrorReport:
    """Scores and breach counts for one run; serializes to the JSON report."""

    status: str = "ok"
    algorithm: str = ""
    epsilon: float = 0.0
    n_points: int = 0
    net_size: int = 0
    master_seed: int = 0
    max_additive_error: float = 0.0
    mean_additive_error: float = 0.0
    comparator_violations: int = 0
    cluster_violations: int = 0
    over_tolerance: bool = False
    required_n: float = 0.0
    under_sampled: bool = False
    runtime_seconds: float = 0.0
    error: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_additive_error < 0.0 or self.mean_additive_error < 0.0:
            raise InvalidInput("errors must be nonnegative")
        if self.comparator_violations < 0 or self.cluster_violations < 0:
            raise InvalidInput("violation counts must be nonnegative")

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["details"] = dict(self.details)
        return d


def required_sample_size(epsilon, d, theta=0.1):
    """Paper-scale N for success probability 1 - theta, unit constant."""
    return epsilon ** (-2.0 * d - 2.0) * (d * math.log(1.0 / epsilon) + math.log(1.0 / theta))


# -- config files ---------------------------------------------------------------

_SECTION_KEYS = {
    "space": {"kind", "density_tilt"},
    "noise": {"mean_kind", "slope", "intercept", "bias_amp",
              "dispersion_kind", "dispersion", "clamp"},
    "missing": {"kind", "r0", "phi", "lam1", "lam2"},
    "run": {"algorithm", "epsilon", "n_points", "net_size", "master_seed",
            "delta", "sigma", "kappa", "threshold_scale", "proxy_min_count",
            "cutoff_r", "violation_tolerance", "violation_rows",
            "cluster_gamma", "cluster_gamma1"},
    "algo2": {"c", "l_estimate", "kappa", "c2", "n1", "n2", "n3", "n",
              "k_max", "ell", "beta_fudge"},
    "output": {"report", "matrix", "diagnostics"},
}


def load_config(path):
    """Parse an INI run file into an ExperimentConfig (strict keys)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for sec in cp.sections():
        if sec not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - _SECTION_KEYS[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
    if "run" not in cp:
        raise ConfigError("config needs a [run] section")

    try:
        space = Space(kind=cp.get("space", "kind", fallback="circle"),
                      density_tilt=cp.getfloat("space", "density_tilt", fallback=0.0))
        noise = NoiseModel(
            mean_kind=cp.get("noise", "mean_kind", fallback="identity"),
            slope=cp.getfloat("noise", "slope", fallback=1.0),
            intercept=cp.getfloat("noise", "intercept", fallback=0.0),
            bias_amp=cp.getfloat("noise", "bias_amp", fallback=1.0 / (4.0 * np.pi)),
            dispersion_kind=cp.get("noise", "dispersion_kind", fallback="gaussian"),
            dispersion=cp.getfloat("noise", "dispersion", fallback=0.0),
            clamp=cp.getboolean("noise", "clamp", fallback=False))
        missing = MissingModel(
            kind=cp.get("missing", "kind", fallback="none"),
            r0=cp.getfloat("missing", "r0", fallback=1.0),
            phi=cp.getfloat("missing", "phi", fallback=1.0),
            lam1=cp.getfloat("missing", "lam1", fallback=0.5),
            lam2=cp.getfloat("missing", "lam2", fallback=0.1))
    except InvalidInput:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad descriptor value: {exc}") from exc

    run = cp["run"]
    algo2 = None
    if "algo2" in cp:
        a2 = cp["algo2"]
        algo2 = Algo2Schedule(
            epsilon=run.getfloat("epsilon"),
            C=a2.getfloat("c", fallback=1.0),
            L_estimate=a2.getfloat("l_estimate", fallback=0.0),
            kappa=a2.getfloat("kappa", fallback=wedge_mass_lower(space, 1.0)),
            c2=a2.getfloat("c2", fallback=1.0),
            N1=a2.getint("n1"), N2=a2.getint("n2"), N3=a2.getint("n3"),
            n=a2.getint("n"), k_max=a2.getint("k_max"),
            ell=a2.getfloat("ell", fallback=1.0 + 2.0 / space.intrinsic_dim),
            beta_fudge=a2.getfloat("beta_fudge", fallback=1.0))

    def optfloat(sec, key):
        raw = cp.get(sec, key, fallback=None)
        return None if raw is None else float(raw)

    out = cp["output"] if "output" in cp else {}
    try:
        return ExperimentConfig(
            space=space, noise=noise, missing=missing,
            algorithm=run.get("algorithm"),
            epsilon=run.getfloat("epsilon"),
            n_points=run.getint("n_points", fallback=None),
            net_size=run.getint("net_size", fallback=None),
            master_seed=run.getint("master_seed", fallback=0),
            delta=optfloat("run", "delta"),
            sigma=optfloat("run", "sigma"),
            kappa=optfloat("run", "kappa"),
            threshold_scale=run.getfloat("threshold_scale", fallback=1.0),
            proxy_min_count=run.getfloat("proxy_min_count", fallback=0.0),
            cutoff_r=optfloat("run", "cutoff_r"),
            violation_tolerance=run.getint("violation_tolerance", fallback=0),
            violation_rows=run.getint("violation_rows", fallback=0),
            algo2=algo2,
            cluster_gamma=optfloat("run", "cluster_gamma"),
            cluster_gamma1=optfloat("run", "cluster_gamma1"),
            report_path=out.get("report"),
            matrix_path=out.get("matrix"),
            diagnostics_path=out.get("diagnostics"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInput):
            raise
        raise ConfigError(f"bad run value: {exc}") from exc


# -- evaluation -----------------------------------------------------------------

def _normalized(matrix):
    m = np.asarray(matrix, dtype=np.float64)
    mx = float(m.max())
    return m / mx if mx > 0.0 else m.copy()


def evaluate(recovered, space, sample, Y):
    """Entrywise error of the recovered matrix against exact distances.

    recovered may be a RecoveredMetric or a plain square array; Y gives the
    sample indices the matrix rows correspond to.  Both sides are
    max-normalized before differencing, so a uniform rescale is invisible.
    """
    values = getattr(recovered, "distances", recovered)
    values = np.asarray(values, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    if values.ndim != 2 or values.shape != (Y.size, Y.size):
        raise InvalidInput("recovered matrix does not match the index set")
    pts = sample.coords[Y]
    exact = _normalized(pairwise_distances(space, pts, pts))
    err = np.abs(_normalized(values) - exact)
    return ErrorReport(max_additive_error=float(err.max()),
                       mean_additive_error=float(err.mean()),
                       n_points=len(sample), net_size=int(Y.size))


def _violation_row_set(n, violation_rows):
    if violation_rows == 0 or violation_rows >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, violation_rows).astype(np.int64))


def _comparator_rows(values, exact, resolution, rows):
    """Per-row ordered-pair breach counts (the diagnostics-side recount)."""
    finite = np.isfinite(values)
    out = []
    for x in rows:
        need = (exact[x][:, None] >= exact[x][None, :] + resolution) & (
            finite[x][:, None] & finite[x][None, :])
        bad = need & (values[x][:, None] <= values[x][None, :])
        out.append({"kind": "comparator_row", "x": int(x),
                    "violations": int(bad.sum())})
    return out


# -- the run --------------------------------------------------------------------

def _run_algo1(config, lines):
    sample = sample_points(config.space, config.n_points, config.net_size,
                           seed=config.master_seed)
    oracle = NoisyOracle(space=config.space, sample=sample, noise=config.noise,
                         missing=config.missing, noise_seed=config.master_seed)
    params = config.cluster_params()
    if config.algorithm == "Algo1Complete":
        clusters = build_all_clusters(oracle, params,
                                      table=build_inner_products(oracle))
    else:
        clusters, _ = build_all_clusters_missing(
            oracle, params, arrays=build_missing_arrays(oracle))
    table = build_proxy_table(oracle, clusters, min_count=config.proxy_min_count)
    cmp = Comparator.from_proxy(table, params)
    if config.missing.kind == "none":
        metric = recover_all(cmp)
    else:
        r = config.cutoff_r if config.cutoff_r is not None else config.missing.r0
        metric = recover_all_missing(cmp, r)

    Y = np.arange(config.net_size)
    report = evaluate(metric, config.space, sample, Y)

    coords = sample.coords
    cluster_bad = 0
    for c in clusters:
        d = distances_to_point(config.space, coords[c.members], coords[c.center])
        ball = np.flatnonzero(
            distances_to_point(config.space, coords[config.net_size:],
                               coords[c.center]) <= params.delta) + config.net_size
        ok = bool(d.max() <= 4.0 * params.epsilon and np.isin(ball, c.members).all())
        cluster_bad += not ok
        lines.append({"kind": "cluster", "center": int(c.center),
                      "size": int(len(c.members)),
                      "max_member_distance": float(d.max()),
                      "sandwich_ok": ok})

    exact = pairwise_distances(config.space, coords[Y], coords[Y])
    rows = _violation_row_set(config.net_size, config.violation_rows)
    row_lines = _comparator_rows(cmp.values, exact, cmp.epsilon, rows)
    lines.extend(row_lines)
    comp_bad = sum(l["violations"] for l in row_lines)
    if rows.size == config.net_size:
        # exhaustive mode cross-checks the library counter
        assert comp_bad == comparator_contract_violations(cmp, exact)

    details = {"violation_rows": int(rows.size),
               "anchor_info": _plain(getattr(metric, "anchor_info", {}))}
    return report, metric, comp_bad, cluster_bad, details


def _run_algo2(config, lines):
    acfg = Algo2Config(space=config.space, noise=config.noise,
                       schedule=config.algo2, master_seed=config.master_seed,
                       cluster_gamma=config.cluster_gamma,
                       cluster_gamma1=config.cluster_gamma1)
    centers, metric = run_algorithm2(acfg)
    report = evaluate(metric, config.space, centers.sample, centers.centers)

    cluster_bad = 0
    for diag in centers.diagnostics:
        cluster_bad += not diag["assumption_ok"]
        lines.append({"kind": "iteration", **diag})

    sched = config.algo2
    pts = centers.sample.coords[centers.centers]
    exact = pairwise_distances(config.space, pts, pts)
    resolution = min(36.0 * sched.C**2 * sched.sigma, 0.5)
    if len(centers) > 1:
        cmp = Comparator(values=centers.cross_distances, epsilon=resolution)
        rows = _violation_row_set(len(centers), config.violation_rows)
        row_lines = _comparator_rows(cmp.values, exact, cmp.epsilon, rows)
        lines.extend(row_lines)
        comp_bad = sum(l["violations"] for l in row_lines)
    else:
        comp_bad = 0

    details = {"k": len(centers), "terminated": bool(centers.terminated),
               "violation_rows": int(len(centers)),
               "anchor_info": _plain(metric.anchor_info)}
    return report, metric, comp_bad, cluster_bad, details


def run_experiment(config):
    """Run one configured experiment end to end and write its artifacts."""
    t0 = time.time()
    lines = []
    try:
        if config.algorithm == "Algo2":
            report, metric, comp_bad, cluster_bad, details = _run_algo2(config, lines)
            configured_n = config.algo2.N1 + config.algo2.N2 + config.algo2.N3
        else:
            report, metric, comp_bad, cluster_bad, details = _run_algo1(config, lines)
            configured_n = config.n_points
    except Exception as exc:
        failure = ErrorReport(
            status="failed", algorithm=config.algorithm, epsilon=config.epsilon,
            n_points=config.n_points, net_size=config.net_size,
            master_seed=config.master_seed, runtime_seconds=time.time() - t0,
            error=f"{type(exc).__name__}: {exc}")
        _write_artifacts(config, failure, None, lines)
        raise

    required = required_sample_size(config.epsilon, config.space.intrinsic_dim)
    report = dataclasses.replace(
        report,
        algorithm=config.algorithm, epsilon=config.epsilon,
        master_seed=config.master_seed,
        comparator_violations=comp_bad, cluster_violations=cluster_bad,
        over_tolerance=comp_bad + cluster_bad > config.violation_tolerance,
        required_n=required, under_sampled=configured_n < required,
        runtime_seconds=time.time() - t0, details=details)
    _write_artifacts(config, report, metric, lines)
    return report


# -- artifacts ------------------------------------------------------------------

def _plain(obj):
    """Recursively coerce numpy scalars/arrays so json.dump accepts them."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    return obj


def _write_artifacts(config, report, metric, lines):
    if config.report_path:
        with open(config.report_path, "w") as fh:
            json.dump(_plain(report.as_dict()), fh, indent=2)
            fh.write("\n")
    if config.matrix_path and metric is not None:
        write_matrix_csv(metric, config.matrix_path)
    if config.diagnostics_path:
        with open(config.diagnostics_path, "w") as fh:
            for line in lines:
                fh.write(json.dumps(_plain(line)) + "\n")


def write_matrix_csv(metric, path):
    """Upper triangle of the recovered matrix, one `i,j,distance` row per pair."""
    d = getattr(metric, "distances", metric)
    with open(path, "w") as fh:
        fh.write("i,j,distance\n")
        for i in range(d.shape[0]):
            for j in range(i + 1, d.shape[1]):
                fh.write(f"{i},{j},{d[i, j]:.17g}\n")


def read_matrix_csv(path):
    """Inverse of write_matrix_csv; size inferred from the largest index.

    A header-only file has no off-diagonal pairs, which only a single-point
    matrix produces, so it reads back as [[0.]].
    """
    rows = np.genfromtxt(path, delimiter=",", names=True,
                         dtype=[("i", np.int64), ("j", np.int64), ("distance", np.float64)])
    rows = np.atleast_1d(rows)
    if rows.size == 0:
        return np.zeros((1, 1))
    n = int(max(rows["i"].max(), rows["j"].max())) + 1
    out = np.zeros((n, n))
    out[rows["i"], rows["j"]] = rows["distance"]
    out[rows["j"], rows["i"]] = rows["distance"]
    return out


# -- concentration self-test ------------------------------------------------------

def hoeffding_ip_bound(n, t, k, mean_bound, c=HOEFFDING_C):
    """Tail bound for |sum_i X_i Y_i - E| > t with psi2 norms <= k, |EX| <= mean_bound."""
    if t < 0.0:
        raise InvalidInput("t must be nonnegative")
    if t == 0.0:
        return 5.0
    return 5.0 * math.exp(-c * t**2 / (16.0 * k**2 * ((k**2 + mean_bound**2) * n + t)))


def hoeffding_ip_t(n, target, k, mean_bound, c=HOEFFDING_C):
    """Deviation t at which hoeffding_ip_bound equals the target probability."""
    if not 0.0 < target < 5.0:
        raise InvalidInput("target must lie in (0, 5)")
    g = 16.0 * k**2 * math.log(5.0 / target) / c
    return 0.5 * (g + math.sqrt(g**2 + 4.0 * g * (k**2 + mean_bound**2) * n))


# the criterion points: (n, dispersion_kind, dispersion, target bound)
SELFTEST_CASES = (
    (1024, "gaussian", 0.1224744871391589, 0.01),
    (4096, "gaussian", 0.1224744871391589, 0.01),
    (4096, "gaussian", 0.1224744871391589, 0.05),
    (1024, "uniform", 0.2, 0.01),
    (4096, "uniform", 0.2, 0.05),
    (2048, "gaussian", 0.3, 0.02),
)


def concentration_selftest(cases=None, trials=5000, base_seed=101,
                           space=None, c=HOEFFDING_C):
    """Monte Carlo failure rates for the inner-product tail bound.

    Each case draws n fresh noisy-distance pairs per trial, sums the
    products, and counts deviations beyond t from the exact expectation
    (the two draws of a product are independent, so E[X_i Y_i] is just the
    product of closed-form means).  The pass mark is an empirical rate at
    most twice the bound.  A case is (n, dispersion_kind, dispersion,
    target_bound) with an optional fifth element giving t directly instead
    of solving it from the target.
    """
    if cases is None:
        cases = SELFTEST_CASES
    if space is None:
        space = Space("circle")
    results = []
    for case_idx, case in enumerate(cases):
        n, kind, dispersion, target = case[:4]
        noise = NoiseModel(dispersion_kind=kind, dispersion=dispersion)
        sample = sample_points(space, n + 2, n, seed=base_seed + case_idx)
        x_idx = np.full(n, n, dtype=np.int64)
        y_idx = np.full(n, n + 1, dtype=np.int64)
        cols = np.arange(n, dtype=np.int64)
        k = noise.mean_upper / math.sqrt(math.log(2.0)) + noise.orlicz_bound
        t = case[4] if len(case) > 4 else hoeffding_ip_t(n, target, k,
                                                         noise.mean_upper, c)
        probe = NoisyOracle(space=space, sample=sample, noise=noise,
                            missing=MissingModel(), noise_seed=0)
        expect = float(np.dot(mean_pairs(probe, x_idx, cols),
                              mean_pairs(probe, y_idx, cols)))
        failures = 0
        for trial in range(trials):
            orac = NoisyOracle(space=space, sample=sample, noise=noise,
                               missing=MissingModel(),
                               noise_seed=base_seed * 1000003 + trial)
            gx = draw_noisy_pairs(orac, x_idx, cols)
            gy = draw_noisy_pairs(orac, y_idx, cols)
            if abs(float(np.dot(gx, gy)) - expect) > t:
                failures += 1
        bound = hoeffding_ip_bound(n, t, k, noise.mean_upper, c)
        rate = failures / trials
        results.append({"n": n, "dispersion_kind": kind, "dispersion": dispersion,
                        "t": t, "bound": bound, "trials": trials,
                        "failures": failures, "rate": rate,
                        "ok": rate <= 2.0 * bound})
    return {"cases": results, "passed": all(r["ok"] for r in results),
            "c": c, "trials": trials}
