"""Noisy pairwise observations and missing-data masks.

An observation oracle wraps a sample set and returns, for any index pair,
a noisy distance d'(i,j) = mean(i,j) + dispersion and a presence flag.
Both are pure functions of (noise_seed, unordered pair), so the full N x N
table never needs to exist in memory and repeated queries agree exactly.

Mean families:
  identity   f = d
  affine     f = intercept + slope * d          (slope k, comparison constant max(k, 1/k))
  bias       f = d + q(x) + q(y),  q = amp * (smooth unit wave per space)

Dispersion families (sub-Gaussian with a declared Orlicz bound):
  gaussian   sd s                 -> orlicz s * sqrt(8/3)
  uniform    half-width h         -> orlicz h / sqrt(ln 2)
  scaled     sd s * d(x,y)        -> orlicz s * sqrt(8/3) (diameter 1)
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvalidInput
from .spaces import paired_distances

MEAN_KINDS = ("identity", "affine", "bias")
DISPERSION_KINDS = ("gaussian", "uniform", "scaled")

# metric Lipschitz constant of the unit bias wave, per space kind
_WAVE_LIP = {"circle": np.pi, "interval": np.pi, "torus": np.sqrt(2.0) * np.pi, "sphere": np.pi}

_SQRT_8_3 = np.sqrt(8.0 / 3.0)
_INV_SQRT_LN2 = 1.0 / np.sqrt(np.log(2.0))


@dataclass(frozen=True)
class NoiseModel:
    mean_kind: str = "identity"
    slope: float = 1.0
    intercept: float = 0.0
    bias_amp: float = 1.0 / (4.0 * np.pi)
    dispersion_kind: str = "gaussian"
    dispersion: float = 0.0
    clamp: bool = False

    def __post_init__(self):
        if self.mean_kind not in MEAN_KINDS:
            raise InvalidInput(f"unknown mean_kind {self.mean_kind!r}")
        if self.dispersion_kind not in DISPERSION_KINDS:
            raise InvalidInput(f"unknown dispersion_kind {self.dispersion_kind!r}")
        if self.slope <= 0.0:
            raise InvalidInput("affine slope must be positive")
        if self.intercept < 0.0:
            raise InvalidInput("affine intercept must be nonnegative")
        if self.dispersion < 0.0:
            raise InvalidInput("dispersion must be nonnegative")
        # keep the bias Lipschitz constant <= 1/2 on every space (worst wave)
        if self.mean_kind == "bias" and abs(self.bias_amp) * max(_WAVE_LIP.values()) > 0.5:
            raise InvalidInput("bias amplitude too large: wave Lipschitz constant exceeds 1/2")

    @property
    def orlicz_bound(self):
        """Declared C1 with E exp((X-EX)^2 / C1^2) <= 2 for the dispersion law."""
        if self.dispersion == 0.0:
            return 0.0
        if self.dispersion_kind == "uniform":
            return self.dispersion * _INV_SQRT_LN2
        return self.dispersion * _SQRT_8_3

    @property
    def mean_upper(self):
        """C2: bound on |f| over the diameter-1 space."""
        if self.mean_kind == "affine":
            return self.intercept + self.slope
        if self.mean_kind == "bias":
            return 1.0 + 2.0 * abs(self.bias_amp)
        return 1.0

    @property
    def comparison_constant(self):
        """C3 in the distance-comparison property of the mean."""
        if self.mean_kind == "affine":
            return max(self.slope, 1.0 / self.slope)
        if self.mean_kind == "bias":
            return 2.0
        return 1.0

    @property
    def monotone_form(self):
        """(slope_bound C, intercept L) when f = F(d) with F increasing; None for bias."""
        if self.mean_kind == "identity":
            return 1.0, 0.0
        if self.mean_kind == "affine":
            return max(self.slope, 1.0 / self.slope), self.intercept
        return None

    @property
    def clamp_limit(self):
        return self.mean_upper + 5.0 * self.orlicz_bound


@dataclass(frozen=True)
class MissingModel:
    """Presence probability p(d) = max(phi, 1 - d/(r0+lam2)), clipped to [phi*lam1, 1]."""

    kind: str = "none"
    r0: float = 1.0
    phi: float = 1.0
    lam1: float = 0.5
    lam2: float = 0.1

    def __post_init__(self):
        if self.kind not in ("none", "cutoff"):
            raise InvalidInput(f"unknown missing kind {self.kind!r}")
        if self.kind == "cutoff":
            if not 0.0 < self.r0 <= 1.0:
                raise InvalidInput("r0 must lie in (0, 1]")
            if not 0.0 < self.phi <= 1.0:
                raise InvalidInput("phi must lie in (0, 1]")
            if self.lam2 <= 0.0:
                raise InvalidInput("lam2 must be positive")
            # second robustness bullet needs p(z,w) > lam1 * p(x,y) with p <= 1
            # and p >= phi, so lam1 < phi is the load-time check that makes it hold
            if not 0.0 < self.lam1 < self.phi:
                raise InvalidInput("need 0 < lam1 < phi for the robustness bullet")

    def presence_probability(self, dist):
        dist = np.asarray(dist, dtype=np.float64)
        if self.kind == "none":
            return np.ones_like(dist)
        p = np.maximum(self.phi, 1.0 - dist / (self.r0 + self.lam2))
        return np.clip(p, self.phi * self.lam1, 1.0)


@dataclass(frozen=True)
class NoisyOracle:
    space: object
    sample: object
    noise: NoiseModel
    missing: MissingModel
    noise_seed: int

    def __post_init__(self):
        if self.sample.space != self.space:
            raise InvalidInput("sample was drawn from a different space")


def _bias_values(space, coords):
    # unit wave on the first chart coordinate (third for the sphere); smooth
    # across the chart's identifications
    t = coords[:, 0]
    if space.kind == "circle" or space.kind == "interval":
        return np.sin(np.pi * t)
    if space.kind == "torus":
        return np.sin(2.0 * np.pi * t)
    return coords[:, 2]


def _grid(I, J):
    I = np.asarray(I, dtype=np.intp)
    J = np.asarray(J, dtype=np.intp)
    return np.broadcast_arrays(I.reshape(-1, 1), J.reshape(1, -1))


def _paired_truth(oracle, I, J):
    coords = oracle.sample.coords
    d = paired_distances(oracle.space, coords[I.ravel()], coords[J.ravel()])
    return d.reshape(I.shape)


def _mean_from_distances(oracle, I, J, d):
    nm = oracle.noise
    if nm.mean_kind == "identity":
        return d.copy()
    if nm.mean_kind == "affine":
        return nm.intercept + nm.slope * d
    q = nm.bias_amp * _bias_values(oracle.space, oracle.sample.coords)
    return d + q[I] + q[J]


def mean_pairs(oracle, I, J):
    """f(x_i, x_j) elementwise over aligned index arrays (0 on the diagonal)."""
    I = np.asarray(I, dtype=np.intp)
    J = np.asarray(J, dtype=np.intp)
    f = _mean_from_distances(oracle, I, J, _paired_truth(oracle, I, J))
    f[I == J] = 0.0
    return f


def mean_block(oracle, I, J):
    """f over the full index grid I x J as an (len(I), len(J)) matrix."""
    return mean_pairs(oracle, *_grid(I, J))


def mean_distance(oracle, i, j):
    return float(mean_pairs(oracle, [i], [j])[0])


def _dispersion_pairs(oracle, I, J, d):
    nm = oracle.noise
    if nm.dispersion_kind == "uniform":
        u = rng.pair_uniforms(oracle.noise_seed, rng.STREAM_NOISE, I, J)
        return nm.dispersion * (2.0 * u - 1.0)
    g = rng.pair_gaussians(oracle.noise_seed, rng.STREAM_NOISE, I, J)
    if nm.dispersion_kind == "scaled":
        return nm.dispersion * d * g
    return nm.dispersion * g


def draw_noisy_pairs(oracle, I, J):
    """Fixed noisy realization d'(i,j), elementwise over aligned index arrays."""
    I = np.asarray(I, dtype=np.intp)
    J = np.asarray(J, dtype=np.intp)
    d = _paired_truth(oracle, I, J)
    out = _mean_from_distances(oracle, I, J, d)
    if oracle.noise.dispersion != 0.0:
        out += _dispersion_pairs(oracle, I, J, d)
        if oracle.noise.clamp:
            lim = oracle.noise.clamp_limit
            np.clip(out, -lim, lim, out=out)
    out[I == J] = 0.0
    return out


def draw_noisy_block(oracle, I, J):
    """d' over the full index grid I x J."""
    return draw_noisy_pairs(oracle, *_grid(I, J))


def draw_noisy(oracle, i, j):
    return float(draw_noisy_pairs(oracle, [i], [j])[0])


def draw_mask_pairs(oracle, I, J):
    """Presence flags m(i,j), elementwise; the diagonal is always present."""
    I = np.asarray(I, dtype=np.intp)
    J = np.asarray(J, dtype=np.intp)
    if oracle.missing.kind == "none":
        return np.ones(np.broadcast(I, J).shape, dtype=bool)
    p = oracle.missing.presence_probability(_paired_truth(oracle, I, J))
    u = rng.pair_uniforms(oracle.noise_seed, rng.STREAM_MASK, I, J)
    out = u < p
    out[I == J] = True
    return out


def draw_mask_block(oracle, I, J):
    """Presence flags over the full index grid I x J."""
    return draw_mask_pairs(oracle, *_grid(I, J))


def draw_mask(oracle, i, j):
    return bool(draw_mask_pairs(oracle, [i], [j])[0])
