"""Synthetic geodesic probability spaces with exactly computable ground truth.

Four diameter-1 spaces: the circle (chart t in [0,2), geodesic = shorter arc
over half the circumference), the unit interval, the flat torus (chart
[0,1)^2, metric scaled by sqrt(2) so the farthest pair sits at distance 1),
and the round sphere (unit vectors in R^3, angle / pi).  The circle admits a
smooth non-uniform density 1 + a cos(pi t) (up to normalization) to exercise
the lower-density-bound assumptions; the other spaces are uniform.

All distances, ball volumes and wedge masses are closed form, which is what
makes end-to-end error guarantees checkable against truth.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from . import rng

KINDS = ("circle", "interval", "torus", "sphere")

_CHART_DIM = {"circle": 1, "interval": 1, "torus": 2, "sphere": 3}
_INTRINSIC_DIM = {"circle": 1, "interval": 1, "torus": 2, "sphere": 2}


@dataclass(frozen=True)
class Space:
    """One of the supported model spaces.

    density_tilt: amplitude a of the circle density 1 + a cos(pi t); must
    satisfy |a| < 1 so the density stays bounded away from 0.  Only the
    circle supports a tilt.
    """

    kind: str
    density_tilt: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown space kind {self.kind!r}")
        if self.density_tilt != 0.0 and self.kind != "circle":
            raise InvalidInput("density_tilt is only supported on the circle")
        if not abs(self.density_tilt) < 1.0:
            raise InvalidInput("density_tilt must lie in (-1, 1)")

    @property
    def chart_dim(self):
        return _CHART_DIM[self.kind]

    @property
    def intrinsic_dim(self):
        return _INTRINSIC_DIM[self.kind]

    @property
    def density_band(self):
        """(lo, hi) bounds on the sampling density relative to uniform."""
        a = abs(self.density_tilt)
        return 1.0 - a, 1.0 + a


@dataclass(frozen=True)
class SampleSet:
    """N points drawn i.i.d. from the space; the first net_size form the net.

    The net is a prefix of the same i.i.d. stream, so it is itself an
    unbiased sample (no reordering happens anywhere).
    """

    space: Space
    coords: np.ndarray
    net_size: int
    seed: int

    def __post_init__(self):
        if not 1 <= self.net_size <= len(self.coords):
            raise InvalidInput("need 1 <= net_size <= number of points")

    def __len__(self):
        return len(self.coords)

    @property
    def net_coords(self):
        return self.coords[: self.net_size]


def _check_chart(space, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.shape[1] != space.chart_dim:
        raise InvalidInput(
            f"{space.kind} chart has dimension {space.chart_dim}, got {pts.shape[1]}"
        )
    if space.kind == "circle":
        ok = np.all((pts[:, 0] >= 0.0) & (pts[:, 0] < 2.0))
    elif space.kind == "interval":
        ok = np.all((pts[:, 0] >= 0.0) & (pts[:, 0] <= 1.0))
    elif space.kind == "torus":
        ok = np.all((pts >= 0.0) & (pts < 1.0))
    else:  # sphere
        ok = np.all(np.abs(np.einsum("ij,ij->i", pts, pts) - 1.0) < 1e-9)
    if not ok:
        raise InvalidInput(f"coordinates outside the {space.kind} chart")
    return pts


def pairwise_distances(space, a, b):
    """Geodesic distances between rows of a and rows of b, shape (len(a), len(b)).

    Broadcasting over the full cross product; both inputs are chart-validated.
    """
    a = _check_chart(space, a)
    b = _check_chart(space, b)
    if space.kind == "circle":
        # chart length 2, circumference normalized so the diameter is 1
        delta = np.abs(a[:, 0][:, None] - b[:, 0][None, :])
        return np.minimum(delta, 2.0 - delta)
    if space.kind == "interval":
        return np.abs(a[:, 0][:, None] - b[:, 0][None, :])
    if space.kind == "torus":
        du = np.abs(a[:, 0][:, None] - b[:, 0][None, :])
        dv = np.abs(a[:, 1][:, None] - b[:, 1][None, :])
        du = np.minimum(du, 1.0 - du)
        dv = np.minimum(dv, 1.0 - dv)
        return np.sqrt(2.0) * np.hypot(du, dv)
    # chord form: well conditioned at 0 (arccos of the dot product is not)
    out = np.empty((len(a), len(b)))
    step = max(1, 2**22 // max(len(b), 1))
    for s in range(0, len(a), step):
        diff = a[s : s + step, None, :] - b[None, :, :]
        chord = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out[s : s + step] = 2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0)) / np.pi
    return out


def paired_distances(space, a, b):
    """Elementwise geodesic distances between aligned rows of a and b."""
    a = _check_chart(space, a)
    b = _check_chart(space, b)
    if space.kind == "circle":
        delta = np.abs(a[:, 0] - b[:, 0])
        return np.minimum(delta, 2.0 - delta)
    if space.kind == "interval":
        return np.abs(a[:, 0] - b[:, 0])
    if space.kind == "torus":
        du = np.abs(a[:, 0] - b[:, 0])
        dv = np.abs(a[:, 1] - b[:, 1])
        return np.sqrt(2.0) * np.hypot(np.minimum(du, 1.0 - du), np.minimum(dv, 1.0 - dv))
    chord = np.sqrt(np.einsum("ij,ij->i", a - b, a - b))
    return 2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0)) / np.pi


def geodesic_distance(space, a, b):
    """Exact geodesic distance between two chart points (scalar)."""
    return float(pairwise_distances(space, [a], [b])[0, 0])


def distances_to_point(space, coords, p):
    return pairwise_distances(space, coords, [p])[:, 0]


def _unit_torus_ball_area(radius):
    # area of a metric ball of the given radius on the unit square torus
    # (euclidean metric, side 1); exact up to the covering radius sqrt(2)/2
    r = float(radius)
    if r <= 0.5:
        return np.pi * r * r
    lens = np.pi * r * r - 4.0 * (
        r * r * np.arccos(1.0 / (2.0 * r)) - np.sqrt(4.0 * r * r - 1.0) / 4.0
    )
    return lens


def ball_volume_lower(space, r):
    """Lower bound, over all centers, of the measure of a radius-r ball.

    Exact for every space (the worst center is known in closed form); this is
    the V(r) that sizes every sample-count requirement downstream.
    """
    r = float(r)
    if not 0.0 < r <= 1.0:
        raise InvalidInput("ball radius must lie in (0, 1]")
    lo, _ = space.density_band
    if space.kind == "circle":
        # arc of chart length 2r out of 2, times the minimal density
        return r * lo
    if space.kind == "interval":
        # worst center is an endpoint
        return min(r, 1.0)
    if space.kind == "torus":
        return _unit_torus_ball_area(min(r, 1.0) / np.sqrt(2.0))
    return (1.0 - np.cos(np.pi * min(r, 1.0))) / 2.0


def wedge_mass_lower(space, u):
    """Lower bound on mu{z : d(x,z) >= d(y,z) + u/4} over pairs at distance >= u.

    Circle and interval are exact; torus and sphere use the containment
    {z : d(y,z) <= 3u/8} subset of the wedge (triangle inequality), so the
    bound is V(3u/8) there.  Always positive for u in (0, 1].
    """
    u = float(u)
    if not 0.0 < u <= 1.0:
        raise InvalidInput("separation u must lie in (0, 1]")
    lo, _ = space.density_band
    if space.kind == "circle":
        # the wedge is an arc set of chart length 2 - 2*(u/4) regardless of
        # where the pair sits; see the matching brute-force test
        return (1.0 - u / 4.0) / 2.0 * lo
    if space.kind == "interval":
        # worst case: y at the boundary, x at distance u from it
        return 3.0 * u / 8.0
    return ball_volume_lower(space, 3.0 * u / 8.0)


def _circle_tilted_positions(space, unit):
    # invert the CDF F(t) = t/2 + a sin(pi t) / (2 pi) on [0, 2) by Newton;
    # F' >= (1-a)/2 > 0 so the fixed iteration count is plenty for f64
    a = space.density_tilt
    t = 2.0 * unit
    for _ in range(40):
        f = t / 2.0 + a * np.sin(np.pi * t) / (2.0 * np.pi) - unit
        fp = (1.0 + a * np.cos(np.pi * t)) / 2.0
        t = t - f / fp
    return np.clip(t, 0.0, np.nextafter(2.0, 0.0))[:, None]


def sample_points(space, n_points, net_size, seed):
    """Draw n_points i.i.d. from the space's density; deterministic in seed."""
    if n_points < 1:
        raise InvalidInput("need at least one point")
    k = space.chart_dim
    u = rng.counter_uniforms(seed, rng.STREAM_SAMPLE, 0, n_points * k).reshape(
        n_points, k
    )
    if space.kind == "circle":
        if space.density_tilt != 0.0:
            coords = _circle_tilted_positions(space, u[:, 0])
        else:
            coords = 2.0 * u
    elif space.kind == "interval":
        coords = u
    elif space.kind == "torus":
        coords = u  # counter_uniforms is open (0,1), inside the chart
    else:
        z = 2.0 * u[:, 0] - 1.0
        phi = 2.0 * np.pi * u[:, 1]
        s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        coords = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
        coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    coords.setflags(write=False)
    return SampleSet(space=space, coords=coords, net_size=net_size, seed=seed)
