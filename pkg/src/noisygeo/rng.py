"""Counter-based pseudo-randomness.

Every random quantity in the library is a pure function of (seed, stream,
counter or index pair), so oracle calls are reproducible in any order and
batched draws agree bit-for-bit with scalar ones.  The generator is the
splitmix64 finalizer applied to a keyed counter; statistical quality is far
beyond what the estimators here can notice.
"""

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_GAMMA2 = 0xD1B54A32D192ED03
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)

# stream tags keep the sample / noise / mask sequences disjoint
STREAM_SAMPLE = 0x53414D50
STREAM_NOISE = 0x4E4F4953
STREAM_MASK = 0x4D41534B


def _mix(z):
    # u64 wraparound is the point; silence numpy's scalar overflow warnings
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def _base_key(seed, stream):
    # scalar key derivation in python ints to avoid numpy overflow warnings
    z = ((int(seed) & _MASK64) * _GAMMA + (int(stream) & _MASK64)) & _MASK64
    return _mix(np.uint64(z))


def _to_unit(bits):
    """u64 -> float64 in the open interval (0, 1)."""
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def pair_uniforms(seed, stream, i, j):
    """Uniform(0,1) keyed by the unordered pair {i, j}.  Vectorized."""
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    with np.errstate(over="ignore"):
        z = _mix(_base_key(seed, stream) + lo * np.uint64(_GAMMA))
        z = _mix(z ^ (hi * np.uint64(_GAMMA2)))
    return _to_unit(z)


def counter_uniforms(seed, stream, start, count):
    """Uniform(0,1) for counters start .. start+count-1."""
    ctr = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(_base_key(seed, stream) + ctr * np.uint64(_GAMMA))
        z = _mix(z ^ np.uint64(_GAMMA2))
    return _to_unit(z)


def pair_gaussians(seed, stream, i, j):
    return ndtri(pair_uniforms(seed, stream, i, j))
