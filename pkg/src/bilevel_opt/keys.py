"""Deterministic 64-bit sample keys.

Every stochastic draw in the package is addressed by a SampleKey: a 64-bit
integer derived by hashing (run seed, iteration, slot). Oracles are pure
functions of their key, so whole runs are bit-reproducible and expectations
can be enumerated by sweeping keys.
"""

import math as _math

import numpy as np

MASK64 = (1 << 64) - 1

SampleKey = int


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, *words: int) -> SampleKey:
    """Hash a run seed and any number of integer words into one key.

    Distinct word tuples give statistically independent keys; the map is
    pure, so (seed, t, slot) always names the same draw.
    """
    h = _splitmix64(seed & MASK64)
    for w in words:
        h = _splitmix64((h ^ (w & MASK64)) & MASK64)
    return h


def subkey(base: SampleKey, index: int) -> SampleKey:
    """Cheap child key: one mixing round off an already-derived base key."""
    return _splitmix64((base ^ (index & MASK64)) & MASK64)


def slot(name: str) -> int:
    """Stable integer tag for a named draw slot (e.g. "xi", "zeta0")."""
    h = 0xCBF29CE484222325
    for ch in name.encode():
        h = ((h ^ ch) * 0x100000001B3) & MASK64
    return h


def key_rng(key: SampleKey) -> np.random.Generator:
    """Generator seeded by one key, for draws that need rich numpy sampling."""
    return np.random.Generator(np.random.Philox(key=key & MASK64))


def uniform_index(key: SampleKey, n: int) -> int:
    """Uniform draw from {0, ..., n-1} without constructing a Generator."""
    if n <= 0:
        raise ValueError("n must be positive")
    # rejection-free modulo is fine here: n is tiny against 2**64
    return _splitmix64(key) % n


# --- counter-based gaussian noise -----------------------------------------
# Vectorized splitmix64 over uint64 counters: cheap deterministic uniforms
# without per-call Generator construction.

_U1 = np.uint64(0x9E3779B97F4A7C15)
_U2 = np.uint64(0xBF58476D1CE4E5B9)
_U3 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_INV53 = float(2.0**-53)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z + _U1
    z = (z ^ (z >> _S30)) * _U2
    z = (z ^ (z >> _S27)) * _U3
    return z ^ (z >> _S31)


def _uniforms(key: SampleKey, count: int, round_: int) -> np.ndarray:
    """count values in (0, 1], deterministic in (key, round_)."""
    base = np.uint64((key ^ (0xA5A5A5A5A5A5A5A5 * (round_ + 1))) & MASK64)
    ctr = np.arange(count, dtype=np.uint64) + base
    bits = _mix_array(ctr) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) * _INV53


# Truncated-gaussian noise: draws are conditioned on |z| <= 3 per coordinate
# and rescaled so the vector has the requested total standard deviation
# (E ||noise||^2 = sigma^2).
_TRUNC = 3.0
_PHI3 = 0.5 * (1.0 + _math.erf(_TRUNC / _math.sqrt(2.0)))
_phi3 = _math.exp(-0.5 * _TRUNC * _TRUNC) / _math.sqrt(2.0 * _math.pi)
_TRUNC_STD = _math.sqrt(1.0 - 2.0 * _TRUNC * _phi3 / (2.0 * _PHI3 - 1.0))


def _standard_normals(key: SampleKey, count: int, round_: int) -> np.ndarray:
    half = (count + 1) // 2
    u = _uniforms(key, 2 * half, round_)
    radius = np.sqrt(-2.0 * np.log(u[:half]))
    angle = (2.0 * np.pi) * u[half:]
    out = np.empty(2 * half)
    np.multiply(radius, np.cos(angle), out=out[:half])
    np.multiply(radius, np.sin(angle), out=out[half:])
    return out[:count]


def truncated_gaussian(key: SampleKey, dim: int, sigma: float) -> np.ndarray:
    """Zero-mean bounded noise vector with E||noise||^2 = sigma^2."""
    if sigma == 0.0:
        return np.zeros(dim)
    z = _standard_normals(key, dim, 0)
    round_ = 1
    bad = np.abs(z) > _TRUNC
    while bad.any():
        z[bad] = _standard_normals(key, int(bad.sum()), round_)
        bad = np.abs(z) > _TRUNC
        round_ += 1
    return z * (sigma / (np.sqrt(dim) * _TRUNC_STD))
