"""Shared numerical kernels: seeded RNG, softmax, normalization, SPD square root,
finite-difference gradients.

Everything here runs in float64.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, NumericalDivergenceError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix_mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x ^ (x >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based splitmix64 stream.

    The k-th output (k = 1, 2, ...) is ``mix(seed + k * 0x9E3779B97F4A7C15 mod 2**64)``,
    so a stream is fully described by ``(seed, counter)`` and can be produced in
    vectorized blocks. Uniforms take the top 53 bits; normals use Box-Muller on
    consecutive pairs.

    One instance must not be shared between threads; use :meth:`spawn` to derive
    independent child streams.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self.counter)
        with np.errstate(over="ignore"):
            x = np.uint64(self.seed) + k * _GAMMA
        self.counter = (self.counter + n) & _MASK64
        return _splitmix_mix(x)

    def random(self, size=None) -> np.ndarray | float:
        """Uniform floats in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        raw = self.next_u64(2 * m)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        out = loc + scale * out[:n]
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high)."""
        if high <= low:
            raise InvalidArgumentError(f"empty integer range [{low}, {high})")
        u = self.random(1 if size is None else size)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        return int(out.ravel()[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def spawn(self, key) -> "Rng":
        """Independent child stream keyed by an int or string; does not advance self."""
        digest = hashlib.blake2b(str(key).encode(), digest_size=8).digest()
        salt = np.uint64(int.from_bytes(digest, "little"))
        child = _splitmix_mix(np.array([np.uint64(self.seed) ^ salt], dtype=np.uint64))
        return Rng(int(child[0]))


def softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("softmax input contains non-finite values")
    z = v / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def l2_normalize(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / norm


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def spd_sqrt(m, sym_tol: float = 1e-12, neg_tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric positive semi-definite matrix.

    Eigenvalues down to ``-neg_tol`` (scaled by the spectrum size when it
    exceeds 1) are treated as round-off and clamped to zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    asym = float(np.abs(m - m.T).max(initial=0.0))
    if asym > sym_tol * scale:
        raise InvalidArgumentError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    w, vecs = np.linalg.eigh(symmetrize(m))
    floor = -neg_tol * max(1.0, float(w.max(initial=0.0)))
    if w.min(initial=0.0) < floor:
        raise InvalidArgumentError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    root = (vecs * np.sqrt(np.clip(w, 0.0, None))) @ vecs.T
    return symmetrize(root)


def finite_diff_grad(f, x, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    If ``indices`` is given only those flat coordinates are differenced; the rest
    of the returned gradient is zero.
    """
    if not h > 0:
        raise InvalidArgumentError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalDivergenceError(f"non-finite function value while differencing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a, b) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|)``; 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
