"""Seeded randomness and small dense linear-algebra helpers.

Everything here works in float64.  Vectors are plain 1-D numpy arrays and
matrices are 2-D arrays; no wrapper types are imposed on callers.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DidNotConverge, ZeroVector

EPS_NORM = 1e-12


def derive_seed(seed: int, *labels) -> int:
    """Child seed from a parent seed and any number of labels (str or int)."""
    key = repr((int(seed),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


class SeededRng:
    """Reproducible random stream backed by PCG64.

    PCG64 output is specified bit-for-bit, so streams agree across platforms.
    Instances are single-owner mutable state; use :meth:`child` to hand a
    generator to another stage or worker.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) % (1 << 64)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *labels) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *labels))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random_raw(self, n: int) -> np.ndarray:
        return self._gen.bit_generator.random_raw(n)


def norm(v) -> float:
    return float(np.linalg.norm(v))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = norm(u), norm(v)
    if nu < EPS_NORM or nv < EPS_NORM:
        raise ZeroVector()
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = norm(v)
    if n < EPS_NORM:
        raise ZeroVector()
    return v / n


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise L2 normalization; raises ZeroVector naming the first bad row."""
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m, axis=1, keepdims=True)
    bad = np.flatnonzero(n[:, 0] < EPS_NORM)
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm below 1e-12", index=int(bad[0]))
    return m / n


def gaussian_sample(rng: SeededRng, mean, sigma: float, count: int | None = None) -> np.ndarray:
    """Isotropic Gaussian around ``mean``; ``count`` rows when given."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mean = np.asarray(mean, dtype=np.float64)
    shape = mean.shape if count is None else (count,) + mean.shape
    return mean + sigma * rng.normal(shape)


def _top_eigvec(a: np.ndarray, max_iter: int, tol: float):
    d = a.shape[0]
    scale = float(np.max(np.abs(np.diag(a)))) if d else 0.0
    if scale <= 0.0:
        return None, 0.0
    # start from a column of a^(2^12): repeated squaring separates close
    # eigenvalues, so the plain iteration below only polishes the vector
    b = a / scale
    for _ in range(12):
        b = b @ b
        m = float(np.max(np.abs(b)))
        if m == 0.0:
            break
        b /= m
    col = int(np.argmax(np.linalg.norm(b, axis=0)))
    v = b[:, col].copy() if np.linalg.norm(b[:, col]) > 0 else a[:, int(np.argmax(np.diag(a)))].copy()
    nv = np.linalg.norm(v)
    if nv <= 1e-14 * scale:
        return None, 0.0
    v /= nv
    for _ in range(max_iter):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw <= 1e-14 * scale:
            return None, 0.0
        w /= nw
        if np.dot(w, v) < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            return w, float(w @ a @ w)
        v = w
    raise DidNotConverge(f"power iteration did not converge in {max_iter} iterations")


def _orthogonal_fill(basis: list[np.ndarray], d: int) -> np.ndarray:
    # deterministic unit vector orthogonal to the given ones
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        for b in basis:
            e -= np.dot(e, b) * b
        n = np.linalg.norm(e)
        if n > 1e-6:
            return e / n
    raise DidNotConverge("no orthogonal direction available")


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    return -v if v[int(np.argmax(np.abs(v)))] < 0 else v


def principal_directions(rows, k: int = 2, max_iter: int = 500, tol: float = 1e-9):
    """Top-``k`` eigenpairs of the covariance of ``rows`` by power iteration with deflation.

    Returns ``(directions, eigenvalues, mean)`` with ``directions`` of shape
    ``(k, D)``.  Zero-variance directions are filled with an arbitrary
    orthonormal complement and reported with eigenvalue 0.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    d = cov.shape[0]
    dirs, vals = [], []
    a = cov.copy()
    for _ in range(min(k, d)):
        v, lam = _top_eigvec(a, max_iter, tol)
        if v is None:
            v, lam = _orthogonal_fill(dirs, d), 0.0
        else:
            # re-orthogonalize against earlier directions to cancel deflation drift
            for b in dirs:
                v = v - np.dot(v, b) * b
            v /= np.linalg.norm(v)
            lam = float(v @ cov @ v)
        v = _canonical_sign(v)
        dirs.append(v)
        vals.append(lam)
        a = a - lam * np.outer(v, v)
    return np.array(dirs), np.array(vals), mean


def pca_project_2d(rows, max_iter: int = 500, tol: float = 1e-9) -> np.ndarray:
    """Project mean-centered rows onto their top-2 principal directions (N x 2)."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if x.shape[1] == 1:
        return np.column_stack([x[:, 0] - x[:, 0].mean(), np.zeros(x.shape[0])])
    dirs, _, mean = principal_directions(x, 2, max_iter, tol)
    return (x - mean) @ dirs.T
