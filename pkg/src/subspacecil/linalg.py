"""Dense linear-algebra kernel: canonical thin SVD, nearest-rank quantiles,
seeded Gaussian sampling, and subspace-overlap measures.

Everything here is a pure function over float64 numpy arrays, safe to call
concurrently on immutable inputs. The SVD is canonicalized (descending
singular values, sign-fixed columns) so downstream bookkeeping that compares
factors across calls is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdConvergenceError",
    "SvdResult",
    "thin_svd",
    "quantile_nearest_rank",
    "gaussian_sample",
    "subspace_overlap",
]


class SvdConvergenceError(RuntimeError):
    """SVD iteration failed to converge; carries the best-effort residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SvdResult:
    """Canonical thin SVD factors.

    u: (m, k) with orthonormal columns, each sign-fixed so its
       largest-magnitude entry (lowest index on ties) is non-negative.
    sigma: (k,) non-negative, non-increasing.
    v: (n, k) with orthonormal columns; signs follow u.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _canonicalize(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Flip (u_j, v_j) jointly so the reconstruction is unchanged.
    u = u.copy()
    v = v.copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        pivot = int(np.argmax(np.abs(col)))  # argmax takes the lowest index on ties
        if col[pivot] < 0.0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, v


def _svd_via_gram(w: np.ndarray, k: int) -> SvdResult:
    # Fallback path: eigendecomposition of the Gram matrix. Less accurate for
    # tiny singular values but does not share LAPACK's gesdd failure mode.
    m, n = w.shape
    if m >= n:
        vals, vecs = np.linalg.eigh(w.T @ w)
        order = np.argsort(vals)[::-1]
        vals = np.clip(vals[order], 0.0, None)
        v = vecs[:, order]
        sigma = np.sqrt(vals)
        u = np.zeros((m, n))
        nz = sigma > 0
        u[:, nz] = (w @ v[:, nz]) / sigma[nz]
        return SvdResult(u[:, :k], sigma[:k], v[:, :k])
    res = _svd_via_gram(w.T, k)
    return SvdResult(res.v, res.sigma, res.u)


def thin_svd(w: np.ndarray, k: int) -> SvdResult:
    """Thin SVD of ``w`` truncated to the top ``k`` components, canonicalized.

    Raises SvdConvergenceError when the iterative solver fails and the
    fallback factorization cannot reach a usable residual.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={w.ndim}")
    if not np.all(np.isfinite(w)):
        raise ValueError("matrix has non-finite entries")
    if not 0 < k <= min(w.shape):
        raise ValueError(f"k={k} out of range for shape {w.shape}")

    try:
        u, sigma, vt = np.linalg.svd(w, full_matrices=False)
        res = SvdResult(u[:, :k], sigma[:k], vt[:k].T)
    except np.linalg.LinAlgError:
        res = _svd_via_gram(w, k)
        wnorm = float(np.linalg.norm(w))
        residual = float(np.linalg.norm(w - res.reconstruct())) / max(wnorm, 1e-300)
        if min(w.shape) > k or residual > 1e-8:
            raise SvdConvergenceError(
                f"SVD did not converge for {w.shape[0]}x{w.shape[1]} matrix; "
                f"fallback residual {residual:.3e}",
                residual=residual,
            ) from None

    u, v = _canonicalize(res.u, res.v)
    return SvdResult(u, np.ascontiguousarray(res.sigma), v)


def quantile_nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: sorted(values)[ceil(q*n) - 1], 1-based ceiling."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("quantile of empty input")
    if not np.all(np.isfinite(values)):
        raise ValueError("quantile input has non-finite entries")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q={q} outside (0, 1]")
    idx = min(max(math.ceil(q * values.size) - 1, 0), values.size - 1)
    return float(np.sort(values)[idx])


def gaussian_sample(
    mu: np.ndarray,
    cov: np.ndarray,
    n: int,
    seed: int | np.random.SeedSequence,
) -> np.ndarray:
    """Draw ``n`` samples from N(mu, cov) with a seeded generator.

    The covariance must be symmetric within 1e-8. If the Cholesky
    factorization fails, a jitter of 1e-6 * trace(cov)/d is added once; a
    second failure is an error. Deterministic per (seed, n, d).
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = mu.shape[0]
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match dim {d}")
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(cov)):
        raise ValueError("non-finite mean or covariance")
    asym = float(np.max(np.abs(cov - cov.T))) if d else 0.0
    if asym > 1e-8:
        raise ValueError(f"covariance not symmetric within 1e-8 (max dev {asym:.3e})")

    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        if not cov.any():
            chol = np.zeros_like(cov)  # degenerate zero covariance
        else:
            lam = 1e-6 * float(np.trace(cov)) / d
            try:
                chol = np.linalg.cholesky(cov + lam * np.eye(d))
            except np.linalg.LinAlgError:
                raise ValueError(
                    f"covariance not factorizable even with jitter {lam:.3e}"
                ) from None

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    return mu + z @ chol.T


def subspace_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared cosine of principal angles: ||A^T B||_F^2 / k.

    Both inputs must have orthonormal columns (checked within 1e-8). Returns
    a value in [0, 1]; 1 for identical subspaces, 0 for orthogonal ones.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    k = a.shape[1]
    for name, m in (("A", a), ("B", b)):
        dev = float(np.max(np.abs(m.T @ m - np.eye(k))))
        if dev > 1e-8:
            raise ValueError(f"{name} is not orthonormal (max deviation {dev:.3e})")
    overlap = float(np.linalg.norm(a.T @ b) ** 2) / k
    return min(max(overlap, 0.0), 1.0)
