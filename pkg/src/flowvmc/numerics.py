"""Dense linear algebra, reproducible random streams and Gauss-Hermite quadrature."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NotSPDError, SingularError

DEFAULT_GH_NODES = 64


class RngStream:
    """Counter-based (Philox) random stream.

    Identical seeds give identical draw sequences for a fixed draw order, on
    every platform numpy supports. Sub-streams for parallel work come from
    :meth:`spawn` and never overlap with the parent.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = _key if _key is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(list(self._key))))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self._key + (int(index),))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def signs(self, size) -> np.ndarray:
        """Independent fair +-1 draws."""
        return np.where(self._gen.integers(0, 2, size) == 0, -1.0, 1.0)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def _check_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def is_symmetric(m: np.ndarray, rtol: float = 1e-12) -> bool:
    m = np.asarray(m, dtype=np.float64)
    scale = max(np.abs(m).max(initial=0.0), 1e-300)
    return bool(np.abs(m - m.T).max(initial=0.0) <= rtol * scale)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises :class:`NotSPDError` when ``m`` is not symmetric or a pivot is not
    strictly positive.
    """
    m = _check_square(m)
    if not is_symmetric(m):
        raise NotSPDError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(str(exc)) from None


def solve_damped(m: np.ndarray, rhs: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``(m + gamma I) x = rhs`` for symmetric PSD ``m``."""
    m = _check_square(m)
    rhs = np.asarray(rhs, dtype=np.float64)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    a = m + gamma * np.eye(m.shape[0])
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularError("damped matrix is not positive definite; increase gamma") from None
    # pivots near roundoff mean the system is numerically degenerate
    d = np.diag(c)
    if d.min() <= 1e-7 * max(d.max(), 1e-300):
        raise SingularError("damped matrix is numerically singular; increase gamma")
    y = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, y)


def solve_damped_gram(samples: np.ndarray, rhs: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``(S^T S / N + gamma I) x = rhs`` with ``S`` of shape ``(N, n)``.

    Uses the push-through identity when ``n > N`` so the cost is an ``N x N``
    solve. Requires ``gamma > 0`` in that regime (the Gram matrix is rank
    deficient).
    """
    s = np.asarray(samples, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    n_samples, n = s.shape
    if n <= n_samples:
        return solve_damped(s.T @ s / n_samples, rhs, gamma)
    if gamma <= 0:
        raise SingularError("gram matrix is rank deficient; gamma must be positive")
    small = s @ s.T + n_samples * gamma * np.eye(n_samples)
    c = np.linalg.cholesky(small)
    w = np.linalg.solve(c.T, np.linalg.solve(c, s @ rhs))
    return (rhs - s.T @ w) / gamma


def haar_orthogonal(d: int, rng: RngStream) -> np.ndarray:
    """Haar-distributed orthogonal ``d x d`` matrix (QR with sign-fixed R)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    q, r = np.linalg.qr(rng.normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def gauss_hermite_expectation(
    f: Callable[[np.ndarray], np.ndarray],
    mean: float = 0.0,
    variance: float = 1.0,
    nodes: int = DEFAULT_GH_NODES,
) -> float:
    """``E[f(X)]`` for ``X ~ N(mean, variance)``; exact for polynomials of degree < 2*nodes."""
    if nodes < 2:
        raise ValueError("need at least 2 nodes")
    if variance <= 0:
        raise ValueError("variance must be positive")
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    x = mean + math.sqrt(variance) * t
    vals = np.asarray(f(x), dtype=np.float64)
    return float(np.dot(w, vals) / math.sqrt(2.0 * math.pi))


def trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))
