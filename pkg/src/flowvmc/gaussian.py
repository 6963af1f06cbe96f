"""Real Gaussian trial states ``psi(x) ~ exp(-(x - mu)^T A (x - mu) / 2)``.

The Born density is ``N(mu, A^{-1} / 2)``. ``A = L L^T`` with ``L`` lower
triangular and a positive diagonal, so every parameter vector is feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import torch

from .autodiff import DTYPE, DifferentiableProgram, as_tensor
from .batch import EnergyEstimate, SampleBatch
from .errors import DivergedError, NotSPDError
from .hamiltonian import QuarticHamiltonian
from .numerics import RngStream, cholesky


@dataclass(frozen=True)
class GaussianState:
    mu: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64, ndmin=1)
        L = np.array(self.L, dtype=np.float64, ndmin=2)
        if L.shape != (mu.size, mu.size):
            raise ValueError("L must be d x d")
        if not np.allclose(L, np.tril(L)):
            raise ValueError("L must be lower triangular")
        if np.any(np.diag(L) <= 0):
            raise NotSPDError("factor diagonal must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", np.tril(L))

    @classmethod
    def from_precision(cls, mu, A) -> "GaussianState":
        return cls(mu, cholesky(np.atleast_2d(A)))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def A(self) -> np.ndarray:
        return self.L @ self.L.T

    @property
    def covariance(self) -> np.ndarray:
        """Covariance of the Born density, ``A^{-1} / 2``."""
        return 0.5 * np.linalg.inv(self.A)

    # psi-evaluator interface used by the canonical estimator
    def log_psi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.mu
        _, logdet = np.linalg.slogdet(self.A / math.pi)
        return 0.25 * logdet - 0.5 * np.einsum("ni,ij,nj->n", x, self.A, x)

    def grad_log_psi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return -(x - self.mu) @ self.A

    def laplacian_log_psi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.full(x.shape[0], -np.trace(self.A))

    def log_prob(self, x) -> np.ndarray:
        return 2.0 * self.log_psi(x)

    def sample(self, count: int, rng: RngStream) -> SampleBatch:
        """Exact samples with the analytic input gradient ``-2 A (x - mu)``."""
        if count < 1:
            raise ValueError("count must be >= 1")
        c = np.linalg.cholesky(self.covariance)
        x = self.mu + rng.normal((count, self.dim)) @ c.T
        return SampleBatch(x, self.log_prob(x), input_grad=2.0 * self.grad_log_psi(x))

    # flat parametrization: [mu, log diag L, strict lower L]
    def to_vector(self) -> np.ndarray:
        rows, cols = np.tril_indices(self.dim, -1)
        return np.concatenate([self.mu, np.log(np.diag(self.L)), self.L[rows, cols]])

    @classmethod
    def from_vector(cls, v) -> "GaussianState":
        v = np.asarray(v, dtype=np.float64)
        d = int(round((math.sqrt(9 + 8 * v.size) - 3) / 2))
        mu, logdiag, off = v[:d], v[d : 2 * d], v[2 * d :]
        L = np.diag(np.exp(logdiag))
        rows, cols = np.tril_indices(d, -1)
        L[rows, cols] = off
        return cls(mu, L)


def squeezed_state(a: float) -> GaussianState:
    """The one-mode family ``(a / pi)^{1/4} exp(-a x^2 / 2)`` (``b = 0``)."""
    return GaussianState([0.0], [[math.sqrt(a)]])


def _energy_t(mu: torch.Tensor, L: torch.Tensor, h: torch.Tensor, u: torch.Tensor, alpha: float) -> torch.Tensor:
    A = L @ L.T
    Ainv = torch.cholesky_inverse(L)
    v = torch.diagonal(Ainv) + 2.0 * mu * mu
    return (
        0.25 * torch.trace(A)
        + alpha * (0.25 * (h * Ainv).sum() + 0.5 * mu @ h @ mu)
        + v @ u @ v / 32.0
        + (u * Ainv * Ainv).sum() / 16.0
        + 0.25 * mu @ (u * Ainv) @ mu
    )


def _vector_energy_t(v: torch.Tensor, d: int, h, u, alpha) -> torch.Tensor:
    mu, logdiag, off = v[:d], v[d : 2 * d], v[2 * d :]
    rows, cols = np.tril_indices(d, -1)
    L = torch.diag(torch.exp(logdiag))
    if off.numel():
        L = L.index_put((torch.as_tensor(rows), torch.as_tensor(cols)), off)
    return _energy_t(mu, L, h, u, alpha)


def gaussian_energy_analytic(s: GaussianState, H: QuarticHamiltonian) -> float:
    """Closed-form ``<psi|H|psi>`` for the Gaussian state."""
    if s.dim != H.dim:
        raise ValueError("dimension mismatch")
    with torch.no_grad():
        e = _energy_t(as_tensor(s.mu), as_tensor(s.L), as_tensor(H.h_xx), as_tensor(H.u), H.alpha)
    return float(e)


def gaussian_energy_mc(s: GaussianState, H: QuarticHamiltonian, count: int, rng: RngStream) -> EnergyEstimate:
    """Monte Carlo ``<psi|H|psi>`` via the adjoint (first-derivative) estimator."""
    batch = s.sample(count, rng)
    per_sample = 0.125 * (batch.input_grad**2).sum(-1) + H.potential(batch.x)
    return EnergyEstimate.from_samples(per_sample)


@dataclass
class GaussianOptConfig:
    restarts: int = 5
    seed: int = 0
    maxiter: int = 2000
    gtol: float = 1e-10
    init_scale: float = 1.0


@dataclass
class GaussianResult:
    state: GaussianState
    energy: float
    restarts: int
    seed: int
    restart_energies: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mu": self.state.mu.tolist(),
            "L": self.state.L.tolist(),
            "energy": self.energy,
            "restarts": self.restarts,
            "restart_energies": self.restart_energies,
            "seed": self.seed,
        }


def optimize_gaussian(H: QuarticHamiltonian, config: GaussianOptConfig | None = None) -> GaussianResult:
    """Minimize the analytic energy over ``(mu, L)`` with best-of-restarts.

    Each restart runs L-BFGS from a random start with exact (autograd)
    gradients of the closed form.
    """
    config = config or GaussianOptConfig()
    d = H.dim
    h, u = as_tensor(H.h_xx), as_tensor(H.u)
    rng = RngStream(config.seed)

    def fun(v):
        vt = torch.tensor(v, dtype=DTYPE, requires_grad=True)
        e = _vector_energy_t(vt, d, h, u, H.alpha)
        (g,) = torch.autograd.grad(e, vt)
        return e.item(), g.numpy()

    best, energies = None, []
    for k in range(config.restarts):
        r = rng.spawn(k)
        v0 = np.concatenate([
            config.init_scale * r.normal(d),
            0.3 * r.normal(d),
            0.1 * r.normal(d * (d - 1) // 2),
        ])
        res = scipy.optimize.minimize(
            fun, v0, jac=True, method="L-BFGS-B", options={"maxiter": config.maxiter, "gtol": config.gtol, "ftol": 1e-15}
        )
        e = float(res.fun)
        energies.append(e)
        if np.isfinite(e) and (best is None or e < best[0]):
            best = (e, res.x)
    if best is None:
        raise DivergedError("no restart produced a finite energy")
    return GaussianResult(GaussianState.from_vector(best[1]), best[0], config.restarts, config.seed, energies)


# -- one-mode parametric families (test and geometry oracles) -----------------

class GaussianFamily1D:
    """``N(mu, sigma^2)`` with ``theta = (mu, log sigma)``; Fisher ``diag(1/sigma^2, 2)``."""

    n_params = 2

    @staticmethod
    def log_prob(theta, x):
        mu, log_sigma = theta[0], theta[1]
        r = (x[..., 0] - mu) * torch.exp(-log_sigma)
        return -0.5 * r * r - log_sigma - 0.5 * math.log(2 * math.pi)

    def program(self, theta) -> DifferentiableProgram:
        return DifferentiableProgram(self.log_prob, theta)

    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return (theta[0] + math.exp(theta[1]) * rng.normal(count))[:, None]

    @staticmethod
    def fisher_exact(theta) -> np.ndarray:
        return np.diag([math.exp(-2 * theta[1]), 2.0])


class SqueezedFamily:
    """Born density of ``(a/pi)^{1/4} exp(-a x^2/2)`` with ``theta = (log a,)``.

    Fisher information ``1/2``; the real-part metric is therefore ``1/8``.
    """

    n_params = 1

    @staticmethod
    def log_prob(theta, x):
        log_a = theta[0]
        return 0.5 * (log_a - math.log(math.pi)) - torch.exp(log_a) * x[..., 0] ** 2

    def program(self, theta) -> DifferentiableProgram:
        return DifferentiableProgram(self.log_prob, theta)

    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray:
        a = math.exp(float(np.asarray(theta).reshape(-1)[0]))
        return (rng.normal(count) / math.sqrt(2 * a))[:, None]

    @staticmethod
    def fisher_exact(theta) -> np.ndarray:
        return np.array([[0.5]])
