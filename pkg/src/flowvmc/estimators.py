"""Energy estimators for real positive wavefunctions.

The objective is ``loss = <psi|H|psi> / 2``. Two unbiased per-sample
estimators are provided:

* canonical: ``l(x) / 2`` with the local energy ``l = (H psi) / psi``
  (needs second derivatives, zero variance at eigenstates);
* adjoint: ``|grad log rho|^2 / 16 + V / 2`` (first derivatives only,
  obtained by integrating the kinetic term by parts).
"""

from __future__ import annotations

import math
from typing import Callable, Protocol

import numpy as np
import torch

from .autodiff import as_tensor
from .batch import EnergyEstimate, SampleBatch
from .errors import NonFiniteError
from .gaussian import squeezed_state
from .hamiltonian import QuarticHamiltonian, oscillator

__all__ = [
    "SampleBatch",
    "EnergyEstimate",
    "PsiEvaluator",
    "FiniteDifferencePsi",
    "adjoint_per_sample",
    "adjoint_loss",
    "canonical_local_energy",
    "energy_from_local",
    "reinforce_per_sample",
    "reinforce_gradient",
    "optimal_baseline",
    "total_variance",
    "estimator_variance_sweep",
]


class PsiEvaluator(Protocol):
    def log_psi(self, x) -> np.ndarray: ...
    def grad_log_psi(self, x) -> np.ndarray: ...
    def laplacian_log_psi(self, x) -> np.ndarray: ...


class FiniteDifferencePsi:
    """Derivatives of ``log psi`` by central differences, step ``h (1 + |x_i|)``.

    ``log_psi`` maps an ``(N, d)`` array to ``(N,)``.
    """

    def __init__(self, log_psi: Callable[[np.ndarray], np.ndarray], step: float = 1e-4):
        self._f = log_psi
        self.step = step

    @classmethod
    def for_model(cls, model, step: float = 1e-4) -> "FiniteDifferencePsi":
        """Wrap a flow (or symmetrized flow) ``log_psi``."""

        def f(x):
            with torch.no_grad():
                return model.log_psi(as_tensor(x)).numpy()

        return cls(f, step)

    def log_psi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.asarray(self._f(x), dtype=np.float64).reshape(-1)

    def _shifted(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = self.step * (1.0 + np.abs(x))
        f0 = self.log_psi(x)
        fp = np.empty_like(x)
        fm = np.empty_like(x)
        for i in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[i] = 1.0
            fp[:, i] = self.log_psi(x + h[:, i : i + 1] * e)
            fm[:, i] = self.log_psi(x - h[:, i : i + 1] * e)
        return f0, fp, fm, h

    def grad_log_psi(self, x) -> np.ndarray:
        _, fp, fm, h = self._shifted(x)
        return (fp - fm) / (2.0 * h)

    def laplacian_log_psi(self, x) -> np.ndarray:
        f0, fp, fm, h = self._shifted(x)
        return ((fp - 2.0 * f0[:, None] + fm) / h**2).sum(-1)


def adjoint_per_sample(batch: SampleBatch, H: QuarticHamiltonian) -> np.ndarray:
    batch.require("input_grad")
    return (batch.input_grad**2).sum(-1) / 16.0 + 0.5 * H.potential(batch.x)


def adjoint_loss(batch: SampleBatch, H: QuarticHamiltonian) -> EnergyEstimate:
    """Estimate of ``<psi|H|psi>/2`` from first derivatives of ``log rho``."""
    return EnergyEstimate.from_samples(adjoint_per_sample(batch, H))


def adjoint_loss_t(grad_log_rho: torch.Tensor, x: torch.Tensor, H: QuarticHamiltonian) -> torch.Tensor:
    """Per-sample adjoint estimator on tensors (differentiable)."""
    return (grad_log_rho**2).sum(-1) / 16.0 + 0.5 * H.potential_t(x)


def canonical_local_energy(psi: PsiEvaluator, H: QuarticHamiltonian, x) -> np.ndarray:
    """``l(x) = -(lap log psi + |grad log psi|^2) / 2 + V(x)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.atleast_2d(psi.grad_log_psi(x))
    lap = np.asarray(psi.laplacian_log_psi(x)).reshape(-1)
    # potential and gradient term first: they cancel exactly on Gaussian eigenstates
    out = (H.potential(x) - 0.5 * (g**2).sum(-1)) - 0.5 * lap
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite local energy; use the adjoint estimator")
    return out


def energy_from_local(batch: SampleBatch) -> EnergyEstimate:
    """Mean local energy, i.e. ``<psi|H|psi>`` (twice the loss)."""
    batch.require("local_energy")
    return EnergyEstimate.from_samples(batch.local_energy)


def reinforce_per_sample(batch: SampleBatch, baseline: float) -> np.ndarray:
    """Rows ``(l(x) - B) * score(x) / 2``; the half converts the density score
    into the wavefunction score."""
    batch.require("local_energy", "score")
    return (batch.local_energy - baseline)[:, None] * (0.5 * batch.score)


def reinforce_gradient(batch: SampleBatch, baseline: float = 0.0) -> np.ndarray:
    """Log-derivative (score-function) estimate of the loss gradient."""
    return reinforce_per_sample(batch, baseline).mean(0)


def optimal_baseline(batch: SampleBatch) -> float:
    """Scalar baseline ``mean(l)``, the approximate minimizer of the total variance."""
    batch.require("local_energy")
    return float(batch.local_energy.mean())


def total_variance(batch: SampleBatch, baseline: float) -> float:
    """Trace of the covariance of the per-sample REINFORCE gradient."""
    return float(reinforce_per_sample(batch, baseline).var(0, ddof=1).sum())


def _variance_with_stderr(v: np.ndarray) -> tuple[float, float]:
    n = v.size
    c = v - v.mean()
    var = float((c**2).sum() / (n - 1))
    m4 = float((c**4).mean())
    return var, math.sqrt(max(m4 - var**2, 0.0) / n)


def estimator_variance_sweep(a_grid, samples: int, rng) -> list[dict]:
    """Per-sample variances of the canonical and adjoint loss estimators for
    the oscillator on the squeezed family ``exp(-a x^2 / 2)``.

    Closed forms: ``(1-a^2)^2 / (32 a^2)`` and ``(1+a^2)^2 / (32 a^2)``.
    """
    H = oscillator(1)
    rows = []
    for a in a_grid:
        a = float(a)
        if a <= 0:
            raise ValueError("a must be positive")
        state = squeezed_state(a)
        batch = state.sample(samples, rng)
        can = 0.5 * canonical_local_energy(state, H, batch.x)
        adj = adjoint_per_sample(batch, H)
        vc, sc = _variance_with_stderr(can)
        va, sa = _variance_with_stderr(adj)
        rows.append({"a": a, "var_canonical": vc, "var_adjoint": va, "stderr_canonical": sc, "stderr_adjoint": sa})
    return rows


def variance_closed_forms(a: float) -> tuple[float, float]:
    """Exact per-sample variances ``((1-a^2)^2, (1+a^2)^2) / (32 a^2)``."""
    return (1 - a * a) ** 2 / (32 * a * a), (1 + a * a) ** 2 / (32 * a * a)
