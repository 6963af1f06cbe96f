"""Fisher information, the real quantum metric, and 1-D distance functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch

from . import autodiff
from .autodiff import DifferentiableProgram, as_tensor
from .batch import SampleBatch
from .errors import MissingFieldError
from .numerics import RngStream, trapezoid


@dataclass(frozen=True)
class InfoMatrix:
    matrix: np.ndarray
    count: int
    stderr: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())


def fisher_matrix(batch: SampleBatch) -> InfoMatrix:
    """Centered empirical covariance of the per-sample scores ``grad_theta log rho``."""
    if batch.score is None:
        raise MissingFieldError("sample batch lacks scores")
    s = batch.score - batch.score.mean(0)
    n = s.shape[0]
    m = s.T @ s / n
    m = 0.5 * (m + m.T)
    # per-entry standard error of the outer-product mean
    if s.shape[1] <= 64:
        outer = s[:, :, None] * s[:, None, :]
        err = outer.std(0, ddof=1) / math.sqrt(n)
    else:
        err = None
    return InfoMatrix(m, n, err)


def quantum_metric_real(batch: SampleBatch) -> InfoMatrix:
    """Real part of the quantum geometric tensor for a real wavefunction, ``I / 4``."""
    f = fisher_matrix(batch)
    return InfoMatrix(f.matrix / 4.0, f.count, None if f.stderr is None else f.stderr / 4.0)


def _check_normalized(w: np.ndarray, x: np.ndarray, what: str, tol: float = 1e-4) -> None:
    total = trapezoid(w, x)
    if abs(total - 1.0) > tol:
        raise ValueError(f"{what} integrates to {total:.6g}, not 1")


def fisher_rao_distance_1d(p: np.ndarray, q: np.ndarray, x: np.ndarray) -> float:
    """``arccos`` of the Bhattacharyya coefficient of two densities tabulated on ``x``."""
    p, q, x = (np.asarray(a, dtype=np.float64) for a in (p, q, x))
    _check_normalized(p, x, "p")
    _check_normalized(q, x, "q")
    bc = trapezoid(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)), x)
    return float(np.arccos(np.clip(bc, -1.0, 1.0)))


def fubini_study_distance_1d(psi: np.ndarray, phi: np.ndarray, x: np.ndarray) -> float:
    """``arccos |<psi|phi>|`` for real wavefunctions tabulated on ``x``."""
    psi, phi, x = (np.asarray(a, dtype=np.float64) for a in (psi, phi, x))
    _check_normalized(psi**2, x, "|psi|^2")
    _check_normalized(phi**2, x, "|phi|^2")
    overlap = abs(trapezoid(psi * phi, x))
    return float(np.arccos(np.clip(overlap, -1.0, 1.0)))


# -- parametric families -------------------------------------------------------

class ParametricFamily(Protocol):
    n_params: int

    def program(self, theta) -> DifferentiableProgram: ...
    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray: ...


def scored_batch(family: ParametricFamily, theta, count: int, rng: RngStream) -> SampleBatch:
    """Exact samples of ``p_theta`` with per-sample scores."""
    prog = family.program(theta)
    x = family.sample(theta, count, rng)
    return SampleBatch(x, prog.values(x), score=autodiff.param_gradients(prog, x))


def estimate_fisher(family: ParametricFamily, theta, count: int, rng: RngStream) -> InfoMatrix:
    return fisher_matrix(scored_batch(family, theta, count, rng))


class FlowFamily:
    """A flow architecture viewed as a family indexed by its parameters."""

    def __init__(self, model):
        self.model = model
        self.n_params = model.n_params

    def program(self, theta) -> DifferentiableProgram:
        m = self.model.with_theta(as_tensor(theta))
        return m.program()

    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray:
        return self.model.with_theta(as_tensor(theta)).sample(count, rng).x


class LinearReparametrization:
    """``p~_theta = p_{J theta}`` for an invertible matrix ``J``."""

    def __init__(self, family: ParametricFamily, jacobian: np.ndarray):
        self.family = family
        self.jacobian = np.asarray(jacobian, dtype=np.float64)
        if abs(np.linalg.det(self.jacobian)) < 1e-12:
            raise ValueError("reparametrization must be invertible")
        self.n_params = self.jacobian.shape[1]
        self._j = as_tensor(self.jacobian)

    def phi(self, theta) -> np.ndarray:
        return self.jacobian @ np.asarray(theta, dtype=np.float64)

    def program(self, theta) -> DifferentiableProgram:
        inner = self.family.program(self.phi(theta)).fn
        j = self._j
        return DifferentiableProgram(lambda th, x: inner(j @ th, x), theta)

    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray:
        return self.family.sample(self.phi(theta), count, rng)


class PushforwardFamily:
    """``f . p_theta`` for a fixed (parameter-independent) flow ``f``."""

    def __init__(self, family: ParametricFamily, fixed_flow):
        self.family = family
        self.flow = fixed_flow
        self.n_params = family.n_params

    def program(self, theta) -> DifferentiableProgram:
        inner = self.family.program(theta).fn
        flow = self.flow

        def fn(th, y):
            x, logdet = flow.inverse(y)
            return inner(th, x) + logdet

        return DifferentiableProgram(fn, theta)

    def sample(self, theta, count: int, rng: RngStream) -> np.ndarray:
        x = self.family.sample(theta, count, rng)
        with torch.no_grad():
            return self.flow.forward(as_tensor(x))[0].numpy()


def reparam_covariance_check(
    family: ParametricFamily,
    theta,
    jacobian: np.ndarray,
    samples: int,
    rng: RngStream,
    reference: np.ndarray | None = None,
) -> dict:
    """Compare the Fisher matrix of ``p_{J theta}`` against ``J^T I(J theta) J``.

    Both sides are estimated from independent sample streams unless an
    analytic ``reference`` for ``I(J theta)`` is supplied. The deviation is
    ``max |difference| / max |predicted|``.
    """
    rep = LinearReparametrization(family, jacobian)
    transformed = estimate_fisher(rep, theta, samples, rng.spawn(0)).matrix
    if reference is None:
        reference = estimate_fisher(family, rep.phi(theta), samples, rng.spawn(1)).matrix
    predicted = rep.jacobian.T @ reference @ rep.jacobian
    dev = np.abs(transformed - predicted).max() / max(np.abs(predicted).max(), 1e-300)
    return {"max_rel_deviation": float(dev), "transformed": transformed, "predicted": predicted}


def fisher_form_from_distance(family: ParametricFamily, theta, direction, eps: float, grid: np.ndarray) -> float:
    """``v^T I v`` recovered from ``4 d_FR(p_theta, p_{theta + eps v})^2 / eps^2`` in 1-D."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(direction, dtype=np.float64)
    x = np.asarray(grid, dtype=np.float64)
    p = np.exp(family.program(theta).values(x[:, None]))
    q = np.exp(family.program(theta + eps * v).values(x[:, None]))
    return 4.0 * fisher_rao_distance_1d(p, q, x) ** 2 / eps**2
