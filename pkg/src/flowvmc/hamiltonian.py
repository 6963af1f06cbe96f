"""Quartic bosonic Hamiltonians with unit kinetic term.

``H = p^2/2 + V(x)`` with ``V(x) = alpha * x^T h_xx x / 2 + (x*x)^T u (x*x) / 8``.
The quartic coefficient ``1/8`` is ``3/4!`` from the interaction tensor
``lambda_ijkl = 3 delta_ij delta_kl u_ik``; the rank-4 tensor is never stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .autodiff import as_tensor
from .errors import DomainError
from .numerics import RngStream, cholesky, haar_orthogonal, is_symmetric

EIGEN_RANGE = (0.1, 2.0)
HAMILTONIAN_FORMAT = "flowvmc-hamiltonian"


@dataclass(frozen=True)
class QuarticHamiltonian:
    h_xx: np.ndarray
    u: np.ndarray
    alpha: float = 1.0
    seed: int | None = None
    _torch: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        h = np.array(self.h_xx, dtype=np.float64, ndmin=2)
        u = np.array(self.u, dtype=np.float64, ndmin=2)
        if h.shape != u.shape or h.shape[0] != h.shape[1]:
            raise ValueError("h_xx and u must be square matrices of equal size")
        if not is_symmetric(h):
            raise ValueError("h_xx must be symmetric")
        if not is_symmetric(u):
            raise ValueError("u must be symmetric")
        # u = 0 is admitted for the free (quadratic) cases
        if np.linalg.eigvalsh(u).min() < -1e-12 * max(1.0, np.abs(u).max()):
            raise ValueError("u must be positive semi-definite")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        h.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "h_xx", h)
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.h_xx.shape[0]

    @property
    def has_quartic(self) -> bool:
        return bool(np.any(self.u != 0))

    def quadratic_part(self, x: np.ndarray) -> np.ndarray:
        """``x^T h_xx x / 2`` without the adiabatic factor."""
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.h_xx, x)

    def quartic_part(self, x: np.ndarray) -> np.ndarray:
        x2 = np.asarray(x, dtype=np.float64) ** 2
        return 0.125 * np.einsum("...i,ij,...j->...", x2, self.u, x2)

    def potential(self, x) -> np.ndarray:
        """Potential energy at points ``x`` of shape ``(..., d)``."""
        return self.alpha * self.quadratic_part(x) + self.quartic_part(x)

    def potential_t(self, x: torch.Tensor) -> torch.Tensor:
        if "h" not in self._torch:
            self._torch["h"] = as_tensor(self.h_xx)
            self._torch["u"] = as_tensor(self.u)
        h, u = self._torch["h"], self._torch["u"]
        x2 = x * x
        return 0.5 * self.alpha * ((x @ h) * x).sum(-1) + 0.125 * ((x2 @ u) * x2).sum(-1)

    def with_alpha(self, alpha: float) -> "QuarticHamiltonian":
        return replace(self, alpha=float(alpha))

    def to_dict(self) -> dict:
        return {
            "format": HAMILTONIAN_FORMAT,
            "d": self.dim,
            "h_xx": self.h_xx.tolist(),
            "u": self.u.tolist(),
            "alpha": self.alpha,
            "seed": self.seed,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, data: dict) -> "QuarticHamiltonian":
        if data.get("format", HAMILTONIAN_FORMAT) != HAMILTONIAN_FORMAT:
            raise ValueError("not a Hamiltonian file")
        h = cls(np.array(data["h_xx"]), np.array(data["u"]), data.get("alpha", 1.0), data.get("seed"))
        if h.dim != data["d"]:
            raise ValueError("dimension mismatch in Hamiltonian file")
        return h

    @classmethod
    def load(cls, path) -> "QuarticHamiltonian":
        return cls.from_dict(json.loads(Path(path).read_text()))


def potential(H: QuarticHamiltonian, x) -> np.ndarray:
    return H.potential(x)


def set_adiabatic_alpha(H: QuarticHamiltonian, alpha: float) -> QuarticHamiltonian:
    return H.with_alpha(alpha)


def oscillator(d: int = 1) -> QuarticHamiltonian:
    """``H = (p^2 + x^2) / 2`` in ``d`` modes; ground energy ``d / 2``."""
    return QuarticHamiltonian(np.eye(d), np.zeros((d, d)))


def _random_spd(d: int, rng: RngStream) -> np.ndarray:
    eig = rng.uniform(*EIGEN_RANGE, size=d)
    q = haar_orthogonal(d, rng)
    m = (q * eig) @ q.T
    return 0.5 * (m + m.T)


def random_hamiltonian(d: int, rng: RngStream | int) -> QuarticHamiltonian:
    """Random instance: ``u`` SPD and ``h_xx`` negative definite, both with
    spectra drawn uniformly from ``[0.1, 2]`` (magnitudes) and Haar eigenvectors."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    seed = None
    if not isinstance(rng, RngStream):
        seed = int(rng)
        rng = RngStream(seed)
    else:
        seed = rng.seed
    u = _random_spd(d, rng)
    h_xx = -_random_spd(d, rng)
    cholesky(u)
    cholesky(-h_xx)
    return QuarticHamiltonian(h_xx, u, 1.0, seed)


@dataclass(frozen=True)
class Quadratic1D:
    """``H = (h_xx x^2 + 2 h_xp x p + h_pp p^2) / 2`` in one mode."""

    h_xx: float
    h_xp: float
    h_pp: float

    @property
    def discriminant(self) -> float:
        return self.h_xx * self.h_pp - self.h_xp**2


def quadratic1d_ground(q: Quadratic1D) -> tuple[float, float]:
    """Parameters ``(a, b)`` of the ground state ``exp(-(a + i b) x^2 / 2)``."""
    if q.h_pp <= 0 or q.discriminant <= 0:
        raise DomainError("need h_pp > 0 and h_xx h_pp - h_xp^2 > 0")
    return math.sqrt(q.discriminant) / q.h_pp, q.h_xp / q.h_pp
