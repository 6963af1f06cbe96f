"""Reference solutions and shape diagnostics for trained densities."""

from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
import torch

from .autodiff import as_tensor
from .hamiltonian import QuarticHamiltonian


def grid_ground_state(H: QuarticHamiltonian, points: int = 121, half_width: float = 8.0):
    """Lowest eigenpair of ``H`` by second-order finite differences on a box.

    Only ``d <= 2`` is supported. Returns ``(energy, grid_axis, psi)`` where
    ``psi`` has shape ``(points,) * d`` and unit L2 norm on the grid.
    """
    d = H.dim
    if d > 2:
        raise ValueError("grid diagonalization is limited to d <= 2")
    axis = np.linspace(-half_width, half_width, points)
    h = axis[1] - axis[0]
    lap1 = scipy.sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(points, points)) / h**2
    eye = scipy.sparse.identity(points)
    if d == 1:
        lap = lap1
        coords = axis[:, None]
    else:
        lap = scipy.sparse.kron(lap1, eye) + scipy.sparse.kron(eye, lap1)
        g1, g2 = np.meshgrid(axis, axis, indexing="ij")
        coords = np.stack([g1.ravel(), g2.ravel()], -1)
    op = (-0.5 * lap + scipy.sparse.diags(H.potential(coords))).tocsc()
    vals, vecs = scipy.sparse.linalg.eigsh(op, k=1, sigma=H.potential(coords).min() - 10.0, which="LM")
    psi = vecs[:, 0]
    psi = psi * np.sign(psi.sum()) / np.sqrt((psi**2).sum() * h**d)
    return float(vals[0]), axis, psi.reshape((points,) * d)


def principal_axis(x: np.ndarray) -> np.ndarray:
    """Top eigenvector of the uncentered second moment ``E[x x^T]``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, vecs = np.linalg.eigh(x.T @ x / x.shape[0])
    w = vecs[:, -1]
    return w * np.sign(w[np.argmax(np.abs(w))])


def mode_mass_ratio(x: np.ndarray, axis: np.ndarray | None = None) -> float:
    """Sample count on the positive side of ``axis`` over the negative side."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    w = principal_axis(x) if axis is None else np.asarray(axis, dtype=np.float64)
    proj = x @ w
    pos, neg = int((proj > 0).sum()), int((proj < 0).sum())
    return pos / max(neg, 1)


def line_profile(model, axis: np.ndarray, half_width: float, points: int = 401):
    """Density of ``model`` along the line ``s * axis``; returns ``(s, rho)``."""
    s = np.linspace(-half_width, half_width, points)
    x = s[:, None] * np.asarray(axis, dtype=np.float64)[None, :]
    with torch.no_grad():
        rho = torch.exp(model.log_prob(as_tensor(x))).numpy()
    return s, rho


def is_bimodal(s: np.ndarray, rho: np.ndarray, dip: float = 0.5) -> bool:
    """Two interior maxima on opposite sides of 0 with ``rho(0) <= dip * peak``."""
    rho = np.asarray(rho)
    interior = (rho[1:-1] > rho[:-2]) & (rho[1:-1] >= rho[2:])
    peaks = np.nonzero(interior)[0] + 1
    if not (np.any(s[peaks] < 0) and np.any(s[peaks] > 0)):
        return False
    centre = rho[np.argmin(np.abs(s))]
    return bool(centre <= dip * rho[peaks].max())
