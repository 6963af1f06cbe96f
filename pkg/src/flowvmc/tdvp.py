"""Projected dynamics of the one-mode Gaussian family ``exp(-(a + i b) x^2 / 2)``.

Parameters are ``theta = (log a, b)``. Two real-time projections of the
oscillator dynamics are provided (a density-matrix projection that keeps the
ground state fixed, and a wavefunction projection that does not), plus the
imaginary-time natural-gradient flow with the analytic metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteError

Rhs = Callable[[np.ndarray], np.ndarray]
TRAJECTORY_COLUMNS = ("t", "log_a", "b", "energy")
DEFAULT_DT = 1e-3


def _ab(theta) -> tuple[float, float]:
    theta = np.asarray(theta, dtype=np.float64)
    return math.exp(theta[0]), float(theta[1])


def vn_rhs(theta) -> np.ndarray:
    """Density-matrix projection: ``(2 b, 1 - a^2 + b^2)``."""
    a, b = _ab(theta)
    return np.array([2.0 * b, 1.0 - a * a + b * b])


def tdse_rhs(theta) -> np.ndarray:
    """Wavefunction projection: ``(2 b, 1 - a^2 / 3 + b^2)``."""
    a, b = _ab(theta)
    return np.array([2.0 * b, 1.0 - a * a / 3.0 + b * b])


def energy(theta) -> float:
    """Oscillator expectation ``<H> = (1 + a^2 + b^2) / (4 a)``."""
    a, b = _ab(theta)
    return (1.0 + a * a + b * b) / (4.0 * a)


def loss(theta) -> float:
    return 0.5 * energy(theta)


def metric(theta) -> np.ndarray:
    """Real part of the quantum geometric tensor, ``diag(1/8, 1/(8 a^2))``."""
    a, _ = _ab(theta)
    return np.diag([0.125, 0.125 / (a * a)])


def loss_gradient(theta) -> np.ndarray:
    a, b = _ab(theta)
    return np.array([(a * a - 1.0 - b * b) / (8.0 * a), b / (4.0 * a)])


def imaginary_time_rhs(theta) -> np.ndarray:
    """``-g^{-1} grad loss`` = ``((1 + b^2 - a^2) / a, -2 a b)``."""
    return -np.linalg.solve(metric(theta), loss_gradient(theta))


@dataclass
class Trajectory:
    t: np.ndarray
    theta: np.ndarray
    energy: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [(float(t), float(th[0]), float(th[1]), float(e)) for t, th, e in zip(self.t, self.theta, self.energy)]

    def max_departure(self) -> float:
        """Largest ``|theta(t) - theta(0)|`` (max norm) along the trajectory."""
        return float(np.abs(self.theta - self.theta[0]).max()) if len(self) else 0.0


def _rk4_step(rhs: Rhs, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs: Rhs, theta0, t_end: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Classic fourth-order Runge-Kutta from ``t = 0`` to ``t_end``.

    The last step is shortened to land on ``t_end`` exactly. A non-finite
    state raises with the trajectory computed so far attached.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    y = np.asarray(theta0, dtype=np.float64).copy()
    if y.shape != (2,) or not np.all(np.isfinite(y)):
        raise ValueError("theta0 must be two finite numbers")
    n = int(math.ceil(t_end / dt - 1e-9))
    ts, ys = [0.0], [y]
    for k in range(n):
        t = ts[-1]
        h = min(dt, t_end - t)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                y = _rk4_step(rhs, y, h)
            except OverflowError:
                y = np.full(2, np.inf)
        if not np.all(np.isfinite(y)) or abs(y[0]) > 700:
            partial = _finish(np.array(ts), np.array(ys))
            raise NonFiniteError(f"trajectory blew up near t = {t:.6g}", partial=partial)
        ts.append(t_end if k == n - 1 else (k + 1) * dt)
        ys.append(y)
    return _finish(np.array(ts), np.array(ys))


def _finish(t: np.ndarray, theta: np.ndarray) -> Trajectory:
    return Trajectory(t, theta, np.array([energy(th) for th in theta]))


def imaginary_time_flow(theta0, t_end: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Natural-gradient descent of the loss in continuous time."""
    return integrate(imaginary_time_rhs, theta0, t_end, dt)
