"""Per-sample first derivatives of scalar programs.

A program is a pure function ``fn(theta, x) -> scalar`` of a flat parameter
vector and a single point. Derivatives come from reverse-mode accumulation in
``torch.func``; batches are handled by ``vmap`` so every sample keeps its own
gradient (the Fisher matrix needs the individual outer products).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch.func import grad, vmap

from .errors import NonFiniteError

DTYPE = torch.float64
FD_REL_STEP = 1e-5


def as_tensor(a) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(DTYPE)
    arr = np.asarray(a, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr)


def _finite(t: torch.Tensor, what: str) -> np.ndarray:
    out = t.detach().cpu().numpy()
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite {what}")
    return out


@dataclass
class DifferentiableProgram:
    """Scalar program with its current parameter vector."""

    fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    theta: torch.Tensor
    # when set, ``fn`` receives ``theta`` split into pieces of these sizes;
    # differentiating pieces avoids scattering into the full vector per slice
    sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        self.theta = as_tensor(self.theta).detach()

    def params(self):
        return tuple(torch.split(self.theta, list(self.sizes))) if self.sizes else self.theta

    def merge(self, g) -> torch.Tensor:
        return torch.cat(g, -1) if self.sizes else g

    @property
    def n_params(self) -> int:
        return int(self.theta.numel())

    def value(self, x) -> float:
        return float(_finite(self.fn(self.params(), as_tensor(x)), "program value"))

    def values(self, xs, chunk_size: int | None = 4096) -> np.ndarray:
        return _finite(vmap(self.fn, in_dims=(None, 0), chunk_size=chunk_size)(self.params(), as_tensor(xs)), "program values")


def param_gradient(prog: DifferentiableProgram, x) -> np.ndarray:
    """Gradient of ``prog`` with respect to its parameters at point ``x``."""
    g = grad(prog.fn, argnums=0)(prog.params(), as_tensor(x))
    return _finite(prog.merge(g), "parameter gradient")


def input_gradient(prog: DifferentiableProgram, x) -> np.ndarray:
    """Gradient of ``prog`` with respect to the point ``x``."""
    return _finite(grad(prog.fn, argnums=1)(prog.params(), as_tensor(x)), "input gradient")


def param_gradients(prog: DifferentiableProgram, xs, chunk_size: int | None = 1024) -> np.ndarray:
    """Per-sample parameter gradients, shape ``(N, n)``."""
    g = vmap(grad(prog.fn, argnums=0), in_dims=(None, 0), chunk_size=chunk_size)
    return _finite(prog.merge(g(prog.params(), as_tensor(xs))), "parameter gradients")


def input_gradients(prog: DifferentiableProgram, xs, chunk_size: int | None = 4096) -> np.ndarray:
    """Per-sample input gradients, shape ``(N, d)``."""
    g = vmap(grad(prog.fn, argnums=1), in_dims=(None, 0), chunk_size=chunk_size)
    return _finite(g(prog.params(), as_tensor(xs)), "input gradients")


def central_difference(f: Callable[[np.ndarray], float], v: np.ndarray, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``v``.

    Step per coordinate is ``rel_step * (1 + |v_i|)``.
    """
    v = np.array(v, dtype=np.float64, copy=True).reshape(-1)
    out = np.empty_like(v)
    for i in range(v.size):
        h = rel_step * (1.0 + abs(v[i]))
        orig = v[i]
        v[i] = orig + h
        fp = f(v)
        v[i] = orig - h
        fm = f(v)
        v[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


def fd_param_gradient(prog: DifferentiableProgram, x, rel_step: float = FD_REL_STEP) -> np.ndarray:
    xt = as_tensor(x)
    with torch.no_grad():
        def f(th):
            th = as_tensor(th)
            return float(prog.fn(tuple(torch.split(th, list(prog.sizes))) if prog.sizes else th, xt))

        return central_difference(f, prog.theta.numpy(), rel_step)


def fd_input_gradient(prog: DifferentiableProgram, x, rel_step: float = FD_REL_STEP) -> np.ndarray:
    with torch.no_grad():
        return central_difference(lambda xv: float(prog.fn(prog.params(), as_tensor(xv))), np.asarray(x, dtype=np.float64), rel_step)
