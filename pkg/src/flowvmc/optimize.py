"""Training loop: damped natural gradient fed into Adam with cosine decay."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import autodiff
from .autodiff import DTYPE, as_tensor
from .batch import EnergyEstimate
from .errors import DivergedError, NonFiniteError
from .estimators import adjoint_loss_t
from .flow import ElementwiseAffine, SymmetrizedFlow, TriangularAffine
from .gaussian import GaussianOptConfig, optimize_gaussian
from .geometry import fisher_matrix
from .hamiltonian import QuarticHamiltonian
from .numerics import RngStream, solve_damped_gram, trapezoid

HISTORY_COLUMNS = ("iter", "energy", "stderr", "alpha", "lr", "grad_norm", "seconds")


@dataclass
class OptimizerConfig:
    batch_size: int = 1024
    iterations: int = 2000
    lr: float = 0.01
    damping: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_adam: bool = True
    use_natural_gradient: bool = True
    # 0 keeps the Hamiltonian's own alpha for the whole run
    adiabatic_k: float = 0.0
    reverse_adiabatic: bool = False
    # initial weight of the flow-distance penalty, cosine-annealed to 0
    flow_distance_weight: float = 0.0
    independent_fisher_batch: bool = False
    # scores for the metric come from this many samples (0 uses the whole batch)
    fisher_samples: int = 0
    # start from the optimized Gaussian of the same Hamiltonian
    gaussian_warm_start: bool = False
    clip_norm: float = 100.0
    final_samples: int = 8192
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_window: int = 50

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam constants")
        if self.damping < 0 or (self.use_natural_gradient and self.damping == 0):
            raise ValueError("damping must be positive when the natural gradient is on")
        if self.adiabatic_k < 0:
            raise ValueError("adiabatic_k must be >= 0")
        if self.flow_distance_weight < 0:
            raise ValueError("flow_distance_weight must be >= 0")
        if self.fisher_samples < 0 or self.fisher_samples == 1:
            raise ValueError("fisher_samples must be 0 or >= 2")
        if self.clip_norm <= 0 or self.final_samples < 2:
            raise ValueError("clip_norm and final_samples must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunHistory:
    energy: list[float] = field(default_factory=list)
    stderr: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.energy)

    def append(self, energy: EnergyEstimate, alpha: float, lr: float, grad_norm: float, seconds: float) -> None:
        self.energy.append(energy.mean)
        self.stderr.append(energy.stderr)
        self.alpha.append(alpha)
        self.lr.append(lr)
        self.grad_norm.append(grad_norm)
        self.seconds.append(seconds)

    def rows(self, wall_clock: bool = True) -> list[tuple]:
        return [
            (i, self.energy[i], self.stderr[i], self.alpha[i], self.lr[i], self.grad_norm[i],
             self.seconds[i] if wall_clock else 0.0)
            for i in range(len(self))
        ]


@dataclass
class TrainResult:
    model: object
    history: RunHistory
    energy: EnergyEstimate
    seconds: float
    exact_energy: float | None = None


def cosine_lr(t: float, T: float, lr0: float) -> float:
    if T <= 0:
        return lr0
    if not 0 <= t <= T:
        raise ValueError("t must lie in [0, T]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


def adiabatic_alpha(t_frac: float, k: float) -> float:
    """``(exp(-k t) - exp(-k)) / (1 - exp(-k))``; equals 1 at ``t = 0`` and 0 at ``t = 1``."""
    if k <= 0:
        raise ValueError("k must be positive")
    if not 0.0 <= t_frac <= 1.0:
        raise ValueError("t_frac must lie in [0, 1]")
    return (math.exp(-k * t_frac) - math.exp(-k)) / (-math.expm1(-k))


def schedule_alpha(config: OptimizerConfig, t: int, base_alpha: float) -> float:
    if config.adiabatic_k == 0 or config.iterations == 0:
        return base_alpha
    a = adiabatic_alpha(t / config.iterations, config.adiabatic_k)
    return 1.0 - a if config.reverse_adiabatic else a


def natural_step(scores: np.ndarray, raw_grad: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``(I + gamma) dir = raw_grad`` with ``I`` the centered score covariance."""
    s = np.asarray(scores, dtype=np.float64)
    centered = s - s.mean(0)
    return solve_damped_gram(centered, raw_grad, gamma)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_update(state: AdamState, theta: np.ndarray, direction: np.ndarray, lr: float) -> np.ndarray:
    """Bias-corrected Adam step along ``direction``; mutates ``state``, returns new parameters."""
    d = np.asarray(direction, dtype=np.float64)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * d
    state.v = state.beta2 * state.v + (1 - state.beta2) * d * d
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return np.asarray(theta, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def flow_distance_penalty(z, x, weight: float):
    """``weight * mean |x - z|^2``; works on arrays and tensors."""
    if weight == 0:
        return 0.0
    diff = x - z
    return weight * (diff * diff).sum(-1).mean()


def pathwise_loss(model, H: QuarticHamiltonian, theta: torch.Tensor, z, signs=None):
    """Adjoint loss at reparameterized samples, differentiable in ``theta``.

    Returns ``(per_sample, x_unsigned, x)`` where ``per_sample`` holds
    ``|grad log rho|^2 / 16 + V / 2`` at each sample.
    """
    z = as_tensor(z)
    x0 = model.push(z, None, theta)
    x = x0 if signs is None else x0 * as_tensor(signs)[:, None]
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    lp = model.log_prob(x, theta)
    (g,) = torch.autograd.grad(lp.sum(), x, create_graph=True)
    return adjoint_loss_t(g, x, H), x0, x


def pathwise_gradient(model, H: QuarticHamiltonian, z, signs=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the batch-mean adjoint loss and the per-sample loss values."""
    theta = model.theta.clone().requires_grad_(True)
    per_sample, _, _ = pathwise_loss(model, H, theta, z, signs)
    (grad,) = torch.autograd.grad(per_sample.mean(), theta)
    return grad.numpy(), per_sample.detach().numpy()


def quadrature_energy_1d(model, H: QuarticHamiltonian, half_width: float = 15.0, points: int = 30001) -> float:
    """``<psi|H|psi>`` of a 1-D model by the trapezoid rule on a uniform grid."""
    if model.dim != 1:
        raise ValueError("quadrature energy is only available in one dimension")
    x = torch.linspace(-half_width, half_width, points, dtype=DTYPE)[:, None].requires_grad_(True)
    lp = model.log_prob(x)
    (g,) = torch.autograd.grad(lp.sum(), x)
    rho = torch.exp(lp).detach().numpy()
    xs = x.detach().numpy()[:, 0]
    mass = trapezoid(rho, xs)
    if abs(mass - 1.0) > 1e-6:
        raise NonFiniteError(f"density mass {mass:.8f} on the quadrature grid; widen the grid")
    integrand = rho * (0.125 * g.numpy()[:, 0] ** 2 + H.potential(xs[:, None]))
    return trapezoid(integrand, xs)


def warm_start(model, state):
    """Set the outermost affine layer so the (identity-coupled) flow density
    equals the Born density of a Gaussian state."""
    flow = model.flow if model.symmetrized else model
    if flow.dim != state.dim:
        raise ValueError("dimension mismatch")
    k = len(flow.layers) - 1
    layer = flow.layers[k]
    c = np.linalg.cholesky(state.covariance)
    if isinstance(layer, TriangularAffine):
        rows, cols = np.tril_indices(state.dim, -1)
        new = flow.with_layer_params(k, [np.log(np.diag(c)), c[rows, cols], state.mu])
    elif isinstance(layer, ElementwiseAffine) and state.dim == 1:
        new = flow.with_layer_params(k, [np.log(np.diag(c)), state.mu])
    else:
        raise ValueError("model has no outer affine layer to warm-start")
    return SymmetrizedFlow(new) if model.symmetrized else new


def _clip(v: np.ndarray, limit: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(v))
    if norm > limit:
        v = v * (limit / norm)
    return v, norm


def evaluate_energy(model, H: QuarticHamiltonian, count: int, rng: RngStream) -> EnergyEstimate:
    """Adjoint Monte Carlo estimate of ``<psi|H|psi>`` (twice the loss)."""
    z, signs = model.draw_base(count, rng)
    theta = model.theta.clone()
    per_sample, _, _ = pathwise_loss(model, H, theta, z, signs)
    values = 2.0 * per_sample.detach().numpy()
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("non-finite energy samples")
    return EnergyEstimate.from_samples(values)


def train(model, H: QuarticHamiltonian, config: OptimizerConfig | None = None, callback=None) -> TrainResult:
    """Minimize the adjoint loss of ``model`` (a flow or symmetrized flow) for ``H``.

    Every iteration draws its base samples from sub-stream ``t`` of the seed,
    so a run is reproducible from ``config.seed`` alone.
    """
    config = config or OptimizerConfig()
    if model.dim != H.dim:
        raise ValueError("model and Hamiltonian dimensions differ")
    # sub-stream 0 of the seed; other sub-streams are left to callers
    rng = RngStream(config.seed).spawn(0)
    if config.gaussian_warm_start:
        model = warm_start(model, optimize_gaussian(H, GaussianOptConfig(seed=config.seed)).state)
    theta = model.theta.numpy().copy()
    adam = AdamState.zeros(theta.size, config.beta1, config.beta2, config.eps)
    history = RunHistory()
    T = config.iterations
    start = time.perf_counter()
    threshold = None
    strikes = 0

    for t in range(T):
        step_rng = rng.spawn(t)
        alpha = schedule_alpha(config, t, H.alpha)
        Ht = H.with_alpha(alpha) if alpha != H.alpha else H
        current = model.with_theta(theta)
        z, signs = current.draw_base(config.batch_size, step_rng.spawn(0))

        th = torch.tensor(theta, dtype=DTYPE, requires_grad=True)
        per_sample, x0, x = pathwise_loss(current, Ht, th, z, signs)
        weight = config.flow_distance_weight * cosine_lr(t, T, 1.0)
        loss = per_sample.mean() + flow_distance_penalty(as_tensor(z), x0, weight)
        (grad_t,) = torch.autograd.grad(loss, th)
        raw = grad_t.numpy()
        values = 2.0 * per_sample.detach().numpy()
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(raw))):
            raise NonFiniteError(f"non-finite loss or gradient at iteration {t}", partial=history)
        energy = EnergyEstimate.from_samples(values)

        raw, norm = _clip(raw, config.clip_norm)
        direction = raw
        if config.use_natural_gradient:
            m = min(config.fisher_samples or config.batch_size, config.batch_size)
            if config.independent_fisher_batch:
                scores = current.sample(m, step_rng.spawn(1), score=True).score
            else:
                scores = autodiff.param_gradients(current.program(), x.detach().numpy()[:m])
            direction = natural_step(scores, raw, config.damping)

        lr = cosine_lr(t, T, config.lr)
        if config.use_adam:
            theta = adam_update(adam, theta, direction, lr)
        else:
            theta = theta - lr * direction
        history.append(energy, alpha, lr, norm, time.perf_counter() - start)
        if callback is not None:
            callback(t, energy)

        if threshold is None:
            threshold = config.divergence_factor * max(abs(energy.mean), 1.0)
        strikes = strikes + 1 if energy.mean > threshold else 0
        if strikes >= config.divergence_window:
            raise DivergedError(f"energy above {threshold:.4g} for {strikes} iterations", history=history)

    final = model.with_theta(theta)
    H_end = H.with_alpha(schedule_alpha(config, T, H.alpha)) if config.adiabatic_k else H
    estimate = evaluate_energy(final, H_end, config.final_samples, rng.spawn(T + 1))
    exact = quadrature_energy_1d(final, H_end) if final.dim == 1 else None
    return TrainResult(final, history, estimate, time.perf_counter() - start, exact)


def fisher_of_model(model, count: int, rng: RngStream):
    """Score-covariance estimate for a flow at its current parameters."""
    return fisher_matrix(model.sample(count, rng, score=True))
