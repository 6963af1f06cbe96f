"""RealNVP-style normalizing flows over a standard-normal base.

All maps act on tensors of shape ``(..., d)`` and take an explicit flat
parameter vector, so the same code serves batched training and per-sample
``torch.func`` transforms. The Born density of the wavefunction is the flow
density itself: ``psi = sqrt(p)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import autodiff
from .autodiff import DTYPE, DifferentiableProgram, as_tensor
from .batch import SampleBatch
from .errors import NonFiniteError
from .numerics import RngStream

CHECKPOINT_FORMAT = "flowvmc-flow"
CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowSpec:
    dim: int
    n_layers: int = 4
    hidden: int = 64
    depth: int = 2
    base_affine: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.n_layers < 1 or self.hidden < 1 or self.depth < 1:
            raise ValueError(f"invalid flow spec {self}")


def base_log_prob(z: torch.Tensor) -> torch.Tensor:
    d = z.shape[-1]
    return -0.5 * (z * z).sum(-1) - 0.5 * d * LOG_2PI


class ElementwiseAffine:
    """``x = z * exp(log_scale) + shift``, coordinate-wise."""

    def __init__(self, dim: int):
        self.dim = dim
        self.shapes = [("log_scale", (dim,)), ("shift", (dim,))]

    def init(self, rng: RngStream) -> list[np.ndarray]:
        return [np.zeros(self.dim), np.zeros(self.dim)]

    def forward(self, p, z):
        log_scale, shift = p
        return z * torch.exp(log_scale) + shift, log_scale.sum() * torch.ones_like(z[..., 0])

    def inverse(self, p, x):
        log_scale, shift = p
        return (x - shift) * torch.exp(-log_scale), -log_scale.sum() * torch.ones_like(x[..., 0])


class TriangularAffine:
    """``x = L z + shift`` with ``L`` lower triangular and ``diag L = exp(log_diag)``.

    The strictly lower entries are assembled from a fixed basis so the layer
    stays compatible with per-sample ``torch.func`` transforms.
    """

    def __init__(self, dim: int):
        self.dim = dim
        rows, cols = np.tril_indices(dim, -1)
        self.n_lower = rows.size
        basis = np.zeros((rows.size, dim, dim))
        basis[np.arange(rows.size), rows, cols] = 1.0
        self._basis = as_tensor(basis)
        self.shapes = [("log_diag", (dim,)), ("lower", (rows.size,)), ("shift", (dim,))]

    def init(self, rng: RngStream) -> list[np.ndarray]:
        return [np.zeros(self.dim), np.zeros(self.n_lower), np.zeros(self.dim)]

    def matrix(self, p) -> torch.Tensor:
        log_diag, lower, _ = p
        return torch.diag_embed(torch.exp(log_diag)) + torch.tensordot(lower, self._basis, 1)

    def forward(self, p, z):
        L = self.matrix(p)
        return z @ L.T + p[2], p[0].sum() * torch.ones_like(z[..., 0])

    def inverse(self, p, x):
        L = self.matrix(p)
        y = (x - p[2]).unsqueeze(-1)
        z = torch.linalg.solve_triangular(L, y, upper=False).squeeze(-1)
        return z, -p[0].sum() * torch.ones_like(x[..., 0])


class AffineCoupling:
    """Affine coupling: coordinates in ``cond`` pass through and condition the
    scale and shift applied to coordinates in ``active``.

    The log-scale is ``amplitude * tanh(net(x_cond))`` so it stays bounded for
    any finite parameters.
    """

    def __init__(self, dim: int, cond: list[int], hidden: int, depth: int):
        self.dim = dim
        self.cond = torch.tensor(cond, dtype=torch.long)
        self.active = torch.tensor([i for i in range(dim) if i not in cond], dtype=torch.long)
        order = torch.cat([self.cond, self.active])
        self.unperm = torch.argsort(order)
        n_in, n_out = len(self.cond), len(self.active)
        widths = [n_in] + [hidden] * depth + [n_out]
        self.n_linear = len(widths) - 1
        self.shapes = []
        for net in ("s", "t"):
            for k in range(self.n_linear):
                self.shapes.append((f"{net}_w{k}", (widths[k + 1], widths[k])))
                self.shapes.append((f"{net}_b{k}", (widths[k + 1],)))
        self.shapes.append(("amplitude", (n_out,)))

    def init(self, rng: RngStream) -> list[np.ndarray]:
        out = []
        for name, shape in self.shapes:
            if name == "amplitude":
                out.append(np.ones(shape))
            elif name.endswith(f"w{self.n_linear - 1}") or "_b" in name:
                # zero final layer: the coupling starts as the identity
                out.append(np.zeros(shape))
            else:
                out.append(rng.normal(shape) / math.sqrt(shape[1]))
        return out

    def _net(self, params, h):
        for k in range(self.n_linear):
            w, b = params[2 * k], params[2 * k + 1]
            h = h @ w.T + b
            if k < self.n_linear - 1:
                h = torch.tanh(h)
        return h

    def _scale_shift(self, p, xa):
        half = 2 * self.n_linear
        s = p[-1] * torch.tanh(self._net(p[:half], xa))
        t = self._net(p[half : 2 * half], xa)
        return s, t

    def forward(self, p, z):
        za, zb = z[..., self.cond], z[..., self.active]
        s, t = self._scale_shift(p, za)
        xb = zb * torch.exp(s) + t
        return torch.cat([za, xb], -1)[..., self.unperm], s.sum(-1)

    def inverse(self, p, x):
        xa, xb = x[..., self.cond], x[..., self.active]
        s, t = self._scale_shift(p, xa)
        zb = (xb - t) * torch.exp(-s)
        return torch.cat([xa, zb], -1)[..., self.unperm], -s.sum(-1)


def build_layers(spec: FlowSpec) -> list:
    d = spec.dim
    if d == 1:
        return [ElementwiseAffine(1) for _ in range(spec.n_layers)]
    layers = []
    for k in range(spec.n_layers):
        cond = [i for i in range(d) if i % 2 == k % 2]
        layers.append(AffineCoupling(d, cond, spec.hidden, spec.depth))
    # outermost: couplings act in whitened coordinates
    if spec.base_affine:
        layers.append(TriangularAffine(d))
    return layers


class FlowModel:
    """Normalizing flow ``x = f_theta(z)``, ``z ~ N(0, I_d)``."""

    symmetrized = False

    def __init__(self, spec: FlowSpec, theta=None, rng: RngStream | None = None, layers: list | None = None):
        self.spec = spec
        self.layers = layers if layers is not None else build_layers(spec)
        self._slices = []
        offset = 0
        for layer in self.layers:
            entries = []
            for _, shape in layer.shapes:
                size = int(np.prod(shape))
                entries.append((offset, size, shape))
                offset += size
            self._slices.append(entries)
        self.n_params = offset
        self.piece_sizes = tuple(n for entries in self._slices for _, n, _ in entries)
        self._piece_index = []
        i = 0
        for entries in self._slices:
            self._piece_index.append(list(range(i, i + len(entries))))
            i += len(entries)
        if theta is None:
            rng = rng if rng is not None else RngStream(0)
            parts = [a.reshape(-1) for layer in self.layers for a in layer.init(rng)]
            theta = np.concatenate(parts) if parts else np.zeros(0)
        self.theta = as_tensor(theta).detach().clone()
        if self.theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {tuple(self.theta.shape)}")

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def flow_piece_sizes(self) -> tuple[int, ...]:
        return self.piece_sizes

    def with_theta(self, theta) -> "FlowModel":
        return FlowModel(self.spec, theta, layers=self.layers)

    def randomized(self, rng: RngStream, scale: float = 0.3) -> "FlowModel":
        """Copy with every parameter perturbed by ``scale * N(0, 1)``."""
        noise = as_tensor(rng.normal(self.n_params))
        return self.with_theta(self.theta + scale * noise)

    def layer_params(self, k: int, theta: torch.Tensor | None = None) -> list[torch.Tensor]:
        """Parameter tensors of layer ``k``; ``theta`` may be flat or split into pieces."""
        theta = self.theta if theta is None else theta
        if isinstance(theta, (tuple, list)):
            return [theta[i].reshape(shape) for i, (_, _, shape) in zip(self._piece_index[k], self._slices[k])]
        return [theta[o : o + n].reshape(shape) for o, n, shape in self._slices[k]]

    def with_layer_params(self, k: int, arrays) -> "FlowModel":
        """Copy with the parameters of layer ``k`` replaced."""
        theta = self.theta.clone()
        for (o, n, shape), a in zip(self._slices[k], arrays):
            a = as_tensor(np.asarray(a, dtype=np.float64))
            if tuple(a.shape) != tuple(shape):
                raise ValueError(f"layer {k}: expected shape {shape}, got {tuple(a.shape)}")
            theta[o : o + n] = a.reshape(-1)
        return self.with_theta(theta)

    # -- maps --------------------------------------------------------------
    def forward(self, z, theta=None):
        """Push base points through the flow; returns ``(x, log|det J_f(z)|)``."""
        x = as_tensor(z)
        logdet = torch.zeros(x.shape[:-1], dtype=DTYPE)
        for k, layer in enumerate(self.layers):
            x, ld = layer.forward(self.layer_params(k, theta), x)
            logdet = logdet + ld
        return x, logdet

    def inverse(self, x, theta=None):
        """Pull data points back to the base; returns ``(z, log|det J_{f^-1}(x)|)``."""
        z = as_tensor(x)
        logdet = torch.zeros(z.shape[:-1], dtype=DTYPE)
        for k in reversed(range(len(self.layers))):
            z, ld = self.layers[k].inverse(self.layer_params(k, theta), z)
            logdet = logdet + ld
        return z, logdet

    def log_prob(self, x, theta=None) -> torch.Tensor:
        z, logdet = self.inverse(x, theta)
        return base_log_prob(z) + logdet

    def log_psi(self, x, theta=None) -> torch.Tensor:
        return 0.5 * self.log_prob(x, theta)

    def push(self, z, signs=None, theta=None) -> torch.Tensor:
        """Differentiable sample map from base draws (``signs`` is ignored)."""
        return self.forward(z, theta)[0]

    # -- sampling / derivative data ---------------------------------------
    def draw_base(self, count: int, rng: RngStream):
        if count < 1:
            raise ValueError("count must be >= 1")
        return rng.normal((count, self.dim)), None

    def sample(self, count: int, rng: RngStream, input_grad: bool = False, score: bool = False) -> SampleBatch:
        z, signs = self.draw_base(count, rng)
        with torch.no_grad():
            x = self.push(as_tensor(z), None if signs is None else as_tensor(signs))
            lp = self.log_prob(x)
        x_np = _checked(x, "samples")
        batch = SampleBatch(x_np, _checked(lp, "log density"))
        return self.annotate(batch, input_grad=input_grad, score=score)

    def annotate(self, batch: SampleBatch, input_grad: bool = True, score: bool = False) -> SampleBatch:
        prog = self.program()
        fields = {}
        if input_grad:
            fields["input_grad"] = autodiff.input_gradients(prog, batch.x)
        if score:
            fields["score"] = autodiff.param_gradients(prog, batch.x)
        return batch.with_(**fields) if fields else batch

    def program(self) -> DifferentiableProgram:
        """``(theta, x) -> log p_theta(x)`` for a single point."""
        return DifferentiableProgram(lambda th, x: self.log_prob(x, th), self.theta, self.flow_piece_sizes)

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "spec": asdict(self.spec),
            "symmetrized": self.symmetrized,
            "theta": [float(v) for v in self.theta.tolist()],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _checked(t: torch.Tensor, what: str) -> np.ndarray:
    out = t.detach().numpy()
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite {what}")
    return out


class SymmetrizedFlow:
    """Z2-symmetrized mixture ``rho(x) = (p(x) + p(-x)) / 2``."""

    symmetrized = True

    def __init__(self, flow: FlowModel):
        self.flow = flow

    @property
    def spec(self) -> FlowSpec:
        return self.flow.spec

    @property
    def dim(self) -> int:
        return self.flow.dim

    @property
    def n_params(self) -> int:
        return self.flow.n_params

    @property
    def theta(self) -> torch.Tensor:
        return self.flow.theta

    @property
    def flow_piece_sizes(self) -> tuple[int, ...]:
        return self.flow.piece_sizes

    def with_theta(self, theta) -> "SymmetrizedFlow":
        return SymmetrizedFlow(self.flow.with_theta(theta))

    def log_prob(self, x, theta=None) -> torch.Tensor:
        x = as_tensor(x)
        both = torch.stack([self.flow.log_prob(x, theta), self.flow.log_prob(-x, theta)], 0)
        return torch.logsumexp(both, 0) - math.log(2.0)

    def log_psi(self, x, theta=None) -> torch.Tensor:
        return 0.5 * self.log_prob(x, theta)

    def draw_base(self, count: int, rng: RngStream):
        z, _ = self.flow.draw_base(count, rng)
        return z, rng.signs(count)

    def push(self, z, signs=None, theta=None) -> torch.Tensor:
        x = self.flow.forward(z, theta)[0]
        return x if signs is None else x * as_tensor(signs)[..., None]

    sample = FlowModel.sample
    annotate = FlowModel.annotate
    program = FlowModel.program
    to_dict = FlowModel.to_dict
    save = FlowModel.save


def load_checkpoint(source) -> FlowModel | SymmetrizedFlow:
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a flow checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    model = FlowModel(FlowSpec(**data["spec"]), np.array(data["theta"], dtype=np.float64))
    return SymmetrizedFlow(model) if data["symmetrized"] else model
