from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import MissingFieldError


@dataclass
class SampleBatch:
    """Samples from a Born density together with per-sample derivative data.

    ``input_grad`` is the gradient of ``log rho`` in ``x`` and ``score`` its
    gradient in the parameters. Both are optional until an estimator needs them.
    """

    x: np.ndarray
    log_density: np.ndarray
    input_grad: np.ndarray | None = None
    score: np.ndarray | None = None
    local_energy: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.log_density = np.asarray(self.log_density, dtype=np.float64).reshape(-1)
        n = self.x.shape[0]
        for name in ("log_density", "input_grad", "score", "local_energy"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def with_(self, **fields) -> "SampleBatch":
        return replace(self, **fields)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingFieldError(f"sample batch lacks {', '.join(missing)}")


@dataclass(frozen=True)
class EnergyEstimate:
    mean: float
    stderr: float
    count: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "EnergyEstimate":
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        n = v.size
        if n == 0:
            raise ValueError("no samples")
        std = float(v.std(ddof=1)) if n > 1 else 0.0
        return cls(float(v.mean()), std / math.sqrt(n), n)

    def scaled(self, factor: float) -> "EnergyEstimate":
        return EnergyEstimate(self.mean * factor, self.stderr * abs(factor), self.count)
