"""Multilayer perceptrons over the tape tensors."""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = dict[str, Tensor]

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(1, fan_out))
    return w, b


@dataclass
class MLP:
    """Fully connected network; parameters live in ``params`` and are replaced on update."""

    sizes: list[int]
    activation: str = "relu"
    params: Params = field(default_factory=dict)
    prefix: str = ""

    @classmethod
    def create(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        activation: str = "relu",
        prefix: str = "",
        zero_last: bool = False,
    ) -> "MLP":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        params: Params = {}
        n = len(sizes) - 1
        for i in range(n):
            w, b = linear_init(rng, sizes[i], sizes[i + 1])
            if zero_last and i == n - 1:
                w = np.zeros_like(w)
                b = np.zeros_like(b)
            params[f"{prefix}l{i}.w"] = Tensor(w, requires_grad=True)
            params[f"{prefix}l{i}.b"] = Tensor(b, requires_grad=True)
        return cls(list(sizes), activation, params, prefix)

    def names(self) -> list[str]:
        return list(self.params)

    def __call__(self, x, params: Params | None = None) -> Tensor:
        p = self.params if params is None else params
        act = ACTIVATIONS[self.activation]
        h = T.as_tensor(x)
        if h.data.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise T.ShapeError(f"MLP expects (batch, {self.sizes[0]}), got {h.shape}")
        n = len(self.sizes) - 1
        for i in range(n):
            h = T.add(T.matmul(h, p[f"{self.prefix}l{i}.w"]), p[f"{self.prefix}l{i}.b"])
            if i < n - 1:
                h = act(h)
        return h

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward on raw arrays (fast path for rollouts)."""
        h = np.asarray(x, dtype=np.float64)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        n = len(self.sizes) - 1
        for i in range(n):
            h = h @ self.params[f"{self.prefix}l{i}.w"].data + self.params[f"{self.prefix}l{i}.b"].data
            if i < n - 1:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
        return h[0] if squeeze else h

    def copy(self) -> "MLP":
        return MLP(list(self.sizes), self.activation, dict(self.params), self.prefix)


def params_digest(params: Params) -> str:
    """Stable hash of parameter names, shapes and exact bits."""
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
