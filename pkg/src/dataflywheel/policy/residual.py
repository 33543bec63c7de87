"""Squashed-Gaussian residual actor producing per-step corrections in [-1, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import MLP, Tensor, load_checkpoint, save_checkpoint
from ..core import tensor as T
from ..core.nn import Params
from ..envs.catalog import TaskKind
from ..envs.planar import action_dim, obs_dim, obs_normalizer
from .base import OBS_LAYOUT_VERSION

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ResidualPolicy:
    task: TaskKind
    net: MLP
    obs_offset: np.ndarray = field(default=None)
    obs_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.obs_offset is None:
            self.obs_offset, self.obs_scale = obs_normalizer(self.task)

    @property
    def action_dim(self) -> int:
        return action_dim(self.task)

    @classmethod
    def create(cls, task: TaskKind, rng: np.random.Generator, hidden: tuple[int, ...] = (256, 256, 256)) -> "ResidualPolicy":
        sizes = [obs_dim(task), *hidden, 2 * action_dim(task)]
        # zero final layer: the untrained residual outputs a zero-mean correction
        return cls(task, MLP.create(sizes, rng, "relu", prefix="actor.", zero_last=True))

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self.obs_offset) / self.obs_scale

    def _heads(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ad = self.action_dim
        mu = out[..., :ad]
        log_std = np.clip(out[..., ad:], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def infer(self, obs: np.ndarray, mode: str = "mean", rng: np.random.Generator | None = None) -> np.ndarray:
        mu, log_std = self._heads(self.net.infer(self.normalize(obs)))
        if mode == "mean":
            return np.tanh(mu)
        if mode != "sample":
            raise ValueError(f"unknown residual mode {mode!r}")
        if rng is None:
            raise ValueError("sample mode needs an rng")
        return np.tanh(mu + np.exp(log_std) * rng.standard_normal(mu.shape))

    def distribution(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(pre-squash mean, std) for raw observations."""
        mu, log_std = self._heads(self.net.infer(self.normalize(obs)))
        return mu, np.exp(log_std)

    def sample_logp(self, obs_n: np.ndarray, noise: np.ndarray, params: Params | None = None) -> tuple[Tensor, Tensor]:
        """Taped reparameterised sample and its log-density (tanh-corrected), shape (n, 1)."""
        out = self.net(obs_n, params)
        ad = self.action_dim
        mu = T.take_cols(out, slice(0, ad))
        log_std = T.clip(T.take_cols(out, slice(ad, 2 * ad)), LOG_STD_MIN, LOG_STD_MAX)
        std = T.exp(log_std)
        u = T.add(mu, T.mul(std, noise))
        a = T.tanh(u)
        gauss = T.sub(-0.5 * noise**2 - HALF_LOG_2PI, log_std)
        # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
        squash = T.mul(2.0, T.sub(T.sub(math.log(2.0), u), T.softplus(T.mul(-2.0, u))))
        logp = T.reduce_sum(T.sub(gauss, squash), axis=1)
        return a, logp

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"kind": "residual", "task": self.task.value, "sizes": self.net.sizes,
                "obs_layout": OBS_LAYOUT_VERSION, **(extra or {})}
        save_checkpoint(path, self.net.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ResidualPolicy":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "residual":
            raise ValueError(f"{path}: not a residual-policy checkpoint")
        return cls(TaskKind(meta["task"]), MLP(list(meta["sizes"]), "relu", tensors, prefix="actor."))
