"""Base policy: observation -> action chunk of H steps.

Two heads share one container: a deterministic regression MLP and a
low-dimensional diffusion denoiser sampled with DDIM.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import MLP, Tensor, load_checkpoint, save_checkpoint
from ..core import tensor as T
from ..core.nn import Params
from ..envs.catalog import TaskKind
from ..envs.planar import action_dim, obs_dim, obs_normalizer

HORIZON = 8
OBS_LAYOUT_VERSION = 1
VARIANTS = ("bc-mlp", "diffusion-mlp")
TRAIN_TIMESTEPS = 50
INFERENCE_STEPS = 16
TIME_FEATURES = 9


@functools.lru_cache(maxsize=8)
def _alpha_bar(n_steps: int, s: float) -> tuple[float, ...]:
    f = lambda t: math.cos((t / n_steps + s) / (1 + s) * math.pi / 2) ** 2
    betas = np.array([min(1 - f(i + 1) / f(i), 0.999) for i in range(n_steps)])
    return tuple(np.cumprod(1.0 - betas))


def cosine_alpha_bar(n_steps: int = TRAIN_TIMESTEPS, s: float = 0.008) -> np.ndarray:
    """Cumulative signal fraction for t = 0..n-1 (cosine schedule, betas capped at 0.999)."""
    return np.array(_alpha_bar(n_steps, s))


def ddim_timesteps(n_train: int = TRAIN_TIMESTEPS, n_infer: int = INFERENCE_STEPS) -> np.ndarray:
    return np.round(np.linspace(n_train - 1, 0, n_infer)).astype(int)


def time_features(t: np.ndarray, n_train: int = TRAIN_TIMESTEPS) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), TIME_FEATURES)."""
    ti = np.asarray(t).reshape(-1).astype(int)
    ab = cosine_alpha_bar(n_train)[ti][:, None]
    t = ti.astype(np.float64).reshape(-1, 1) / n_train
    freqs = 2.0 ** np.arange(TIME_FEATURES // 2) * math.pi
    # last feature is the signal-to-noise ratio sqrt(ab / (1 - ab))
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs), np.sqrt(ab / (1 - ab))], axis=1)


def denoiser_input(obs_n: np.ndarray, x_t: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Network input with the noisy chunk rescaled to unit noise.

    With x_t / sqrt(1 - ab) and the SNR feature the noise target is an affine
    function of the inputs, which keeps low-noise timesteps learnable.
    """
    t = np.asarray(t).reshape(-1).astype(int)
    ab = cosine_alpha_bar()[t][:, None]
    return np.concatenate([obs_n, x_t / np.sqrt(1 - ab), time_features(t)], axis=1)


@dataclass
class BasePolicy:
    variant: str
    task: TaskKind
    net: MLP
    horizon: int = HORIZON
    obs_offset: np.ndarray = field(default=None)
    obs_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown base variant {self.variant!r}")
        if self.obs_offset is None:
            self.obs_offset, self.obs_scale = obs_normalizer(self.task)

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.task)

    @property
    def action_dim(self) -> int:
        return action_dim(self.task)

    @property
    def chunk_size(self) -> int:
        return self.horizon * self.action_dim

    @classmethod
    def create(cls, task: TaskKind, rng: np.random.Generator, variant: str = "bc-mlp",
               hidden: tuple[int, ...] = (256, 256), horizon: int = HORIZON) -> "BasePolicy":
        od, ad = obs_dim(task), action_dim(task)
        out = horizon * ad
        if variant == "bc-mlp":
            sizes = [od, *hidden, out]
        else:
            sizes = [od + out + TIME_FEATURES, *hidden, out]
        return cls(variant, task, MLP.create(sizes, rng, "relu"), horizon)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs.shape[-1]} features, policy expects {self.obs_dim}")
        return (obs - self.obs_offset) / self.obs_scale

    # -- training-time forward (taped) --------------------------------------
    def predict_chunk(self, obs_n: np.ndarray, params: Params | None = None) -> Tensor:
        return self.net(obs_n, params)

    def predict_noise(self, obs_n: np.ndarray, x_t: np.ndarray, t: np.ndarray, params: Params | None = None) -> Tensor:
        return self.net(denoiser_input(obs_n, x_t, t), params)

    # -- inference -------------------------------------------------------------
    def infer(self, obs: np.ndarray, seed: int = 0) -> np.ndarray:
        """Action chunk of shape (H, action_dim) for one observation."""
        x = self.normalize(obs)[None, :]
        if self.variant == "bc-mlp":
            flat = self.net.infer(x)[0]
        else:
            flat = self.sample(x, np.random.default_rng(seed))[0]
        return flat.reshape(self.horizon, self.action_dim)

    def sample(self, obs_n: np.ndarray, rng: np.random.Generator, noise: np.ndarray | None = None) -> np.ndarray:
        """Deterministic DDIM (eta = 0) from seed-drawn initial noise."""
        ab = cosine_alpha_bar()
        n = obs_n.shape[0]
        x = rng.standard_normal((n, self.chunk_size)) if noise is None else noise
        steps = ddim_timesteps()
        x0 = x
        for k, t in enumerate(steps):
            eps = self.net.infer(denoiser_input(obs_n, x, np.full(n, t)))
            x0 = np.clip((x - math.sqrt(1 - ab[t]) * eps) / math.sqrt(ab[t]), -1.0, 1.0)
            eps = (x - math.sqrt(ab[t]) * x0) / math.sqrt(1 - ab[t])
            if k + 1 < len(steps):
                prev = ab[steps[k + 1]]
                x = math.sqrt(prev) * x0 + math.sqrt(1 - prev) * eps
        return x0

    # -- persistence ---------------------------------------------------------------
    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "kind": "base",
            "variant": self.variant,
            "task": self.task.value,
            "horizon": self.horizon,
            "sizes": self.net.sizes,
            "obs_layout": OBS_LAYOUT_VERSION,
            **(extra or {}),
        }
        save_checkpoint(path, self.net.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "BasePolicy":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "base":
            raise ValueError(f"{path}: not a base-policy checkpoint")
        if meta.get("obs_layout") != OBS_LAYOUT_VERSION:
            raise ValueError(f"{path}: observation layout {meta.get('obs_layout')} unsupported")
        net = MLP(list(meta["sizes"]), "relu", tensors)
        return cls(meta["variant"], TaskKind(meta["task"]), net, int(meta["horizon"]))


def loss_mse(pred: Tensor, target: np.ndarray) -> Tensor:
    return T.reduce_mean(T.square(T.sub(pred, target)))
