"""Imitation training of the base policy (chunk regression or noise prediction)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import AdamState, Tape, adam_step, cosine_lr
from .core import tensor as T
from .datasets import Dataset
from .policy.base import TRAIN_TIMESTEPS, BasePolicy, cosine_alpha_bar, loss_mse


@dataclass
class ILConfig:
    variant: str = "bc-mlp"
    steps: int = 2000
    batch_size: int = 256
    lr: float = 3e-4
    weight_decay: float = 1e-6
    hidden: tuple[int, ...] = (256, 256)
    val_fraction: float = 0.1
    eval_every: int = 100
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainLog:
    train_loss: list[tuple[int, float]] = field(default_factory=list)
    val_loss: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    best_val: float = math.inf
    initial_loss: float = math.nan
    final_loss: float = math.nan


def chunk_targets(dataset: Dataset, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """(observations, flattened chunks); short end-of-episode chunks repeat their last action."""
    obs, ys = [], []
    for traj in dataset.trajectories:
        for tr in traj.transitions:
            c = tr.chunk
            if len(c) < horizon:
                c = np.concatenate([c, np.repeat(c[-1:], horizon - len(c), axis=0)])
            obs.append(tr.obs)
            ys.append(np.clip(c[:horizon], -1.0, 1.0).reshape(-1))
    return np.array(obs), np.array(ys)


def split_indices(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    n_val = min(max(n_val, 1 if n > 1 else 0), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _validate(dataset: Dataset) -> None:
    if not dataset.trajectories or not any(t.transitions for t in dataset.trajectories):
        raise ValueError("cannot train on an empty dataset")
    if not all(t.success for t in dataset.trajectories):
        raise ValueError("imitation data must contain only successful trajectories")


def train_base(dataset: Dataset, config: ILConfig | None = None) -> tuple[BasePolicy, TrainLog]:
    config = config or ILConfig()
    _validate(dataset)
    rng = np.random.default_rng(config.seed)
    policy = BasePolicy.create(dataset.task, rng, config.variant, config.hidden)
    obs, ys = chunk_targets(dataset, policy.horizon)
    x = policy.normalize(obs)
    tr_idx, va_idx = split_indices(len(x), config.val_fraction, rng)
    ab = cosine_alpha_bar()
    diffusion = config.variant == "diffusion-mlp"
    # fixed validation noise so validation losses are comparable across steps
    vrng = np.random.default_rng(config.seed + 1)
    v_t = vrng.integers(0, TRAIN_TIMESTEPS, size=len(va_idx))
    v_eps = vrng.standard_normal((len(va_idx), ys.shape[1]))

    def batch_loss(params, idx, t=None, eps=None):
        if not diffusion:
            return loss_mse(policy.predict_chunk(x[idx], params), ys[idx])
        coef = ab[t][:, None]
        x_t = np.sqrt(coef) * ys[idx] + np.sqrt(1 - coef) * eps
        return loss_mse(policy.predict_noise(x[idx], x_t, t, params), eps)

    def val_loss(params) -> float:
        idx = va_idx if len(va_idx) else tr_idx
        if diffusion:
            t = v_t if len(va_idx) else np.zeros(len(idx), dtype=int)
            e = v_eps if len(va_idx) else np.zeros((len(idx), ys.shape[1]))
            return batch_loss(params, idx, t, e).item()
        return batch_loss(params, idx).item()

    opt = AdamState(config.lr, config.weight_decay)
    params = dict(policy.net.params)
    names = list(params)
    log = TrainLog()
    best = params
    bs = min(config.batch_size, len(tr_idx))
    for step in range(config.steps):
        idx = tr_idx[rng.choice(len(tr_idx), size=bs, replace=False)]
        t = eps = None
        if diffusion:
            t = rng.integers(0, TRAIN_TIMESTEPS, size=bs)
            eps = rng.standard_normal((bs, ys.shape[1]))
        with Tape() as tape:
            loss = batch_loss(params, idx, t, eps)
        grads = dict(zip(names, tape.gradient(loss, [params[n] for n in names])))
        params = adam_step(opt, params, grads, cosine_lr(config.lr, step, config.steps))
        if step == 0:
            log.initial_loss = loss.item()
        if step % config.eval_every == 0 or step == config.steps - 1:
            log.train_loss.append((step, loss.item()))
            v = val_loss(params)
            log.val_loss.append((step, v))
            if v < log.best_val:
                log.best_val, log.best_step, best = v, step, params
    log.final_loss = log.train_loss[-1][1] if log.train_loss else math.nan
    policy.net.params = best
    return policy, log


def train_bc(dataset: Dataset, config: ILConfig | None = None) -> tuple[BasePolicy, TrainLog]:
    config = config or ILConfig()
    if config.variant != "bc-mlp":
        config = ILConfig(**{**config.__dict__, "variant": "bc-mlp"})
    return train_base(dataset, config)


def train_diffusion(dataset: Dataset, config: ILConfig | None = None) -> tuple[BasePolicy, TrainLog]:
    config = config or ILConfig(variant="diffusion-mlp")
    if config.variant != "diffusion-mlp":
        config = ILConfig(**{**config.__dict__, "variant": "diffusion-mlp"})
    return train_base(dataset, config)


def full_loss(policy: BasePolicy, dataset: Dataset) -> float:
    obs, ys = chunk_targets(dataset, policy.horizon)
    return T.reduce_mean(T.square(T.sub(policy.net.infer(policy.normalize(obs)), ys))).item()
