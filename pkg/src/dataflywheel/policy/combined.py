"""Base + scaled residual composition, the progressive mixing schedule and the rollout controller."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import planar
from ..seeding import derive_seed
from .base import BasePolicy
from .residual import ResidualPolicy

RESIDUAL_SCALE = 0.1


@dataclass(frozen=True)
class MixingSchedule:
    start: int = 1500
    end: int = 10000

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("mixing schedule needs 0 <= start < end")

    def epsilon(self, step: int) -> float:
        if step < 0:
            raise ValueError("global step must be non-negative")
        if step <= self.start:
            return 0.0
        if step >= self.end:
            return 1.0
        return (step - self.start) / (self.end - self.start)


def epsilon(schedule: MixingSchedule, step: int) -> float:
    return schedule.epsilon(step)


def combine_unclipped(a: np.ndarray, da: np.ndarray, alpha: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    da = np.asarray(da, dtype=np.float64)
    if a.shape != da.shape:
        raise ValueError(f"action shapes differ: {a.shape} vs {da.shape}")
    return a + alpha * da


def combine(a: np.ndarray, da: np.ndarray, alpha: float = RESIDUAL_SCALE) -> np.ndarray:
    return np.clip(combine_unclipped(a, da, alpha), -1.0, 1.0)


@dataclass
class CombinedPolicy:
    base: BasePolicy
    residual: ResidualPolicy | None
    alpha: float = RESIDUAL_SCALE
    schedule: MixingSchedule = field(default_factory=MixingSchedule)

    def act_deployed(self, obs: np.ndarray, base_action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Frozen deployment: always base + alpha * mean residual."""
        da = self.residual.infer(obs, "mean") if self.residual is not None else np.zeros_like(base_action)
        return combine(base_action, da, self.alpha), da

    def act_training(self, obs: np.ndarray, base_action: np.ndarray, global_step: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, bool, np.ndarray]:
        """Training-time mixing: residual used with probability epsilon(step).

        Returns (executed action, used_residual, sampled correction). The
        correction is drawn on every call so the rng stream does not depend on
        the coin flip outcome.
        """
        use = rng.random() < self.schedule.epsilon(global_step)
        da = self.residual.infer(obs, "sample", rng)
        if use:
            return combine(base_action, da, self.alpha), True, da
        return np.clip(np.asarray(base_action, dtype=np.float64), -1.0, 1.0), False, da


class ChunkRunner:
    """Executes base chunks open-loop, replanning every H steps."""

    def __init__(self, base: BasePolicy, seed: int = 0):
        self.base = base
        self.seed = seed
        self.chunk: np.ndarray | None = None
        self.k = 0
        self.t = 0

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self.seed = seed
        self.chunk = None
        self.k = 0
        self.t = 0

    def next_action(self, obs: np.ndarray) -> np.ndarray:
        if self.chunk is None or self.k >= self.base.horizon:
            self.chunk = self.base.infer(obs, derive_seed(self.seed, "base", self.t))
            self.k = 0
        a = self.chunk[self.k]
        self.k += 1
        self.t += 1
        return a


class PolicyController:
    """Deployment controller: base chunks plus an optional per-step residual."""

    def __init__(self, base: BasePolicy, residual: ResidualPolicy | None = None,
                 alpha: float = RESIDUAL_SCALE, seed: int = 0):
        self.policy = CombinedPolicy(base, residual, alpha)
        self.runner = ChunkRunner(base, seed)

    def reset(self, state: planar.EnvState) -> None:
        self.runner.reset()

    def set_seed(self, seed: int) -> None:
        self.runner.seed = seed

    def act(self, state: planar.EnvState):
        obs = planar.observation(state)
        a = self.runner.next_action(obs)
        if self.policy.residual is None:
            return np.clip(a, -1.0, 1.0), a.copy(), None
        act, da = self.policy.act_deployed(obs, a)
        return act, a.copy(), da
