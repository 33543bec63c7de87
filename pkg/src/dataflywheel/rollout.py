"""Run a controller in the planar world and record the episode as a Trajectory."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .datasets import Trajectory, Transition, chunks_from_actions
from .envs import planar
from .envs.catalog import DEFAULT_ENVIRONMENTS, EnvironmentParams, ScenarioConfig


class Controller(Protocol):
    def reset(self, state: planar.EnvState) -> None: ...

    def act(self, state: planar.EnvState) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
        """Return (executed action, base action, residual correction)."""


@dataclass
class Episode:
    states: list[planar.EnvState]
    actions: np.ndarray
    rewards: np.ndarray
    base: list[np.ndarray | None]
    residual: list[np.ndarray | None]
    success: bool
    reason: str
    success_step: int  # step index (1-based count) at which success fired, or -1

    def to_trajectory(self, traj_id: str, config: ScenarioConfig, seed: int, source: str,
                      lineage: list[str] | None = None, iteration_born: int = 0) -> Trajectory:
        chunks = chunks_from_actions(self.actions)
        trans = [
            Transition(planar.observation(self.states[t]), chunks[t], float(self.rewards[t]), self.base[t], self.residual[t])
            for t in range(len(self.actions))
        ]
        return Trajectory(traj_id, config, seed, trans, self.success, source, list(lineage or []), iteration_born)


def run_episode(
    config: ScenarioConfig,
    seed: int,
    controller: Controller,
    registry: dict[str, EnvironmentParams] | None = None,
    max_steps: int | None = None,
) -> Episode:
    state = planar.reset(config, seed, registry or DEFAULT_ENVIRONMENTS)
    controller.reset(state)
    states, actions, rewards, base, res = [state], [], [], [], []
    reason = "none"
    while True:
        a, b, r = controller.act(state)
        result = planar.step(state, a)
        actions.append(np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0))
        rewards.append(result.reward)
        base.append(None if b is None else np.asarray(b, dtype=np.float64))
        res.append(None if r is None else np.asarray(r, dtype=np.float64))
        state = result.state
        states.append(state)
        if result.terminated:
            reason = result.reason
            break
        if max_steps is not None and len(actions) >= max_steps:
            break
    ok = reason == "success"
    return Episode(states, np.array(actions), np.array(rewards), base, res, ok, reason, len(actions) if ok else -1)


class ReplayController:
    """Plays back a fixed action sequence, then repeats the final action (or zeros)."""

    def __init__(self, actions: np.ndarray, tail: int = 0):
        self.actions = np.asarray(actions, dtype=np.float64)
        self.tail = tail
        self.t = 0

    def reset(self, state) -> None:
        self.t = 0

    def act(self, state):
        if self.t < len(self.actions):
            a = self.actions[self.t]
        elif self.tail > 0 and len(self.actions):
            a = self.actions[-1]
            self.tail -= 1
        else:
            a = np.zeros(planar.action_dim(state.task))
        self.t += 1
        return a, None, None


def replay(config: ScenarioConfig, seed: int, actions: np.ndarray, registry=None, tail: int = 0) -> Episode:
    """Replay actions; stops at termination or when actions (plus tail) are exhausted."""
    ctl = ReplayController(actions, tail)
    return run_episode(config, seed, ctl, registry, max_steps=len(actions) + tail)


class FnController:
    def __init__(self, fn: Callable[[planar.EnvState], np.ndarray]):
        self.fn = fn

    def reset(self, state) -> None:
        pass

    def act(self, state):
        return self.fn(state), None, None
