"""Soft actor-critic for the residual head on top of a frozen base policy.

Critics score the *combined* action a + alpha * da at each state; the base
action is stored in the replay buffer (and the next base action for the
bootstrap target) so the base is never re-run during updates.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import MLP, AdamState, Tape, Tensor, adam_step, clip_global_norm, params_digest
from .core import tensor as T
from .core.nn import Params
from .envs import planar
from .envs.catalog import DEFAULT_ENVIRONMENTS, EnvironmentParams, ScenarioConfig
from .policy.base import BasePolicy
from .policy.combined import ChunkRunner, CombinedPolicy, MixingSchedule, PolicyController
from .policy.residual import ResidualPolicy
from .rollout import run_episode
from .seeding import derive_seed


@dataclass
class SACConfig:
    lr: float = 1e-4
    gamma: float = 0.97
    tau: float = 0.01
    init_entropy_coef: float = 0.2
    batch_size: int = 1024
    total_timesteps: int = 50_000
    learning_starts: int = 300
    train_frequency: int = 5
    updates_to_data: float = 0.2
    policy_frequency: int = 1
    target_frequency: int = 1
    max_grad_norm: float = 10.0
    residual_scale: float = 0.1
    buffer_size: int = 100_000
    actor_hidden: tuple[int, ...] = (256, 256, 256)
    critic_hidden: tuple[int, ...] = (256, 256, 256)
    eval_every: int = 1000
    eval_scenarios: int = 6
    episode_horizon: int | None = None
    mixing_start: int = 1500
    mixing_end: int = 10000
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "gamma", "batch_size", "total_timesteps", "train_frequency",
                     "updates_to_data", "max_grad_norm", "buffer_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SAC {name} must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.learning_starts < 0 or self.residual_scale < 0 or self.init_entropy_coef <= 0:
            raise ValueError("learning_starts and residual_scale must be >= 0, entropy coefficient > 0")

    @property
    def updates_per_round(self) -> int:
        return max(1, int(round(self.train_frequency * self.updates_to_data)))

    @classmethod
    def desk(cls, **overrides) -> "SACConfig":
        """Small-network preset sized for a single CPU core."""
        base = dict(actor_hidden=(64, 64, 64), critic_hidden=(64, 64, 64), batch_size=256,
                    total_timesteps=12_000, episode_horizon=120, eval_every=1000, buffer_size=100_000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


def update_count(n_steps: int, config: SACConfig) -> int:
    """Gradient updates performed after ``n_steps`` environment steps."""
    if n_steps <= config.learning_starts:
        return 0
    return ((n_steps - config.learning_starts) // config.train_frequency) * config.updates_per_round


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.base = np.zeros((capacity, act_dim))
        self.next_base = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def add(self, obs, act, rew, next_obs, done, base, next_base) -> None:
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self.base[i], self.next_base[i] = base, next_base
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample(self, batch: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx],
                "base": self.base[idx], "next_base": self.next_base[idx]}


def soft_update(target: Params, online: Params, tau: float) -> Params:
    return {k: Tensor._wrap(tau * online[k].data + (1.0 - tau) * target[k].data, requires_grad=True)
            for k in target}


@dataclass
class Critics:
    q1: MLP
    q2: MLP
    t1: Params
    t2: Params

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden: tuple[int, ...], rng: np.random.Generator) -> "Critics":
        q1 = MLP.create([obs_dim + act_dim, *hidden, 1], rng, "relu", prefix="q1.")
        q2 = MLP.create([obs_dim + act_dim, *hidden, 1], rng, "relu", prefix="q2.")
        return cls(q1, q2, dict(q1.params), dict(q2.params))

    def online_params(self) -> Params:
        return {**self.q1.params, **self.q2.params}

    def target_min(self, obs_n: np.ndarray, act: np.ndarray) -> np.ndarray:
        x = np.concatenate([obs_n, act], axis=1)
        a = MLP(self.q1.sizes, "relu", self.t1, "q1.").infer(x)
        b = MLP(self.q2.sizes, "relu", self.t2, "q2.").infer(x)
        return np.minimum(a, b)[:, 0]


@dataclass
class SACState:
    actor: ResidualPolicy
    critics: Critics
    log_alpha: Tensor
    actor_opt: AdamState
    critic_opt: AdamState
    alpha_opt: AdamState
    target_entropy: float
    updates: int = 0

    @property
    def alpha(self) -> float:
        return math.exp(float(self.log_alpha.data))


def make_state(actor: ResidualPolicy, config: SACConfig, rng: np.random.Generator) -> SACState:
    od = actor.net.sizes[0]
    ad = actor.action_dim
    critics = Critics.create(od, ad, config.critic_hidden, rng)
    return SACState(
        actor=actor,
        critics=critics,
        log_alpha=Tensor(math.log(config.init_entropy_coef), requires_grad=True),
        actor_opt=AdamState(config.lr),
        critic_opt=AdamState(config.lr),
        alpha_opt=AdamState(config.lr),
        target_entropy=-float(ad),
    )


def bellman_target(rew: np.ndarray, done: np.ndarray, next_q_min: np.ndarray, next_logp: np.ndarray,
                   alpha: float, gamma: float) -> np.ndarray:
    return rew + gamma * (1.0 - done) * (next_q_min - alpha * next_logp)


def critic_loss(state: SACState, params: Params, obs_n: np.ndarray, act_comb: np.ndarray, y: np.ndarray) -> Tensor:
    x = np.concatenate([obs_n, act_comb], axis=1)
    q1 = state.critics.q1(x, params)
    q2 = state.critics.q2(x, params)
    yt = y[:, None]
    return T.add(T.reduce_mean(T.square(T.sub(q1, yt))), T.reduce_mean(T.square(T.sub(q2, yt))))


def actor_loss(state: SACState, actor_params: Params, obs_n: np.ndarray, base: np.ndarray,
               noise: np.ndarray, alpha: float, residual_scale: float) -> tuple[Tensor, Tensor]:
    da, logp = state.actor.sample_logp(obs_n, noise, actor_params)
    comb = T.clip(T.add(base, T.mul(residual_scale, da)), -1.0, 1.0)
    x = T.concat([obs_n, comb], axis=1)
    q = T.minimum(state.critics.q1(x), state.critics.q2(x))
    loss = T.reduce_mean(T.sub(T.mul(alpha, logp), q))
    return loss, logp


def sac_update(state: SACState, batch: dict[str, np.ndarray], config: SACConfig, rng: np.random.Generator) -> dict:
    actor = state.actor
    obs_n = actor.normalize(batch["obs"])
    next_n = actor.normalize(batch["next_obs"])
    n, ad = batch["act"].shape
    alpha = state.alpha
    s = config.residual_scale

    # critic
    noise_next = rng.standard_normal((n, ad))
    da_next, logp_next = actor.sample_logp(next_n, noise_next)
    comb_next = np.clip(batch["next_base"] + s * da_next.data, -1.0, 1.0)
    y = bellman_target(batch["rew"], batch["done"], state.critics.target_min(next_n, comb_next),
                       logp_next.data[:, 0], alpha, config.gamma)
    comb = np.clip(batch["base"] + s * batch["act"], -1.0, 1.0)
    cparams = state.critics.online_params()
    names = list(cparams)
    with Tape() as tape:
        closs = critic_loss(state, cparams, obs_n, comb, y)
    grads = clip_global_norm(dict(zip(names, tape.gradient(closs, [cparams[k] for k in names]))), config.max_grad_norm)
    new = adam_step(state.critic_opt, cparams, grads)
    state.critics.q1.params = {k: new[k] for k in state.critics.q1.params}
    state.critics.q2.params = {k: new[k] for k in state.critics.q2.params}
    out = {"critic_loss": closs.item()}

    if state.updates % config.policy_frequency == 0:
        aparams = dict(actor.net.params)
        anames = list(aparams)
        noise = rng.standard_normal((n, ad))
        with Tape() as tape:
            aloss, logp = actor_loss(state, aparams, obs_n, batch["base"], noise, alpha, s)
        agrads = clip_global_norm(dict(zip(anames, tape.gradient(aloss, [aparams[k] for k in anames]))),
                                  config.max_grad_norm)
        actor.net.params = adam_step(state.actor_opt, aparams, agrads)
        # entropy temperature: d/dlog_alpha of -log_alpha * (logp + target)
        g_alpha = -float(np.mean(logp.data + state.target_entropy))
        state.log_alpha = adam_step(state.alpha_opt, {"a": state.log_alpha}, {"a": np.array(g_alpha)})["a"]
        out.update(actor_loss=aloss.item(), entropy=-float(np.mean(logp.data)))

    if state.updates % config.target_frequency == 0:
        state.critics.t1 = soft_update(state.critics.t1, state.critics.q1.params, config.tau)
        state.critics.t2 = soft_update(state.critics.t2, state.critics.q2.params, config.tau)
    state.updates += 1
    out["alpha"] = state.alpha
    return out


@dataclass
class SACLog:
    returns: list[tuple[int, float]] = field(default_factory=list)
    eval_returns: list[tuple[int, float]] = field(default_factory=list)
    eval_success: list[tuple[int, float]] = field(default_factory=list)
    alphas: list[tuple[int, float]] = field(default_factory=list)
    updates: int = 0
    residual_uses: int = 0
    best_step: int = 0
    best_return: float = -math.inf
    base_digest_before: str = ""
    base_digest_after: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def evaluate_return(base: BasePolicy, actor: ResidualPolicy | None, scenarios: list[tuple[ScenarioConfig, int]],
                    alpha: float, horizon: int | None, registry) -> tuple[float, float]:
    total, wins = 0.0, 0
    for cfg, seed in scenarios:
        ctl = PolicyController(base, actor, alpha, seed)
        ep = run_episode(cfg, seed, ctl, registry, max_steps=horizon)
        total += float(ep.rewards.sum())
        wins += ep.success
    return total / len(scenarios), wins / len(scenarios)


def train_residual(
    scenarios: list[ScenarioConfig],
    base: BasePolicy,
    config: SACConfig | None = None,
    registry: dict[str, EnvironmentParams] | None = None,
    init: ResidualPolicy | None = None,
) -> tuple[ResidualPolicy, SACLog]:
    config = config or SACConfig()
    registry = registry or DEFAULT_ENVIRONMENTS
    if not scenarios:
        raise ValueError("residual training needs at least one scenario")
    log = SACLog(base_digest_before=params_digest(base.net.params))
    rng = np.random.default_rng(config.seed)
    actor = init or ResidualPolicy.create(base.task, rng, config.actor_hidden)
    sac = make_state(actor, config, rng)
    schedule = MixingSchedule(config.mixing_start, config.mixing_end)
    combined = CombinedPolicy(base, actor, config.residual_scale, schedule)
    buf = ReplayBuffer(config.buffer_size, base.obs_dim, base.action_dim)
    eval_set = [(scenarios[i % len(scenarios)], derive_seed(config.seed, "eval", i))
                for i in range(min(config.eval_scenarios, max(len(scenarios), 1)))]
    horizon = config.episode_horizon

    best_params = dict(actor.net.params)

    def record_eval(step: int) -> None:
        nonlocal best_params
        ret, sr = evaluate_return(base, sac.actor, eval_set, config.residual_scale, horizon, registry)
        log.eval_returns.append((step, ret))
        log.eval_success.append((step, sr))
        if ret > log.best_return:
            log.best_return, log.best_step = ret, step
            best_params = dict(sac.actor.net.params)

    record_eval(0)

    episode = 0
    step = 0
    while step < config.total_timesteps:
        cfg = scenarios[int(rng.integers(len(scenarios)))]
        ep_seed = derive_seed(config.seed, "episode", episode)
        state = planar.reset(cfg, ep_seed, registry)
        runner = ChunkRunner(base, ep_seed)
        obs = planar.observation(state)
        a_base = runner.next_action(obs)
        ep_ret, ep_len = 0.0, 0
        while True:
            combined.residual = sac.actor
            act, used, da = combined.act_training(obs, a_base, step, rng)
            log.residual_uses += used
            res = planar.step(state, act)
            step += 1
            ep_len += 1
            next_obs = planar.observation(res.state)
            truncated = horizon is not None and ep_len >= horizon and not res.terminated
            end = res.terminated or truncated or step >= config.total_timesteps
            next_base = base.infer(next_obs, derive_seed(ep_seed, "tail"))[0] if end else runner.next_action(next_obs)
            # only true terminations stop bootstrapping; time limits do not
            buf.add(obs, da if used else np.zeros_like(da), res.reward, next_obs,
                    res.reason == "success", a_base, next_base)
            ep_ret += res.reward
            if step > config.learning_starts and (step - config.learning_starts) % config.train_frequency == 0:
                for _ in range(config.updates_per_round):
                    sac_update(sac, buf.sample(config.batch_size, rng), config, rng)
                    log.updates += 1
            if step % config.eval_every == 0:
                log.alphas.append((step, sac.alpha))
                record_eval(step)
            state, obs, a_base = res.state, next_obs, next_base
            if end:
                break
        log.returns.append((step, ep_ret))
        episode += 1
    best = ResidualPolicy(base.task, MLP(actor.net.sizes, "relu", best_params, "actor."))
    log.base_digest_after = params_digest(base.net.params)
    return best, log
