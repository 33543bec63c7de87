"""Shared test utilities: finite-difference gradient checks with kink detection."""
from __future__ import annotations

import contextlib

import numpy as np

from dataflywheel.core import MLP, Tape, Tensor
from dataflywheel.core import nn as core_nn
from dataflywheel.core import tensor as T
from dataflywheel.envs.catalog import TaskKind
from dataflywheel.policy.base import BasePolicy, TRAIN_TIMESTEPS, cosine_alpha_bar, loss_mse
from dataflywheel.policy.residual import ResidualPolicy
from dataflywheel.sac import SACConfig, actor_loss, critic_loss, make_state

FD_STEP = 1e-6
REL_TOL = 1e-4


@contextlib.contextmanager
def branch_recorder(log: list):
    """Record which side of every non-smooth point (relu, min, clip) a forward pass took."""
    relu, minimum, clip = T.relu, T.minimum, T.clip

    def rec_relu(a):
        log.append(np.asarray(T.as_tensor(a).data > 0).tobytes())
        return relu(a)

    def rec_min(a, b):
        log.append(np.asarray(T.as_tensor(a).data < T.as_tensor(b).data).tobytes())
        return minimum(a, b)

    def rec_clip(a, lo, hi):
        d = T.as_tensor(a).data
        log.append(((d < lo).tobytes(), (d > hi).tobytes()))
        return clip(a, lo, hi)

    old_act = core_nn.ACTIVATIONS["relu"]
    core_nn.ACTIVATIONS["relu"] = rec_relu
    T.minimum, T.clip = rec_min, rec_clip
    try:
        yield
    finally:
        core_nn.ACTIVATIONS["relu"] = old_act
        T.minimum, T.clip = minimum, clip


def _eval(loss_fn, params) -> tuple[float, tuple]:
    log: list = []
    with branch_recorder(log):
        v = loss_fn(params).item()
    return v, tuple(log)


def gradcheck(loss_fn, params: dict[str, Tensor], rng: np.random.Generator, per_tensor: int = 6,
              h: float = FD_STEP) -> tuple[float, int, int]:
    """Max relative error of taped gradients against central differences.

    ``per_tensor`` random coordinates of each parameter tensor are probed.
    Coordinates whose +h / -h evaluations land on different sides of a kink
    are skipped (finite differences are meaningless there). Returns
    (max relative error, coordinates checked, coordinates skipped).
    """
    names = list(params)
    with Tape() as tape:
        loss = loss_fn(params)
    grads = dict(zip(names, tape.gradient(loss, [params[n] for n in names])))
    worst, checked, skipped = 0.0, 0, 0
    for name in names:
        base = params[name].data
        flat_idx = rng.choice(base.size, size=min(per_tensor, base.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), base.shape)
            vals = []
            pats = []
            for sgn in (1.0, -1.0):
                arr = base.copy()
                arr[idx] += sgn * h
                v, pat = _eval(loss_fn, {**params, name: Tensor(arr, requires_grad=True)})
                vals.append(v)
                pats.append(pat)
            if pats[0] != pats[1]:
                skipped += 1
                continue
            fd = (vals[0] - vals[1]) / (2 * h)
            g = float(grads[name][idx])
            denom = max(abs(g), abs(fd), 1e-6)
            worst = max(worst, abs(g - fd) / denom)
            checked += 1
    return worst, checked, skipped


def _randomize_last(net: MLP, rng: np.random.Generator) -> None:
    n = len(net.sizes) - 2
    for suf in ("w", "b"):
        k = f"{net.prefix}l{n}.{suf}"
        net.params[k] = Tensor(rng.normal(0, 0.3, net.params[k].shape), requires_grad=True)


def gradient_cases(seed: int, task: TaskKind = TaskKind.GRASP, batch: int = 5):
    """(name, loss_fn, params) for actor, both critics, the BC head and the denoiser."""
    rng = np.random.default_rng(seed)
    cfg = SACConfig(actor_hidden=(16, 16, 16), critic_hidden=(16, 16, 16))
    actor = ResidualPolicy.create(task, rng, cfg.actor_hidden)
    _randomize_last(actor.net, rng)
    sac = make_state(actor, cfg, rng)
    od, ad = actor.net.sizes[0], actor.action_dim
    obs_n = rng.normal(size=(batch, od))
    base = rng.uniform(-0.8, 0.8, size=(batch, ad))
    noise = rng.standard_normal((batch, ad))
    act = rng.uniform(-1, 1, size=(batch, ad))
    y = rng.normal(size=batch)

    def actor_fn(p):
        return actor_loss(sac, p, obs_n, base, noise, 0.2, cfg.residual_scale)[0]

    def critic_fn(prefix):
        def f(p):
            full = {**sac.critics.online_params(), **p}
            return critic_loss(sac, full, obs_n, act, y)
        return f, {k: v for k, v in sac.critics.online_params().items() if k.startswith(prefix)}

    q1_fn, q1_p = critic_fn("q1.")
    q2_fn, q2_p = critic_fn("q2.")

    bc = BasePolicy.create(task, rng, "bc-mlp", (16, 16))
    tgt = rng.uniform(-1, 1, size=(batch, bc.chunk_size))

    def bc_fn(p):
        return loss_mse(bc.predict_chunk(obs_n, p), tgt)

    dn = BasePolicy.create(task, rng, "diffusion-mlp", (16, 16))
    t = rng.integers(0, TRAIN_TIMESTEPS, size=batch)
    eps = rng.standard_normal((batch, dn.chunk_size))
    ab = cosine_alpha_bar()[t][:, None]
    x_t = np.sqrt(ab) * tgt + np.sqrt(1 - ab) * eps

    def dn_fn(p):
        return loss_mse(dn.predict_noise(obs_n, x_t, t, p), eps)

    return [
        ("actor", actor_fn, dict(actor.net.params)),
        ("critic-q1", q1_fn, q1_p),
        ("critic-q2", q2_fn, q2_p),
        ("bc", bc_fn, dict(bc.net.params)),
        ("denoiser", dn_fn, dict(dn.net.params)),
    ]
