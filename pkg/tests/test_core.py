import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataflywheel.core import (
    MLP,
    AdamState,
    CheckpointError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    clip_global_norm,
    cosine_lr,
    global_norm,
    load_checkpoint,
    params_digest,
    save_checkpoint,
)
from dataflywheel.core import tensor as T

from helpers import gradcheck


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(T.matmul(np.eye(3), m).data, m)


def test_elementwise_primitives():
    assert T.tanh(0.0).item() == 0.0
    assert T.reduce_sum(np.array([1.0, 2.0, 3.0])).item() == 6.0
    assert T.reduce_mean(np.array([1.0, 2.0, 3.0])).item() == 2.0
    assert np.array_equal(T.relu(np.array([-1.0, 2.0])).data, [0.0, 2.0])
    assert T.softplus(0.0).item() == pytest.approx(math.log(2.0), abs=1e-15)
    assert T.exp(0.0).item() == 1.0


def test_shape_mismatch_is_rejected():
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_values_are_row_major_and_immutable():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.values.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert t.size == 4
    with pytest.raises(ValueError):
        t.data[0, 0] = 5.0


def test_non_finite_results_are_rejected():
    with pytest.raises(NonFiniteError):
        T.exp(1000.0)
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = T.square(x)
    (g,) = tape.gradient(loss, [x])
    assert g == 6.0


def test_unreachable_parameter_gets_zero_gradient():
    x = Tensor(2.0, requires_grad=True)
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = T.mul(x, x)
    gx, gp = tape.gradient(loss, [x, p])
    assert gx == 4.0
    assert np.array_equal(gp, np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.mul(x, 2.0)
    with pytest.raises(ShapeError):
        tape.gradient(y, [x])


def test_shared_subexpression_accumulates():
    x = Tensor(1.5, requires_grad=True)
    with Tape() as tape:
        y = T.tanh(x)
        loss = T.add(T.mul(y, y), y)
    (g,) = tape.gradient(loss, [x])
    th = math.tanh(1.5)
    assert g == pytest.approx((2 * th + 1) * (1 - th * th), rel=1e-14)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = MLP.create([4, 8, 3], rng, "relu")
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 3))
    err, checked, skipped = gradcheck(lambda p: T.reduce_mean(T.square(T.sub(net(x, p), y))),
                                      dict(net.params), rng, per_tensor=12)
    assert checked > 0 and skipped == 0
    assert err <= 1e-4


def test_tanh_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    net = MLP.create([3, 5, 5, 2], rng, "tanh")
    x = rng.normal(size=(4, 3))
    err, _, _ = gradcheck(lambda p: T.reduce_sum(T.softplus(net(x, p))), dict(net.params), rng, per_tensor=20)
    assert err <= 1e-4


def test_clip_global_norm_examples():
    g = {"a": np.array([3.0, 4.0])}
    assert clip_global_norm(g, 10.0) is g
    g20 = {"a": np.array([12.0, 16.0])}
    out = clip_global_norm(g20, 10.0)
    assert np.allclose(out["a"], g20["a"] * 0.5, atol=0, rtol=1e-15)
    assert abs(global_norm(out) - 10.0) <= 1e-12
    with pytest.raises(ValueError):
        clip_global_norm(g, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=12),
       st.floats(1e-3, 1e3))
def test_clip_never_increases_norm_and_keeps_direction(vals, max_norm):
    g = {"a": np.array(vals[: len(vals) // 2 + 1]), "b": np.array(vals[len(vals) // 2 + 1:] or [0.0])}
    out = clip_global_norm(g, max_norm)
    n0, n1 = global_norm(g), global_norm(out)
    assert n1 <= max(n0, max_norm) * (1 + 1e-12)
    assert n1 <= max_norm * (1 + 1e-12) or n1 == n0
    if n0 > 0:
        flat0 = np.concatenate([g["a"], g["b"]]) / n0
        flat1 = np.concatenate([out["a"], out["b"]]) / max(n1, 1e-300)
        assert np.allclose(flat0, flat1, atol=1e-9)


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    st_ = AdamState(1e-3)
    out = adam_step(st_, p, {"w": np.zeros(2)})
    assert np.array_equal(out["w"].data, p["w"].data)
    assert st_.step == 1
    adam_step(st_, out, {"w": np.zeros(2)})
    assert st_.step == 2


def test_adam_converges_on_quadratic():
    # f(x) = (x - 3)^2, minimiser 3
    st_ = AdamState(0.05)
    p = {"x": Tensor(np.array(-4.0), requires_grad=True)}
    for k in range(3000):
        g = 2.0 * (p["x"].data - 3.0)
        p = adam_step(st_, p, {"x": np.asarray(g)}, cosine_lr(0.05, k, 3000))
    assert abs(float(p["x"].data) - 3.0) < 1e-3


def test_adam_decoupled_weight_decay():
    st_ = AdamState(0.1, weight_decay=0.5)
    p = {"w": Tensor(np.array(2.0), requires_grad=True)}
    out = adam_step(st_, p, {"w": np.array(0.0)})
    assert float(out["w"].data) == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)


def test_adam_rejects_bad_settings():
    with pytest.raises(ValueError):
        AdamState(0.0)
    with pytest.raises(ValueError):
        AdamState(1e-3, weight_decay=-1.0)


def test_cosine_lr_endpoints():
    assert cosine_lr(1.0, 0, 100) == 1.0
    assert cosine_lr(1.0, 50, 100) == pytest.approx(0.5)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(0.0, abs=1e-15)


def _train(seed: int) -> str:
    rng = np.random.default_rng(seed)
    net = MLP.create([3, 6, 2], rng)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    opt = AdamState(1e-2)
    params = dict(net.params)
    for _ in range(20):
        with Tape() as tape:
            loss = T.reduce_mean(T.square(T.sub(net(x, params), y)))
        names = list(params)
        grads = dict(zip(names, tape.gradient(loss, [params[n] for n in names])))
        params = adam_step(opt, params, grads)
    return params_digest(params)


def test_training_is_bit_deterministic():
    assert _train(3) == _train(3)
    assert _train(3) != _train(4)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    net = MLP.create([3, 4, 2], rng, prefix="q1.")
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net.params, {"kind": "test", "n": 3})
    tensors, meta = load_checkpoint(path)
    assert meta == {"kind": "test", "n": 3}
    assert params_digest(tensors) == params_digest(net.params)


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, {"w": np.ones((2, 2))})
    good.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(good)
