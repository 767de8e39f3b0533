import math

import numpy as np
import pytest

from lrdkit.data import separable
from lrdkit.decompose import decompose_conv_tucker2, decompose_fc
from lrdkit.layers import FactorKind, FactorizedLayer, LayerKind, LayerSpec
from lrdkit.model import (
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    Model,
    ReLU,
    backward,
    forward,
    predict,
    softmax_cross_entropy,
)
from lrdkit.train import (
    SGD,
    ConfigError,
    FreezePolicy,
    TrainConfig,
    apply_freeze,
    frozen_indices,
    history_csv,
    learning_rate,
    sgd_step,
    train,
)
from lrdkit import zoo


def fd_check(model, x, rng, eps=1e-6):
    """Max relative error between analytic and central-difference gradients."""
    y, cache = forward(model, x)
    R = rng.standard_normal(y.shape)
    grads, dx = backward(model, R, cache)
    loss = lambda: float(np.sum(predict(model, x) * R))
    worst = 0.0
    for key, w, spec in model.parameters():
        if not spec.trainable:
            assert key not in grads
            continue
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up = loss()
            w[idx] = old - eps
            down = loss()
            w[idx] = old
            num[idx] = (up - down) / (2 * eps)
        g = grads[key]
        worst = max(worst, np.linalg.norm(g - num) / max(np.linalg.norm(num), np.linalg.norm(g), 1e-12))
    num_dx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = loss()
        x[idx] = old - eps
        down = loss()
        x[idx] = old
        num_dx[idx] = (up - down) / (2 * eps)
    worst = max(worst, np.linalg.norm(dx - num_dx) / max(np.linalg.norm(num_dx), 1e-12))
    return worst


def spec(rng, kind, C, S, k=1, bias=True, padding=0):
    shape = (C, S, k, k) if kind == "conv" else (C, S)
    return LayerSpec(kind, rng.standard_normal(shape), rng.standard_normal(S) if bias else None, padding)


# -- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_grad_fc(seed):
    rng = np.random.default_rng(seed)
    m = Model({"fc": spec(rng, "fc", 4, 3)})
    assert fd_check(m, rng.standard_normal((5, 4)), rng) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_grad_conv(seed):
    rng = np.random.default_rng(100 + seed)
    k = int(rng.choice([2, 3]))
    m = Model({"conv": spec(rng, "conv", 2, 3, k=k, padding=int(rng.integers(0, 2)))})
    assert fd_check(m, rng.standard_normal((2, 2, 5, 5)), rng) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_grad_pointwise(seed):
    rng = np.random.default_rng(200 + seed)
    m = Model({"pw": spec(rng, "pointwise", 3, 2)})
    assert fd_check(m, rng.standard_normal((2, 3, 3, 3)), rng) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_grad_svd_pair(seed):
    rng = np.random.default_rng(300 + seed)
    f = decompose_fc(spec(rng, "fc", 5, 4), 2)
    m = Model({"f": f})
    assert fd_check(m, rng.standard_normal((3, 5)), rng) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_grad_tucker_triple(seed):
    rng = np.random.default_rng(400 + seed)
    f = decompose_conv_tucker2(spec(rng, "conv", 3, 4, k=3, padding=1), 2, 3)
    m = Model({"t": f})
    assert fd_check(m, rng.standard_normal((2, 3, 4, 4)), rng) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_grad_tucker_with_outer_frozen(seed):
    rng = np.random.default_rng(500 + seed)
    f = decompose_conv_tucker2(spec(rng, "conv", 3, 4, k=3, padding=1), 2, 3)
    f.sublayers[0].trainable = f.sublayers[2].trainable = False
    m = Model({"t": f})
    y, cache = forward(m, rng.standard_normal((2, 3, 4, 4)))
    grads, _ = backward(m, np.ones_like(y), cache)
    assert set(grads) == {"t.1.weight"}
    assert fd_check(m, rng.standard_normal((2, 3, 4, 4)), rng) < 1e-5


def test_grad_through_ops():
    rng = np.random.default_rng(9)
    m = Model({
        "c": spec(rng, "conv", 2, 3, k=3, padding=1),
        "relu": ReLU(),
        "pool": MaxPool2d(2),
        "flat": Flatten(),
        "fc": spec(rng, "fc", 12, 2),
    })
    assert fd_check(m, rng.standard_normal((2, 2, 4, 4)), rng) < 1e-5
    m2 = Model({"c": spec(rng, "conv", 2, 3, k=3, padding=1), "gap": GlobalAvgPool(), "fc": spec(rng, "fc", 3, 2)})
    assert fd_check(m2, rng.standard_normal((2, 2, 4, 4)), rng) < 1e-5


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((4, 3))
    y = np.array([0, 2, 1, 2])
    _, g = softmax_cross_entropy(z, y)
    num = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += 1e-6
        zm[idx] -= 1e-6
        num[idx] = (softmax_cross_entropy(zp, y)[0] - softmax_cross_entropy(zm, y)[0]) / 2e-6
    assert np.abs(g - num).max() < 1e-8


def test_all_frozen_model():
    rng = np.random.default_rng(2)
    m = Model({"a": spec(rng, "fc", 3, 4), "r": ReLU(), "b": spec(rng, "fc", 4, 2)})
    for _, s in m.param_layers():
        s.trainable = False
    y, cache = forward(m, rng.standard_normal((5, 3)))
    grads, dx = backward(m, np.ones_like(y), cache)
    assert grads == {} and np.all(np.isfinite(dx)) and dx.shape == (5, 3)


def test_stale_cache_rejected():
    rng = np.random.default_rng(3)
    m = Model({"a": spec(rng, "fc", 3, 4)})
    _, cache = forward(m, rng.standard_normal((2, 3)))
    with pytest.raises(ValueError):
        backward(Model({"a": m.layers["a"], "r": ReLU()}), np.ones((2, 4)), cache)


def test_forward_cases():
    rng = np.random.default_rng(4)
    ident = Model({"p1": LayerSpec("pointwise", np.eye(3)), "p2": LayerSpec("pointwise", np.eye(3))})
    x = rng.standard_normal((2, 3, 4, 4))
    assert np.array_equal(predict(ident, x), x)
    fc = spec(rng, "fc", 3, 2)
    x2 = rng.standard_normal((4, 3))
    assert np.allclose(predict(Model({"f": fc}), x2), x2 @ fc.weight + fc.bias, atol=1e-14)


def test_forward_shape_mismatch():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        forward(Model({"f": spec(rng, "fc", 3, 2)}), np.ones((2, 4)))


# -- SGD ----------------------------------------------------------------------


def one_param_model(w):
    return Model({"f": LayerSpec("fc", np.array(w, dtype=float))})


def test_sgd_zero_grad_no_decay():
    m = one_param_model([[1.0, 2.0]])
    before = m.layers["f"].weight.copy()
    SGD(0.9, 0.0).step(m, {"f.weight": np.zeros((1, 2))}, 0.1)
    assert np.array_equal(m.layers["f"].weight, before)


def test_sgd_plain_step():
    m = one_param_model([[1.0, -2.0]])
    g = np.array([[0.5, 0.25]])
    sgd_step(m, {"f.weight": g}, 0.1)
    assert np.array_equal(m.layers["f"].weight, np.array([[1.0, -2.0]]) - 0.1 * g)


def test_sgd_two_step_recurrence():
    w0 = np.array([[1.0, -2.0]])
    g1, g2 = np.array([[0.5, 0.25]]), np.array([[-1.0, 3.0]])
    lr, mu, wd = 0.1, 0.9, 1e-4
    m = one_param_model(w0)
    opt = SGD(mu, wd)
    opt.step(m, {"f.weight": g1}, lr)
    opt.step(m, {"f.weight": g2}, lr)
    v1 = g1 + wd * w0
    w1 = w0 - lr * v1
    v2 = mu * v1 + g2 + wd * w1
    w2 = w1 - lr * v2
    assert np.abs(m.layers["f"].weight - w2).max() < 1e-12


def test_sgd_skips_frozen_and_keeps_velocity():
    m = one_param_model([[1.0, 1.0]])
    opt = SGD(0.9, 1e-4)
    opt.step(m, {"f.weight": np.ones((1, 2))}, 0.1)
    v = opt.velocity["f.weight"].copy()
    m.layers["f"].trainable = False
    w = m.layers["f"].weight.copy()
    opt.step(m, {"f.weight": np.ones((1, 2))}, 0.1)
    assert np.array_equal(m.layers["f"].weight, w)
    assert np.array_equal(opt.velocity["f.weight"], v)


# -- schedules and config -----------------------------------------------------


def test_cosine_endpoints_and_fixed():
    c = TrainConfig(epochs=10, lr=0.1, schedule="cosine")
    assert learning_rate(c, 0) == 0.1
    assert learning_rate(c, 9) <= 0.01 * 0.1
    lrs = [learning_rate(c, e) for e in range(10)]
    assert lrs == sorted(lrs, reverse=True)
    assert math.isclose(learning_rate(c, 3), 0.05 * (1 + math.cos(math.pi * 3 / 9)))
    f = TrainConfig(epochs=5)
    assert [learning_rate(f, e) for e in range(5)] == [0.001] * 5


def test_config_defaults():
    c = TrainConfig()
    assert (c.lr, c.momentum, c.weight_decay) == (0.001, 0.9, 1e-4)
    assert c.schedule.value == "fixed" and c.freeze_policy is FreezePolicy.NONE


@pytest.mark.parametrize("kw", [{"epochs": 0}, {"epochs": 2.5}, {"lr": -1}, {"momentum": 1.0},
                                {"schedule": "step"}, {"freeze_policy": "all"}, {"batch_size": 0}])
def test_config_validation(kw):
    with pytest.raises((ConfigError, ValueError)):
        TrainConfig(**kw)


# -- freezing -----------------------------------------------------------------


def mixed_model(rng):
    svd = decompose_fc(spec(rng, "fc", 4, 3), 2, origin="fc")
    tucker = decompose_conv_tucker2(spec(rng, "conv", 2, 4, k=3, padding=1), 2, 2, origin="conv")
    return Model({"conv": tucker, "gap": GlobalAvgPool(), "fc": svd})


def test_sequential_table():
    assert frozen_indices(FactorKind.TUCKER_TRIPLE, "sequential", 0) == {0, 2}
    assert frozen_indices(FactorKind.SVD_PAIR, "sequential", 0) == {0}
    assert frozen_indices(FactorKind.TUCKER_TRIPLE, "sequential", 1) == {1}
    assert frozen_indices(FactorKind.SVD_PAIR, "sequential", 1) == {1}
    for e in range(6):
        for kind in FactorKind:
            assert frozen_indices(kind, "sequential", e) == frozen_indices(kind, "sequential", e + 2)


def test_regular_and_none():
    for e in range(4):
        assert frozen_indices("tucker_triple", "regular", e) == {0, 2}
        assert frozen_indices("svd_pair", "regular", e) == {0}
        assert frozen_indices("svd_pair", "none", e) == set()


def test_apply_freeze_flags():
    rng = np.random.default_rng(6)
    m = mixed_model(rng)
    dense = Model({"d": spec(rng, "fc", 2, 2), **m.layers})
    state = apply_freeze(dense, "sequential", 1)
    assert state.frozen_sets == {"conv": {1}, "fc": {1}}
    assert [s.trainable for s in dense.layers["conv"].sublayers] == [True, False, True]
    assert [s.trainable for s in dense.layers["fc"].sublayers] == [True, False]
    assert dense.layers["d"].trainable
    apply_freeze(dense, "none", 0)
    assert all(s.trainable for _, s in dense.param_layers())


def test_sequential_coverage():
    rng = np.random.default_rng(7)
    m = mixed_model(rng)

    def flags(epoch):
        apply_freeze(m, "sequential", epoch)
        return {k: s.trainable for k, s in m.param_layers()}

    for e in range(6):
        a, b = flags(e), flags(e + 1)
        assert all(a[k] != b[k] for k in a)


def blob_model(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((64, 4))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    m = Model({"h": decompose_fc(spec(rng, "fc", 4, 6), 3, origin="h"), "r": ReLU(),
               "o": decompose_fc(spec(rng, "fc", 6, 2), 2, origin="o")})
    return m, X, y


def test_frozen_parameters_bit_identical_per_epoch():
    m, X, y = blob_model()
    snapshots = []

    def cb(epoch, state, model):
        snapshots.append((state, {k: w.copy() for k, w, _ in model.parameters()}))

    before = {k: w.copy() for k, w, _ in m.parameters()}
    train(m, (X, y), TrainConfig(epochs=4, lr=0.1, freeze_policy="sequential", batch_size=16), callback=cb)
    prev = before
    for state, now in snapshots:
        for name, frozen in state.frozen_sets.items():
            for i in range(2):
                for p in ("weight", "bias"):
                    key = f"{name}.{i}.{p}"
                    if key not in now:
                        continue
                    if i in frozen:
                        assert np.array_equal(prev[key], now[key]), (state.epoch, key)
                    else:
                        assert not np.array_equal(prev[key], now[key]), (state.epoch, key)
        prev = now


def test_sequential_every_sublayer_changes_in_two_epochs():
    m, X, y = blob_model(1)
    start = {k: w.copy() for k, w, _ in m.parameters() if k.endswith("weight")}
    train(m, (X, y), TrainConfig(epochs=2, lr=0.05, freeze_policy="sequential", batch_size=16))
    for k, w, _ in m.parameters():
        if k.endswith("weight"):
            assert not np.array_equal(start[k], w), k


def test_trainable_count_matches_original_regular():
    rng = np.random.default_rng(8)
    m = mixed_model(rng)
    for e in range(6):
        apply_freeze(m, "regular", e)
        assert m.trainable_weight_count() == 2


# -- training loop ------------------------------------------------------------


def test_lr_zero_keeps_loss():
    m, X, y = blob_model()
    h = train(m, (X, y), TrainConfig(epochs=3, lr=0.0))
    assert all(abs(r["loss"] - h[0]["loss"]) < 1e-12 for r in h)


def test_separable_reaches_high_accuracy():
    X, y = separable(n=256, dim=4, seed=0)
    m = zoo.mlp(in_features=4, hidden=16, classes=2, seed=0)
    h = train(m, (X, y), TrainConfig(epochs=30, lr=0.05, batch_size=16))
    assert h[-1]["accuracy"] >= 0.99


def test_training_deterministic():
    runs = []
    for _ in range(2):
        m, X, y = blob_model()
        runs.append(history_csv(train(m, (X, y), TrainConfig(epochs=3, lr=0.05, freeze_policy="sequential"))))
    assert runs[0] == runs[1]
    assert runs[0].splitlines()[0] == "epoch,loss,accuracy,step_time"


def test_training_wallclock_step_time():
    m, X, y = blob_model()
    h = train(m, (X, y), TrainConfig(epochs=1, lr=0.01, timing="wallclock"))
    assert h[0]["step_time"] > 0


def test_train_rejects_bad_dataset():
    m, X, y = blob_model()
    with pytest.raises(ValueError):
        train(m, (X, y[:-1]), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(m, (X[:, :3], y), TrainConfig(epochs=1))
