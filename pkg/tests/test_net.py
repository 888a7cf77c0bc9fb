import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GRAD_FLOOR
from dalign.errors import DimensionError, LayoutError, StateError
from dalign.losses import LossConfig
from dalign.net import (Dense, Network, OptimizerState, Schedule, SoftmaxHead, build_mlp,
                        fixed_order_matmul, fused_logit_gradient, sgd_step, softmax)
from dalign.oracle import FdConfig, fd_gradient, relative_error


def small_net(seed=0, **kw):
    return build_mlp(4, [5, 3], 3, rng=np.random.default_rng(seed), **kw)


def test_symmetric_softmax():
    dense = Dense(2, 2)
    dense.W = np.eye(2)
    net = Network([dense, SoftmaxHead(2)], 2)
    probs, _ = net.forward(np.zeros((1, 2)), 1)
    assert np.array_equal(probs, [[0.5, 0.5]])


def test_layout_and_shape_errors():
    net = small_net()
    with pytest.raises(LayoutError):
        net.forward(np.zeros((3, 4)), 4)
    with pytest.raises(DimensionError):
        net.forward(np.zeros((3, 5)), 1)
    with pytest.raises(DimensionError):
        Network([Dense(2, 3), SoftmaxHead(2)], 2)
    with pytest.raises(DimensionError):
        Network([SoftmaxHead(2), Dense(2, 2), SoftmaxHead(2)], 2)


def test_probabilities_row_normalized(rng):
    probs, _ = small_net().forward(rng.normal(size=(6, 4)), 3)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-15)


def test_alpha_half_paths_compute_the_same_function(rng):
    net = small_net(alpha=0.5)
    x = rng.normal(size=(4, 4))
    probs, _ = net.forward(np.concatenate([x, x[::-1]]), 4)
    assert np.allclose(probs[:4], probs[4:][::-1], rtol=0, atol=1e-15)


def test_zero_upstream_gradient(rng):
    net = small_net()
    _, cache = net.forward(rng.normal(size=(6, 4)), 3)
    grads = net.backward(cache, np.zeros_like(cache.logits))
    assert set(grads) == net.trainable()
    assert all(not np.any(g) for g in grads.values())


def test_stale_cache(rng):
    net = small_net()
    _, cache = net.forward(rng.normal(size=(4, 4)), 2)
    net.forward(rng.normal(size=(4, 4)), 2)
    with pytest.raises(StateError):
        net.backward(cache, np.zeros_like(cache.logits))
    _, cache = net.forward(rng.normal(size=(4, 4)), 2)
    net.set_params(net.get_params())
    with pytest.raises(StateError):
        net.backward(cache, np.zeros_like(cache.logits))


def test_inference_requires_freeze(rng):
    net = small_net()
    with pytest.raises(StateError):
        net.forward(rng.normal(size=(2, 4)), 1, train=False)


def test_parameter_registry():
    net = small_net()
    names = net.trainable()
    assert {"1.alpha", "4.alpha", "7.alpha"} <= names
    assert net.parameter_count() == 4 * 5 + 5 + 5 * 3 + 3 + 3 * 3 + 3 + 3
    assert "1.alpha" not in small_net(trainable_alpha=False).trainable()


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradients(seed):
    rng = np.random.default_rng(seed)
    net = small_net(seed, alpha=0.8)
    x = rng.normal(size=(7, 4))
    labels = rng.integers(0, 3, size=4)
    cfg = LossConfig(lam=0.3, class_count=3)
    _, grads = net.loss_and_grads(x, 4, labels, cfg)
    base = net.get_params()
    for name, value in base.items():
        def f(v, name=name):
            net.set_params({**base, name: v})
            return net.loss_value(x, 4, labels, cfg).total
        fd = fd_gradient(f, value, FdConfig())
        net.set_params(base)
        assert relative_error(grads[name], fd, floor=GRAD_FLOOR).max() <= 1e-5, name


def test_fused_gradient_matches_probability_chain(rng):
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2])
    cfg = LossConfig(lam=0.7, class_count=3)
    from dalign.losses import combined_loss
    p = softmax(logits)
    _, dp = combined_loss(p, 2, labels, cfg)
    # softmax Jacobian applied row by row
    chain = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    assert np.allclose(fused_logit_gradient(logits, 2, labels, cfg), chain, atol=1e-14)


def test_fixed_order_matmul_is_row_local(rng):
    x, W = rng.normal(size=(37, 11)), rng.normal(size=(11, 6))
    full = fixed_order_matmul(x, W)
    assert np.allclose(full, x @ W, atol=1e-13)
    for i in (0, 5, 36):
        assert np.array_equal(full[i:i + 1], fixed_order_matmul(x[i:i + 1], W))


# optimizer ----------------------------------------------------------------------

def test_plain_sgd_step():
    opt = OptimizerState(lr=1.0, momentum=0.0, weight_decay=0.0, schedule=Schedule("constant"))
    out = sgd_step(opt, {"w": np.array(5.0)}, {"w": np.array(2.0)}, 0.0)
    assert out["w"] == 3.0


def test_momentum_and_decay():
    opt = OptimizerState(lr=0.1, momentum=0.9, weight_decay=0.5, schedule=Schedule("constant"))
    p = {"0.W": np.array([1.0]), "1.alpha": np.array(0.8)}
    g = {"0.W": np.array([1.0]), "1.alpha": np.array(1.0)}
    p1 = sgd_step(opt, p, g, 0.0)
    assert p1["0.W"][0] == pytest.approx(1.0 - 0.1 * 1.5)
    assert p1["1.alpha"] == pytest.approx(0.8 - 0.1)  # no decay on alpha
    p2 = sgd_step(opt, p1, g, 0.0)
    v = 0.9 * -0.15 - 0.1 * (1.0 + 0.5 * p1["0.W"][0])
    assert p2["0.W"][0] == pytest.approx(p1["0.W"][0] + v)


def test_inv_schedule():
    s = Schedule("inv")
    assert s.rate(0.01, 0.0) == 0.01
    assert s.rate(0.01, 1.0) == 0.01 / 11 ** 0.75
    assert round(s.rate(0.01, 1.0), 6) == 0.001656


def test_step_schedule():
    s = Schedule("step", drop_at=0.5, factor=10)
    assert s.rate(1.0, 0.49) == 1.0 and s.rate(1.0, 0.5) == 0.1
    with pytest.raises(ValueError):
        Schedule("cosine")


@given(st.floats(0, 1))
def test_inv_schedule_monotone(p):
    s = Schedule("inv")
    assert s.rate(1.0, p) <= 1.0 and s.rate(1.0, p) >= s.rate(1.0, 1.0)


def test_alpha_projected_after_step(rng):
    net = small_net(alpha=1.0)
    # a step pushing alpha upward is projected back onto the boundary
    opt = OptimizerState(lr=1.0, schedule=Schedule("constant"))
    params = sgd_step(opt, net.get_params(), {"1.alpha": np.array(-3.0)}, 0.0)
    assert params["1.alpha"] > 1.0
    net.set_params(params)
    assert net.alphas()[0] == 1.0


# equivalence with a plain batch-norm network -------------------------------------

class PlainBnMlp:
    """Independent reference: dense/BN/ReLU MLP with hand-written backward over the merged batch."""

    def __init__(self, weights, eps):
        self.W = [np.array(w) for w in weights[0::2]]
        self.b = [np.array(b) for b in weights[1::2]]
        self.eps = eps

    def loss_and_grads(self, x, labels):
        n = len(labels)
        acts, caches = x, []
        depth = len(self.W)
        for i in range(depth):
            z = acts @ self.W[i] + self.b[i]
            mu, var = z.mean(0), z.var(0)
            xhat = (z - mu) / np.sqrt(var + self.eps)
            relu = i < depth - 1
            caches.append((acts, xhat, var, relu, xhat > 0))
            acts = np.maximum(xhat, 0) if relu else xhat
        logits = acts - acts.max(1, keepdims=True)
        p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        loss = -np.log(p[np.arange(n), labels]).mean()
        g = np.zeros_like(p)
        g[:n] = p[:n]
        g[np.arange(n), labels] -= 1.0
        g[:n] /= n
        gW, gb = [None] * depth, [None] * depth
        for i in reversed(range(depth)):
            a_in, xhat, var, relu, mask = caches[i]
            if relu:
                g = g * mask
            m = xhat.shape[0]
            g = (m * g - g.sum(0) - xhat * (g * xhat).sum(0)) / (m * np.sqrt(var + self.eps))
            gW[i], gb[i] = a_in.T @ g, g.sum(0)
            g = g @ self.W[i].T
        return loss, gW, gb


def test_alpha_half_training_equals_plain_batch_norm():
    rng = np.random.default_rng(3)
    net = build_mlp(4, [6, 5], 3, alpha=0.5, trainable_alpha=False, rng=rng)
    dense = [i for i, layer in enumerate(net.layers) if layer.kind == "dense"]
    params = net.get_params()
    ref = PlainBnMlp([params[f"{i}.{k}"] for i in dense for k in ("W", "b")], eps=1e-5)
    opt = OptimizerState(lr=0.05, schedule=Schedule("inv"))
    ref_v = {}
    cfg = LossConfig(lam=0.0, class_count=3)
    steps = 40
    for t in range(steps):
        x = np.concatenate([rng.normal(size=(8, 4)), rng.normal(1.0, 2.0, size=(8, 4))])
        labels = rng.integers(0, 3, size=8)
        value, grads = net.loss_and_grads(x, 8, labels, cfg)
        net.set_params(sgd_step(opt, net.get_params(), {k: grads[k] for k in net.trainable()}, t / steps))
        ref_loss, gW, gb = ref.loss_and_grads(x, labels)
        lr = 0.05 / (1 + 10 * t / steps) ** 0.75
        for j in range(len(dense)):
            for arr, g, key in ((ref.W, gW, f"W{j}"), (ref.b, gb, f"b{j}")):
                v = 0.9 * ref_v.get(key, 0.0) - lr * (g[j] + 5e-4 * arr[j])
                ref_v[key] = v
                arr[j] = arr[j] + v
        assert abs(value.total - ref_loss) <= 1e-9, t


def test_deterministic_replay():
    from dalign.harness.config import load_config
    from dalign.harness.experiment import load_domains, train_seed
    cfg = load_config(overrides=["epochs=2", "seeds=[0]", "data.synthetic.n_source=96",
                                 "data.synthetic.n_target=96", "data.synthetic.rotation_deg=20"])
    curves = []
    for _ in range(2):
        source, target = load_domains(cfg, 0)
        _, rec = train_seed(cfg, 0, source, target, target)
        curves.append([(e.total, e.l_source, e.l_target, e.target_accuracy) for e in rec.epochs] + rec.alpha_trace)
    assert curves[0] == curves[1]
