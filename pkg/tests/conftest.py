"""Shared helpers for the test suite."""
import numpy as np
import pytest

from dalign.dal import DaLayerState, da_backward, da_forward
from dalign.oracle import FdConfig, brute_da_forward, fd_gradient, relative_error

# |a - b| <= max(rel_tol * max(|a|, |b|), abs_floor)  <=>  relative_error(a, b, floor=abs_floor / rel_tol) <= rel_tol
GRAD_TOL = 1e-5
GRAD_FLOOR = 1e-8 / GRAD_TOL


def random_block(rng, n, channels, spatial, min_var=0.1):
    """One domain block with a random location and scale; near-constant channels are redrawn."""
    shape = (n, channels) if spatial == 1 else (n, channels, 3, 3)
    while True:
        loc = rng.normal(0.0, 0.5)
        scale = rng.uniform(0.8, 1.5)
        x = loc + scale * rng.standard_normal(shape)
        per_channel = x.reshape(n, channels, -1).transpose(1, 0, 2).reshape(channels, -1).var(axis=1)
        if per_channel.min() >= min_var:
            return x


def da_gradient_case(rng, n_s, n_t, channels, spatial, alpha, eps=1e-5):
    """Analytic and finite-difference gradients of a quadratic test loss through one DA-layer.

    ``L = sum(w * y) + 0.25 * sum(v * y**2)`` over both outputs, so the
    upstream gradient is ``w + 0.5 * v * y``.  The reference loss is built on
    the brute-force forward pass, never on ``da_forward``.
    """
    x_s = random_block(rng, n_s, channels, spatial)
    x_t = random_block(rng, n_t, channels, spatial)
    w_s, w_t = rng.standard_normal(x_s.shape), rng.standard_normal(x_t.shape)
    v_s, v_t = rng.standard_normal(x_s.shape), rng.standard_normal(x_t.shape)

    def loss(xs, xt, a):
        ys, yt = brute_da_forward(xs, xt, a, eps)
        return (w_s * ys).sum() + (w_t * yt).sum() + 0.25 * ((v_s * ys * ys).sum() + (v_t * yt * yt).sum())

    state = DaLayerState(channels, alpha=alpha, eps=eps)
    y_s, y_t, cache = da_forward(x_s, x_t, state)
    dx_s, dx_t, d_alpha = da_backward(cache, w_s + 0.5 * v_s * y_s, w_t + 0.5 * v_t * y_t)

    cfg = FdConfig()
    fd_s = fd_gradient(lambda z: loss(z, x_t, alpha), x_s, cfg)
    fd_t = fd_gradient(lambda z: loss(x_s, z, alpha), x_t, cfg)
    fd_a = fd_gradient(lambda z: loss(x_s, x_t, float(z[0])), np.array([alpha]), cfg)[0]
    return (dx_s, fd_s), (dx_t, fd_t), (d_alpha, fd_a)


def worst_grad_error(pairs):
    return max(float(relative_error(a, b, floor=GRAD_FLOOR).max()) for a, b in pairs)


def plain_bn(x, eps):
    """Textbook training-mode batch norm without affine, pooling batch and spatial axes."""
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    mu = x.mean(axis=axes, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary ------------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
