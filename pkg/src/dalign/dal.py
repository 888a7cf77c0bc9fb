"""Domain-alignment layer: batch normalization with cross-domain mixed statistics.

A DA-layer normalizes the source block with statistics of the mixture
``alpha * source + (1 - alpha) * target`` and the target block with the
mirrored mixture.  ``alpha = 1`` normalizes each domain on its own (AdaBN
style); ``alpha = 0.5`` normalizes both with the pooled statistics.

Statistics pool the batch and spatial axes of each channel, so the
effective counts are ``n * h * w``.  A single scalar ``alpha`` is shared by
all channels of a layer.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import AlphaRangeError, DimensionError, EmptyDomainError, StateError
from .tensor import channel_view

ALPHA_MIN = 0.5
ALPHA_MAX = 1.0


class Mode(enum.Enum):
    TRAIN = "train"
    FROZEN = "frozen"


@dataclass
class MixedStats:
    """Per-channel statistics of the two mixed distributions."""

    mu_st: np.ndarray
    var_st: np.ndarray
    mu_ts: np.ndarray
    var_ts: np.ndarray
    eps: float
    alpha_used: float

    @property
    def inv_std_st(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.eps + self.var_st)

    @property
    def inv_std_ts(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.eps + self.var_ts)


@dataclass
class DaLayerState:
    channels: int
    alpha: float = 0.75
    eps: float = 1e-5
    momentum_ma: float = 0.1
    moving_mu_s: np.ndarray = None
    moving_var_s: np.ndarray = None
    moving_mu_t: np.ndarray = None
    moving_var_t: np.ndarray = None
    mode: Mode = Mode.TRAIN
    frozen_stats: MixedStats | None = None
    ma_updates: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise DimensionError("a DA-layer needs at least one channel")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.momentum_ma <= 1.0:
            raise ValueError("momentum_ma must lie in (0, 1]")
        c = self.channels
        if self.moving_mu_s is None:
            self.moving_mu_s = np.zeros(c)
        if self.moving_var_s is None:
            self.moving_var_s = np.ones(c)
        if self.moving_mu_t is None:
            self.moving_mu_t = np.zeros(c)
        if self.moving_var_t is None:
            self.moving_var_t = np.ones(c)
        clip_alpha(self)


@dataclass
class DaCache:
    """Everything the backward pass needs; raw inputs are deliberately absent."""

    y_s: np.ndarray  # (n_s, C, P)
    y_t: np.ndarray
    y_st: np.ndarray  # source inputs under the target path's statistics
    y_ts: np.ndarray  # target inputs under the source path's statistics
    stats: MixedStats
    count_s: int  # n_s * positions
    count_t: int
    shape_s: tuple = field(default=())
    shape_t: tuple = field(default=())
    frozen: bool = False


def clip_alpha(state: DaLayerState) -> DaLayerState:
    state.alpha = float(min(ALPHA_MAX, max(ALPHA_MIN, state.alpha)))
    return state


def _check_pair(x_s, x_t):
    vs, vt = channel_view(x_s), channel_view(x_t)
    if vs.shape[1] != vt.shape[1]:
        raise DimensionError(f"channel extents differ: {vs.shape[1]} vs {vt.shape[1]}")
    if np.ndim(x_s) != np.ndim(x_t) or np.shape(x_s)[2:] != np.shape(x_t)[2:]:
        raise DimensionError("source and target blocks have different spatial layouts")
    return vs, vt


def compute_mixed_statistics(x_s, x_t, alpha: float, eps: float = 1e-5) -> MixedStats:
    vs, vt = _check_pair(x_s, x_t)
    if vs.shape[0] == 0 or vt.shape[0] == 0:
        raise EmptyDomainError("both the source and the target block must be non-empty")
    if not ALPHA_MIN <= alpha <= ALPHA_MAX:
        raise AlphaRangeError(f"alpha={alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
    n_s = vs.shape[0] * vs.shape[2]
    n_t = vt.shape[0] * vt.shape[2]
    a, b = float(alpha), 1.0 - float(alpha)

    sum_s = vs.sum(axis=(0, 2))
    sum_t = vt.sum(axis=(0, 2))
    mu_st = a / n_s * sum_s + b / n_t * sum_t
    mu_ts = b / n_s * sum_s + a / n_t * sum_t

    def mixed_var(mu, w_s, w_t):
        ds = vs - mu[None, :, None]
        dt = vt - mu[None, :, None]
        return w_s / n_s * (ds * ds).sum(axis=(0, 2)) + w_t / n_t * (dt * dt).sum(axis=(0, 2))

    return MixedStats(
        mu_st=mu_st,
        var_st=mixed_var(mu_st, a, b),
        mu_ts=mu_ts,
        var_ts=mixed_var(mu_ts, b, a),
        eps=float(eps),
        alpha_used=float(alpha),
    )


def _normalize(view, mu, inv_std):
    return (view - mu[None, :, None]) * inv_std[None, :, None]


def da_forward(x_s, x_t, state: DaLayerState):
    """Normalize both blocks; returns ``(y_s, y_t, cache)`` shaped like the inputs.

    In training mode the batch statistics are used and the moving averages
    are updated.  In frozen mode the statistics captured by :func:`freeze`
    are used and either block may be empty.
    """
    clip_alpha(state)
    vs, vt = _check_pair(x_s, x_t)
    if vs.shape[1] != state.channels:
        raise DimensionError(f"layer has {state.channels} channels, input has {vs.shape[1]}")
    if state.mode is Mode.FROZEN:
        if state.frozen_stats is None:
            raise StateError("frozen DA-layer has no stored statistics")
        stats = state.frozen_stats
        frozen = True
    else:
        stats = compute_mixed_statistics(x_s, x_t, state.alpha, state.eps)
        update_moving_averages(state, x_s, x_t)
        frozen = False

    r_st, r_ts = stats.inv_std_st, stats.inv_std_ts
    y_s = _normalize(vs, stats.mu_st, r_st)
    y_t = _normalize(vt, stats.mu_ts, r_ts)
    cache = DaCache(
        y_s=y_s,
        y_t=y_t,
        y_st=_normalize(vs, stats.mu_ts, r_ts),
        y_ts=_normalize(vt, stats.mu_st, r_st),
        stats=stats,
        count_s=vs.shape[0] * vs.shape[2],
        count_t=vt.shape[0] * vt.shape[2],
        shape_s=np.shape(x_s),
        shape_t=np.shape(x_t),
        frozen=frozen,
    )
    return y_s.reshape(np.shape(x_s)), y_t.reshape(np.shape(x_t)), cache


def da_backward(cache: DaCache, g_s, g_t):
    """Gradients w.r.t. both input blocks and alpha from upstream ``dL/dy``."""
    if cache.frozen:
        raise StateError("backward requires a training-mode forward cache")
    g_s = np.asarray(g_s, dtype=np.float64)
    g_t = np.asarray(g_t, dtype=np.float64)
    if g_s.shape != tuple(cache.shape_s) or g_t.shape != tuple(cache.shape_t):
        raise DimensionError(
            f"gradient shapes {g_s.shape}, {g_t.shape} do not match "
            f"cached {tuple(cache.shape_s)}, {tuple(cache.shape_t)}"
        )
    gs, gt = channel_view(g_s), channel_view(g_t)
    a = cache.stats.alpha_used
    b = 1.0 - a
    n_s, n_t = cache.count_s, cache.count_t
    r_st = cache.stats.inv_std_st[None, :, None]
    r_ts = cache.stats.inv_std_ts[None, :, None]
    y_s, y_t, y_st, y_ts = cache.y_s, cache.y_t, cache.y_st, cache.y_ts

    sum_gs = gs.sum(axis=(0, 2))
    sum_gt = gt.sum(axis=(0, 2))
    sum_ygs = (y_s * gs).sum(axis=(0, 2))
    sum_ygt = (y_t * gt).sum(axis=(0, 2))
    Gs, Gt = sum_gs[None, :, None], sum_gt[None, :, None]
    Hs, Ht = sum_ygs[None, :, None], sum_ygt[None, :, None]

    dx_s = r_st * (gs - a / n_s * (Gs + y_s * Hs)) - r_ts * (b / n_s) * (Gt + y_st * Ht)
    dx_t = r_ts * (gt - a / n_t * (Gt + y_t * Ht)) - r_st * (b / n_t) * (Gs + y_ts * Hs)

    def mean(v):
        return v.sum(axis=(0, 2)) / v.shape[0] / v.shape[2]

    d_alpha = (
        (mean(y_ts) - mean(y_s)) * sum_gs
        + 0.5 * (mean(y_ts * y_ts) - mean(y_s * y_s)) * sum_ygs
        + (mean(y_st) - mean(y_t)) * sum_gt
        + 0.5 * (mean(y_st * y_st) - mean(y_t * y_t)) * sum_ygt
    ).sum()
    return dx_s.reshape(g_s.shape), dx_t.reshape(g_t.shape), float(d_alpha)


def update_moving_averages(state: DaLayerState, x_s, x_t) -> DaLayerState:
    """Exponential averages of the plain per-domain batch statistics."""
    vs, vt = _check_pair(x_s, x_t)
    m = state.momentum_ma
    for view, mu_name, var_name in (
        (vs, "moving_mu_s", "moving_var_s"),
        (vt, "moving_mu_t", "moving_var_t"),
    ):
        count = view.shape[0] * view.shape[2]
        mu = view.sum(axis=(0, 2)) / count
        dev = view - mu[None, :, None]
        var = (dev * dev).sum(axis=(0, 2)) / count
        setattr(state, mu_name, (1.0 - m) * getattr(state, mu_name) + m * mu)
        setattr(state, var_name, (1.0 - m) * getattr(state, var_name) + m * var)
    state.ma_updates += 1
    return state


def mix_moving_statistics(state: DaLayerState) -> MixedStats:
    """Mix the per-domain moving statistics with the current alpha.

    Means mix linearly; each mixed variance is the law-of-total-variance
    combination around the corresponding mixed mean.
    """
    a = state.alpha
    b = 1.0 - a
    mu_s, var_s = state.moving_mu_s, state.moving_var_s
    mu_t, var_t = state.moving_mu_t, state.moving_var_t
    mu_st = a * mu_s + b * mu_t
    mu_ts = b * mu_s + a * mu_t
    var_st = a * (var_s + (mu_s - mu_st) ** 2) + b * (var_t + (mu_t - mu_st) ** 2)
    var_ts = b * (var_s + (mu_s - mu_ts) ** 2) + a * (var_t + (mu_t - mu_ts) ** 2)
    return MixedStats(mu_st, var_st, mu_ts, var_ts, state.eps, a)


def freeze(state: DaLayerState) -> DaLayerState:
    if state.ma_updates == 0:
        raise StateError("cannot freeze a DA-layer whose moving averages were never updated")
    clip_alpha(state)
    state.frozen_stats = mix_moving_statistics(state)
    state.mode = Mode.FROZEN
    return state


def unfreeze(state: DaLayerState) -> DaLayerState:
    state.mode = Mode.TRAIN
    state.frozen_stats = None
    return state
