"""Brute-force references for gradients and DA-layer statistics.

Nothing in this module reuses code from ``dal``, ``losses`` or ``net``; the
loops are written out deliberately so that the checks stay independent of
the vectorized paths they verify.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dal import ALPHA_MAX, ALPHA_MIN, MixedStats
from .errors import AlphaRangeError, DimensionError, EmptyDomainError, EvaluationError


@dataclass(frozen=True)
class FdConfig:
    step: float = 1e-5
    scheme: str = "central"
    rel_tol: float = 1e-5
    abs_floor: float = 1e-8

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("finite-difference step must be positive")
        if self.scheme != "central":
            raise ValueError("only the central scheme is supported")


def fd_gradient(f, at, cfg: FdConfig = FdConfig()) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every entry of ``at``."""
    x = np.array(at, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    h = cfg.step
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x))
        flat[i] = orig - h
        f_minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise EvaluationError(f"non-finite evaluation at component {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_relative_error(a, b, floor: float = 1e-8) -> float:
    err = relative_error(a, b, floor)
    return float(err.max()) if err.size else 0.0


def _channel_lists(x):
    """Nested lists ``[channel][value]`` pooling batch and spatial positions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 4):
        raise DimensionError("expected a 2-D or 4-D tensor")
    channels = x.shape[1]
    out = [[] for _ in range(channels)]
    for sample in x:
        for c in range(channels):
            block = sample[c]
            if np.ndim(block) == 0:
                out[c].append(float(block))
            else:
                for row in block:
                    for v in row:
                        out[c].append(float(v))
    return out


def _brute_stats(x_s, x_t, alpha, eps):
    cs, ct = _channel_lists(x_s), _channel_lists(x_t)
    if len(cs) != len(ct):
        raise DimensionError("channel extents differ")
    a, b = alpha, 1.0 - alpha
    mu_st, var_st, mu_ts, var_ts = [], [], [], []
    for src, tgt in zip(cs, ct):
        if not src or not tgt:
            raise EmptyDomainError("empty domain block")
        ns, nt = len(src), len(tgt)
        m1 = a / ns * sum(src) + b / nt * sum(tgt)
        m2 = b / ns * sum(src) + a / nt * sum(tgt)
        v1 = a / ns * sum((v - m1) ** 2 for v in src) + b / nt * sum((v - m1) ** 2 for v in tgt)
        v2 = b / ns * sum((v - m2) ** 2 for v in src) + a / nt * sum((v - m2) ** 2 for v in tgt)
        mu_st.append(m1)
        var_st.append(v1)
        mu_ts.append(m2)
        var_ts.append(v2)
    return MixedStats(
        np.array(mu_st), np.array(var_st), np.array(mu_ts), np.array(var_ts), float(eps), float(alpha)
    )


def brute_statistics(x_s, x_t, alpha: float, eps: float = 1e-5) -> MixedStats:
    """Direct double-loop evaluation of the four mixed-statistic sums."""
    if np.shape(x_s)[0] == 0 or np.shape(x_t)[0] == 0:
        raise EmptyDomainError("empty domain block")
    if not ALPHA_MIN <= alpha <= ALPHA_MAX:
        raise AlphaRangeError(f"alpha={alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
    return _brute_stats(x_s, x_t, alpha, eps)


def brute_da_forward(x_s, x_t, alpha: float, eps: float = 1e-5):
    """Reference DA-layer outputs.

    No range check on ``alpha``: the formulas are smooth across the clip
    boundaries, so finite differences can straddle them.
    """
    stats = _brute_stats(x_s, x_t, alpha, eps)
    x_s = np.asarray(x_s, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    y_s = np.empty_like(x_s)
    y_t = np.empty_like(x_t)
    for c in range(x_s.shape[1]):
        y_s[:, c] = (x_s[:, c] - stats.mu_st[c]) / math.sqrt(eps + stats.var_st[c])
        y_t[:, c] = (x_t[:, c] - stats.mu_ts[c]) / math.sqrt(eps + stats.var_ts[c])
    return y_s, y_t
