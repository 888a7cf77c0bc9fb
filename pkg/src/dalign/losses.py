"""Source log-loss, target entropy loss and their weighted sum.

All functions take class probabilities (rows summing to one) and return the
loss value together with its gradient with respect to those probabilities.
Logarithms are taken of probabilities floored at ``PROB_FLOOR``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelIndexError, NormalizationError

PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0
    class_count: int = 2

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.class_count < 2:
            raise ValueError("need at least two classes")


@dataclass(frozen=True)
class LossValue:
    l_source: float
    l_target: float
    total: float


def _check_rows(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise NormalizationError("probabilities must be a 2-D array")
    if probs.size and (np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL)):
        raise NormalizationError("probability rows must be non-negative and sum to 1")
    return probs


def source_log_loss(probs, labels):
    """Mean negative log-probability of the true labels."""
    probs = _check_rows(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise LabelIndexError(f"expected {n} labels, got {labels.shape}")
    if n == 0:
        return 0.0, np.zeros_like(probs)
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelIndexError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    p_true = np.maximum(probs[rows, labels], PROB_FLOOR)
    value = float(-np.log(p_true).sum() / n)
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / (n * p_true)
    return value, grad


def target_entropy_loss(probs):
    """Mean Shannon entropy (nats) of the predicted class distributions."""
    probs = _check_rows(probs)
    m = probs.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(probs)
    log_p = np.log(np.maximum(probs, PROB_FLOOR))
    value = float(-(probs * log_p).sum() / m)
    grad = -(log_p + 1.0) / m
    return value, grad


def combined_loss(probs, n_source: int, labels_source, cfg: LossConfig):
    """``L = L_source + lam * L_target`` on a batch laid out source-then-target.

    Returns the :class:`LossValue` and ``dL/dprobs`` for the whole batch.
    """
    probs = np.asarray(probs, dtype=np.float64)
    l_s, g_s = source_log_loss(probs[:n_source], labels_source)
    l_t, g_t = target_entropy_loss(probs[n_source:])
    value = LossValue(l_s, l_t, l_s + cfg.lam * l_t)
    return value, np.concatenate([g_s, cfg.lam * g_t], axis=0)
