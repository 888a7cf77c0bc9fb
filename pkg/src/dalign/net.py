"""Small MLP toolkit with DA-layers, fused softmax losses and SGD.

A network is an ordered list of layers ending in a softmax head.  Batches
are laid out source rows first, then target rows; only DA-layers look at
that split, every other layer treats rows uniformly.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import dal
from .errors import DimensionError, LayoutError, StateError
from .losses import LossConfig, LossValue, combined_loss
from .tensor import matmul


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_out = int(n_in), int(n_out)
        limit = math.sqrt(6.0 / self.n_in)
        if rng is None:
            self.W = np.zeros((self.n_in, self.n_out))
        else:
            self.W = rng.uniform(-limit, limit, size=(self.n_in, self.n_out))
        self.b = np.zeros(self.n_out)

    def spec(self):
        return {"type": "dense", "in": self.n_in, "out": self.n_out}

    def forward(self, x, n_source, train):
        if not train:
            return fixed_order_matmul(x, self.W) + self.b, None
        return matmul(x, self.W) + self.b, x

    def backward(self, x, g):
        return g @ self.W.T, {"W": x.T @ g, "b": g.sum(axis=0)}


class ReLU:
    kind = "relu"

    def spec(self):
        return {"type": "relu"}

    def forward(self, x, n_source, train):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, mask, g):
        return np.where(mask, g, 0.0), {}


class DALayer:
    kind = "dalayer"

    def __init__(self, channels: int, alpha: float = 0.75, trainable_alpha: bool = True,
                 eps: float = 1e-5, momentum_ma: float = 0.1):
        self.state = dal.DaLayerState(channels=int(channels), alpha=alpha, eps=eps, momentum_ma=momentum_ma)
        self.trainable_alpha = bool(trainable_alpha)

    @property
    def channels(self):
        return self.state.channels

    @property
    def alpha(self):
        return self.state.alpha

    def spec(self):
        return {"type": "dalayer", "channels": self.channels, "trainable_alpha": self.trainable_alpha}

    def forward(self, x, n_source, train):
        if train and self.state.mode is dal.Mode.FROZEN:
            raise StateError("training forward through a frozen DA-layer")
        y_s, y_t, cache = dal.da_forward(x[:n_source], x[n_source:], self.state)
        return np.concatenate([y_s, y_t], axis=0), cache

    def backward(self, cache, g):
        n_source = cache.shape_s[0]
        dx_s, dx_t, d_alpha = dal.da_backward(cache, g[:n_source], g[n_source:])
        return np.concatenate([dx_s, dx_t], axis=0), {"alpha": np.array(d_alpha)}


class SoftmaxHead:
    kind = "softmax"

    def __init__(self, classes: int):
        self.classes = int(classes)

    def spec(self):
        return {"type": "softmax", "classes": self.classes}

    def forward(self, x, n_source, train):
        if not train:
            return _rowwise_softmax(x), None
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), None


def fixed_order_matmul(x, W):
    """``x @ W`` accumulated column by column.

    Every output entry is built from the same sequence of correctly rounded
    scalar operations whatever the number of rows, unlike a BLAS kernel
    whose blocking depends on the matrix shape.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"inner extents differ: {x.shape} @ {W.shape}")
    out = np.zeros((x.shape[0], W.shape[1]))
    for i in range(W.shape[0]):
        out = out + x[:, i:i + 1] * W[i]
    return out


def _rowwise_softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.array([[math.exp(v) for v in row] for row in z.tolist()]).reshape(z.shape)
    total = np.zeros((z.shape[0], 1))
    for k in range(z.shape[1]):
        total = total + e[:, k:k + 1]
    return e / total


def softmax(logits):
    return SoftmaxHead(np.shape(logits)[1]).forward(np.asarray(logits, dtype=np.float64), 0, False)[0]


def fused_logit_gradient(logits, n_source: int, labels_source, cfg: LossConfig):
    """``dL/dlogits`` for the softmax head fused with the combined loss.

    Source rows get ``(p - onehot) / n``; target rows get the entropy
    gradient ``-lam * p * (log p + H) / m`` computed from the log-softmax.
    """
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    grad = np.zeros_like(p)
    n = n_source
    m = p.shape[0] - n_source
    if n:
        labels = np.asarray(labels_source, dtype=np.int64)
        grad[:n] = p[:n]
        grad[np.arange(n), labels] -= 1.0
        grad[:n] /= n
    if m and cfg.lam:
        pt, lpt = p[n:], log_p[n:]
        entropy = -(pt * lpt).sum(axis=1, keepdims=True)
        grad[n:] = -cfg.lam * pt * (lpt + entropy) / m
    return grad


@dataclass
class ForwardCache:
    token: int
    n_source: int
    layer_caches: list
    logits: np.ndarray
    probs: np.ndarray


def _build_layer(spec, rng, da_defaults):
    kind = spec["type"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"], rng)
    if kind == "relu":
        return ReLU()
    if kind == "dalayer":
        opts = dict(da_defaults)
        opts.update({k: spec[k] for k in ("alpha", "trainable_alpha", "eps", "momentum_ma") if k in spec})
        return DALayer(spec["channels"], **opts)
    if kind == "softmax":
        return SoftmaxHead(spec["classes"])
    raise DimensionError(f"unknown layer type {kind!r}")


class Network:
    """Ordered layer stack sharing weights between the source and target predictors."""

    def __init__(self, layers, input_dim: int):
        self.layers = list(layers)
        self.input_dim = int(input_dim)
        self._token = 0
        self._validate()

    @classmethod
    def from_specs(cls, specs, input_dim, rng=None, **da_defaults):
        return cls([_build_layer(s, rng, da_defaults) for s in specs], input_dim)

    def _validate(self):
        if not self.layers or not isinstance(self.layers[-1], SoftmaxHead):
            raise DimensionError("the last layer must be a softmax head")
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SoftmaxHead) and i != len(self.layers) - 1:
                raise DimensionError("exactly one softmax head is allowed, in last position")
            if isinstance(layer, Dense):
                if layer.n_in != width:
                    raise DimensionError(f"layer {i}: expects {layer.n_in} inputs, receives {width}")
                width = layer.n_out
            elif isinstance(layer, DALayer) and layer.channels != width:
                raise DimensionError(f"layer {i}: DA-layer has {layer.channels} channels, receives {width}")
            elif isinstance(layer, SoftmaxHead) and layer.classes != width:
                raise DimensionError(f"softmax head expects {layer.classes} classes, receives {width}")

    @property
    def classes(self):
        return self.layers[-1].classes

    @property
    def da_layers(self):
        return [layer for layer in self.layers if isinstance(layer, DALayer)]

    @property
    def frozen(self):
        return any(d.state.mode is dal.Mode.FROZEN for d in self.da_layers)

    def alphas(self):
        return [d.alpha for d in self.da_layers]

    def specs(self):
        return [layer.spec() for layer in self.layers]

    # parameters -------------------------------------------------------

    def get_params(self) -> dict:
        params = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                params[f"{i}.W"] = layer.W.copy()
                params[f"{i}.b"] = layer.b.copy()
            elif isinstance(layer, DALayer):
                params[f"{i}.alpha"] = np.array(layer.alpha)
        return params

    def set_params(self, params: dict):
        for name, value in params.items():
            idx, attr = name.split(".")
            layer = self.layers[int(idx)]
            if attr == "alpha":
                layer.state.alpha = float(value)
                dal.clip_alpha(layer.state)
            else:
                current = getattr(layer, attr)
                value = np.asarray(value, dtype=np.float64)
                if value.shape != current.shape:
                    raise DimensionError(f"{name}: shape {value.shape} != {current.shape}")
                setattr(layer, attr, value.copy())
        self._token += 1

    def trainable(self) -> set:
        names = set()
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                names.update({f"{i}.W", f"{i}.b"})
            elif isinstance(layer, DALayer) and layer.trainable_alpha:
                names.add(f"{i}.alpha")
        return names

    def parameter_count(self) -> int:
        return sum(int(np.size(v)) for v in self.get_params().values())

    # forward / backward ----------------------------------------------

    def forward(self, x, n_source: int, train: bool = True):
        """Class probabilities for a source-then-target batch.

        Training mode returns ``(probs, cache)``.  Inference (``train=False``)
        needs frozen DA-layers and returns ``(probs, None)``; there every
        output row depends only on its own input row, bit for bit.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"expected input of shape (n, {self.input_dim}), got {x.shape}")
        if not 0 <= n_source <= x.shape[0]:
            raise LayoutError(f"n_source={n_source} does not fit a batch of {x.shape[0]}")
        if not train:
            if self.da_layers and not self.frozen:
                raise StateError("inference requires frozen DA-layers")
            return self.activations(x, n_source, len(self.layers)), None
        caches = []
        h = x
        for layer in self.layers[:-1]:
            h, c = layer.forward(h, n_source, True)
            caches.append(c)
        probs, _ = self.layers[-1].forward(h, n_source, True)
        self._token += 1
        return probs, ForwardCache(self._token, n_source, caches, h, probs)

    def activations(self, x, n_source, upto: int):
        """Inference-mode output of ``self.layers[:upto]``."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers[:upto]:
            h, _ = layer.forward(h, n_source, False)
        return h

    def predict(self, x, domain: str = "target"):
        """Frozen-mode class probabilities with every row routed through one domain's path."""
        x = np.asarray(x, dtype=np.float64)
        n_source = x.shape[0] if domain == "source" else 0
        return self.forward(x, n_source, train=False)[0]

    def backward(self, cache: ForwardCache, d_logits) -> dict:
        if cache is None or cache.token != self._token:
            raise StateError("stale forward cache")
        g = np.asarray(d_logits, dtype=np.float64)
        if g.shape != cache.logits.shape:
            raise DimensionError("logit gradient shape does not match the forward pass")
        grads = {}
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            g, pg = layer.backward(cache.layer_caches[i], g)
            for k, v in pg.items():
                grads[f"{i}.{k}"] = v
        return grads

    def loss_and_grads(self, x, n_source, labels_source, cfg: LossConfig):
        probs, cache = self.forward(x, n_source, train=True)
        value, _ = combined_loss(probs, n_source, labels_source, cfg)
        d_logits = fused_logit_gradient(cache.logits, n_source, labels_source, cfg)
        return value, self.backward(cache, d_logits)

    def loss_value(self, x, n_source, labels_source, cfg: LossConfig) -> LossValue:
        probs, _ = self.forward(x, n_source, train=True)
        return combined_loss(probs, n_source, labels_source, cfg)[0]

    # inference state --------------------------------------------------

    def freeze(self):
        for d in self.da_layers:
            dal.freeze(d.state)
        self._token += 1
        return self

    def unfreeze(self):
        for d in self.da_layers:
            dal.unfreeze(d.state)
        return self

    def frozen_copy(self):
        return copy.deepcopy(self).freeze()


def build_mlp(input_dim, hidden, classes, *, da_layers=True, da_on_output=True, alpha=0.75,
              trainable_alpha=True, eps=1e-5, momentum_ma=0.1, rng=None) -> Network:
    """Dense layers each followed (optionally) by a DA-layer, ReLU between hidden layers."""
    specs = []
    width = input_dim
    for h in hidden:
        specs.append({"type": "dense", "in": width, "out": h})
        if da_layers:
            specs.append({"type": "dalayer", "channels": h})
        specs.append({"type": "relu"})
        width = h
    specs.append({"type": "dense", "in": width, "out": classes})
    if da_layers and da_on_output:
        specs.append({"type": "dalayer", "channels": classes})
    specs.append({"type": "softmax", "classes": classes})
    return Network.from_specs(specs, input_dim, rng=rng, alpha=alpha, trainable_alpha=trainable_alpha,
                              eps=eps, momentum_ma=momentum_ma)


# optimization -------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule as a function of training progress ``p`` in [0, 1].

    ``step`` divides the rate by ``factor`` once ``p`` reaches ``drop_at``;
    ``inv`` is ``l0 / (1 + gamma * p) ** beta``.
    """

    kind: str = "inv"
    drop_at: float = 0.9
    factor: float = 10.0
    gamma: float = 10.0
    beta: float = 0.75

    def __post_init__(self):
        if self.kind not in ("inv", "step", "constant"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    def rate(self, l0: float, progress: float) -> float:
        p = min(1.0, max(0.0, float(progress)))
        if self.kind == "inv":
            return l0 / (1.0 + self.gamma * p) ** self.beta
        if self.kind == "step":
            return l0 / self.factor if p >= self.drop_at else l0
        return l0


@dataclass
class OptimizerState:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Schedule = field(default_factory=Schedule)
    velocity: dict = field(default_factory=dict)

    def learning_rate(self, progress: float) -> float:
        return self.schedule.rate(self.lr, progress)


def sgd_step(opt: OptimizerState, params: dict, grads: dict, progress: float) -> dict:
    """Momentum SGD with L2 weight decay; decay is skipped for alpha parameters.

    Only names present in ``grads`` are updated.  Returns a new parameter dict.
    """
    lr = opt.learning_rate(progress)
    out = dict(params)
    for name, g in grads.items():
        theta = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != theta.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        decay = 0.0 if name.endswith("alpha") else opt.weight_decay
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
        v = opt.momentum * v - lr * (g + decay * theta)
        opt.velocity[name] = v
        out[name] = theta + v
    return out
