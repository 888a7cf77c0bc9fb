"""Training loop, the four-variant ablation runner and lambda selection."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import (
    LabeledSet,
    UnlabeledSet,
    batches_per_epoch,
    compose_batches,
    generate_shifted_gaussians,
    load_tabular,
    proportional_counts,
)
from ..errors import ConfigError, TrainingError
from ..losses import LossConfig
from ..net import Network, OptimizerState, Schedule, build_mlp, sgd_step
from .config import ExperimentConfig, Variant

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    l_source: float
    l_target: float
    total: float
    target_accuracy: float
    learning_rate: float
    alphas: list


@dataclass
class SeedRecord:
    seed: int
    epochs: list = field(default_factory=list)
    alpha_trace: list = field(default_factory=list)  # (iteration, layer, alpha)
    final_target_accuracy: float = float("nan")
    final_source_accuracy: float = float("nan")


@dataclass
class RunReport:
    variant: str
    lam: float
    seeds: list
    mean_target_accuracy: float
    std_target_accuracy: float
    models: dict = field(default_factory=dict, repr=False)

    @property
    def accuracies(self):
        return [s.final_target_accuracy for s in self.seeds]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "lam": self.lam,
            "mean_target_accuracy": self.mean_target_accuracy,
            "std_target_accuracy": self.std_target_accuracy,
            "seeds": [dataclasses.asdict(s) for s in self.seeds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        seeds = []
        for s in d["seeds"]:
            s = dict(s)
            s["epochs"] = [EpochRecord(**e) for e in s["epochs"]]
            s["alpha_trace"] = [tuple(r) for r in s["alpha_trace"]]
            seeds.append(SeedRecord(**s))
        return cls(d["variant"], d["lam"], seeds, d["mean_target_accuracy"], d["std_target_accuracy"])


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def accuracy(net: Network, dataset: LabeledSet, domain: str = "target") -> float:
    if len(dataset) == 0:
        return float("nan")
    probs = net.predict(dataset.features, domain=domain)
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))


def load_domains(cfg: ExperimentConfig, seed: int):
    """Source set plus the target set (labels, when present, are for evaluation only)."""
    if cfg.data.source_path:
        source = load_tabular(cfg.data.source_path, labeled=True)
        target = load_tabular(cfg.data.target_path, labeled=cfg.data.target_labeled)
        return source, target
    return generate_shifted_gaussians(cfg.shift_spec(seed))


def batch_counts(cfg: ExperimentConfig, n_source_set: int, n_target_set: int) -> tuple[int, int]:
    if cfg.batch.mode == "proportional":
        return proportional_counts(cfg.batch.total, n_source_set, n_target_set)
    return cfg.batch.n_source, cfg.batch.n_target


def build_network(cfg: ExperimentConfig, input_dim: int, classes: int, seed: int) -> Network:
    v = cfg.variant
    return build_mlp(
        input_dim,
        [int(h) for h in cfg.network.hidden],
        classes,
        da_layers=v.has_da_layers,
        da_on_output=cfg.network.da_on_output,
        alpha=cfg.alpha_init,
        trainable_alpha=v is Variant.AUTODIAL,
        eps=cfg.network.eps,
        momentum_ma=cfg.network.momentum_ma,
        rng=np.random.default_rng([seed, 7]),
    )


def make_optimizer(cfg: ExperimentConfig) -> OptimizerState:
    o = cfg.optimizer
    drop_at = 0.9
    if o.schedule == "step" and o.drop_epoch is not None:
        drop_at = o.drop_epoch / max(cfg.epochs, 1)
    return OptimizerState(
        lr=o.lr,
        momentum=o.momentum,
        weight_decay=o.weight_decay,
        schedule=Schedule(kind=o.schedule, drop_at=drop_at, gamma=o.gamma, beta=o.beta),
    )


def _strip_labels(target: UnlabeledSet) -> UnlabeledSet:
    return target.unlabeled() if isinstance(target, LabeledSet) else target


def train_seed(cfg: ExperimentConfig, seed: int, source: LabeledSet, target,
               eval_target: LabeledSet | None = None, step_hook=None):
    """Train one network; returns ``(frozen network, SeedRecord)``.

    ``target`` feeds the training path without labels.  ``eval_target``,
    when given, is scored after every epoch on a frozen copy.
    ``step_hook(net, iteration)`` runs after every optimizer step.
    """
    train_target = _strip_labels(target)
    classes = max(source.class_count, eval_target.class_count if eval_target is not None else 0)
    net = build_network(cfg, source.dim, classes, seed)
    opt = make_optimizer(cfg)
    loss_cfg = LossConfig(lam=cfg.lam, class_count=classes)
    trainable = net.trainable()
    n_s, n_t = batch_counts(cfg, len(source), len(train_target))
    per_epoch = batches_per_epoch(len(source), n_s)
    total_steps = max(1, cfg.epochs * per_epoch)
    da_index = [i for i, layer in enumerate(net.layers) if layer.kind == "dalayer"]

    record = SeedRecord(seed=seed)
    record.alpha_trace.extend((0, k, net.layers[i].alpha) for k, i in enumerate(da_index))
    it = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        for batch in compose_batches(source, train_target, n_s, n_t, seed=seed, epoch=epoch):
            value, grads = net.loss_and_grads(batch.features, batch.n_source, batch.source_labels, loss_cfg)
            if not math.isfinite(value.total):
                raise TrainingError(f"non-finite loss at iteration {it} (seed {seed})")
            grads = {k: g for k, g in grads.items() if k in trainable}
            params = sgd_step(opt, net.get_params(), grads, it / total_steps)
            net.set_params(params)
            it += 1
            sums += (value.l_source, value.l_target, value.total)
            record.alpha_trace.extend((it, k, net.layers[i].alpha) for k, i in enumerate(da_index))
            if step_hook is not None:
                step_hook(net, it)
        means = sums / per_epoch
        acc = accuracy(net.frozen_copy(), eval_target) if eval_target is not None else float("nan")
        record.epochs.append(EpochRecord(
            epoch=epoch + 1,
            l_source=float(means[0]),
            l_target=float(means[1]),
            total=float(means[2]),
            target_accuracy=acc,
            learning_rate=opt.learning_rate(min(1.0, it / total_steps)),
            alphas=net.alphas(),
        ))
        log.debug("seed %d epoch %d: loss %.4f target acc %.4f", seed, epoch + 1, means[2], acc)
    if not all(np.all(np.isfinite(p)) for p in net.get_params().values()):
        raise TrainingError(f"non-finite parameters after training (seed {seed})")
    if net.da_layers and it == 0:
        estimate_statistics(net, source, train_target)
    net.freeze()
    if eval_target is not None:
        record.final_target_accuracy = accuracy(net, eval_target)
    record.final_source_accuracy = accuracy(net, source, domain="source")
    return net, record


def estimate_statistics(net: Network, source, target):
    """Set every DA-layer's moving averages to full-set statistics (one pass, momentum 1)."""
    saved = [d.state.momentum_ma for d in net.da_layers]
    for d in net.da_layers:
        d.state.momentum_ma = 1.0
    try:
        net.forward(np.concatenate([source.features, target.features]), len(source), train=True)
    finally:
        for d, m in zip(net.da_layers, saved):
            d.state.momentum_ma = m


def run_experiment(cfg: ExperimentConfig, step_hook=None, keep_models: bool = True) -> RunReport:
    """Train and evaluate one variant for every seed, then aggregate."""
    cfg.validate()
    records, models = [], {}
    for seed in cfg.seeds:
        source, target = load_domains(cfg, seed)
        eval_target = target if isinstance(target, LabeledSet) else None
        if source.dim != target.dim:
            raise ConfigError("source and target feature dimensions differ")
        net, rec = train_seed(cfg, seed, source, target, eval_target, step_hook)
        records.append(rec)
        if keep_models:
            models[seed] = net
        log.info("%s seed %d: target accuracy %.4f", cfg.variant.value, seed, rec.final_target_accuracy)
    mean, std = aggregate([r.final_target_accuracy for r in records])
    return RunReport(cfg.variant.value, cfg.lam, records, mean, std, models)


def holdout_split(source: LabeledSet, fraction: float, seed: int):
    rng = np.random.default_rng([seed, 11])
    order = rng.permutation(len(source))
    n_hold = max(1, int(round(fraction * len(source))))
    if n_hold >= len(source):
        raise ConfigError("holdout split leaves no training samples")
    return source.subset(np.sort(order[n_hold:])), source.subset(np.sort(order[:n_hold]))


def holdout_score(cfg: ExperimentConfig, lam: float) -> float:
    """Mean held-out source accuracy over the config's seeds at loss weight ``lam``."""
    trial = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, lam=lam)).validate()
    scores = []
    for seed in trial.seeds:
        source, target = load_domains(trial, seed)
        train, held = holdout_split(source, trial.gridsearch.holdout_fraction, seed)
        net, _ = train_seed(trial, seed, train, target)
        scores.append(accuracy(net, held, domain="source"))
    return float(np.mean(scores))


def grid_search_lambda(cfg: ExperimentConfig, candidates=None, scorer=None):
    """Pick lambda by held-out source accuracy; ties go to the smaller value.

    Returns ``(best_lambda, [(lambda, score), ...])`` with the table sorted
    by lambda.
    """
    candidates = list(cfg.gridsearch.candidates if candidates is None else candidates)
    if not candidates:
        raise ConfigError("lambda grid is empty")
    scorer = scorer or (lambda lam: holdout_score(cfg, lam))
    table = [(float(lam), float(scorer(float(lam)))) for lam in sorted(set(float(c) for c in candidates))]
    best_lam, best_score = table[0]
    for lam, score in table[1:]:
        if score > best_score:
            best_lam, best_score = lam, score
    return best_lam, table
