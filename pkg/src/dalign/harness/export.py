"""Delimited-text exports: alpha traces, feature histograms, metrics."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..data import UnlabeledSet
from ..errors import StateError
from ..net import Network


def export_alpha_trace(report, path, seed=None):
    """Write ``seed,iteration,layer_index,alpha`` rows for one or all seeds."""
    rows = []
    for rec in report.seeds:
        if seed is not None and rec.seed != seed:
            continue
        rows += [(rec.seed, it, layer, alpha) for it, layer, alpha in rec.alpha_trace]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "iteration", "layer_index", "alpha"])
        for s, it, layer, alpha in rows:
            w.writerow([s, it, layer, repr(float(alpha))])
    return rows


def da_layer_outputs(net: Network, features, domain: str, layer: int) -> np.ndarray:
    """Frozen-mode activations right after the ``layer``-th DA-layer (0-based)."""
    positions = [i for i, lyr in enumerate(net.layers) if lyr.kind == "dalayer"]
    if not 0 <= layer < len(positions):
        raise IndexError(f"DA-layer index {layer} out of range (network has {len(positions)})")
    if not net.frozen:
        raise StateError("histograms are computed on a frozen network")
    features = np.asarray(features, dtype=np.float64)
    n_source = features.shape[0] if domain == "source" else 0
    return net.activations(features, n_source, positions[layer] + 1)


def feature_histograms(net: Network, source: UnlabeledSet, target: UnlabeledSet, layer: int,
                       bins: int = 30, channels: int = 4, seed: int = 0):
    """Source/target histograms of randomly sampled channels after one DA-layer.

    Both domains share the bin edges of each channel.  Returns a list of
    ``(channel, bin_left, bin_right, source_count, target_count)`` rows and
    the sampled channel indices.
    """
    out_s = da_layer_outputs(net, source.features, "source", layer)
    out_t = da_layer_outputs(net, target.features, "target", layer)
    width = out_s.shape[1]
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(width, size=min(channels, width), replace=False))
    rows = []
    for c in picked:
        both = np.concatenate([out_s[:, c], out_t[:, c]])
        lo, hi = float(both.min()), float(both.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        hs, _ = np.histogram(out_s[:, c], bins=edges)
        ht, _ = np.histogram(out_t[:, c], bins=edges)
        rows += [(int(c), float(edges[k]), float(edges[k + 1]), int(hs[k]), int(ht[k])) for k in range(bins)]
    return rows, [int(c) for c in picked]


def export_histograms(net: Network, source: UnlabeledSet, target: UnlabeledSet, layer: int, path,
                      bins: int = 30, channels: int = 4, seed: int = 0):
    rows, picked = feature_histograms(net, source, target, layer, bins, channels, seed)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# layer={layer} sampling_seed={seed} channels={' '.join(map(str, picked))}\n")
        w = csv.writer(fh)
        w.writerow(["channel", "bin_left", "bin_right", "source_count", "target_count"])
        for c, left, right, ns, nt in rows:
            w.writerow([c, repr(left), repr(right), ns, nt])
    return rows


def write_metrics(report, out_dir):
    """Per-epoch metrics, per-seed finals and the mean/std summary."""
    out_dir = Path(out_dir)
    n_alpha = max((len(e.alphas) for s in report.seeds for e in s.epochs), default=0)
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "epoch", "l_source", "l_target", "total", "target_accuracy", "learning_rate"]
                   + [f"alpha_{k}" for k in range(n_alpha)])
        for s in report.seeds:
            for e in s.epochs:
                w.writerow([s.seed, e.epoch, e.l_source, e.l_target, e.total, e.target_accuracy,
                            e.learning_rate] + list(e.alphas))
    with open(out_dir / "seeds.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "final_target_accuracy", "final_source_accuracy"])
        for s in report.seeds:
            w.writerow([s.seed, repr(s.final_target_accuracy), repr(s.final_source_accuracy)])
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "lambda", "n_seeds", "mean_target_accuracy", "std_target_accuracy"])
        w.writerow([report.variant, report.lam, len(report.seeds),
                    repr(report.mean_target_accuracy), repr(report.std_target_accuracy)])
