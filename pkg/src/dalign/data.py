"""Datasets, the synthetic shifted-Gaussian benchmark, and domain batches.

Training code only ever receives :class:`UnlabeledSet` objects for the
target domain; target labels live in a :class:`LabeledSet` that is handed
to the evaluator alone.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError, LayoutError, SpecError


@dataclass(frozen=True)
class UnlabeledSet:
    features: np.ndarray

    def __post_init__(self):
        if np.ndim(self.features) != 2:
            raise DataError("features must be a 2-D array")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class LabeledSet(UnlabeledSet):
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        labels = self.labels
        if labels is None or np.ndim(labels) != 1 or len(labels) != self.features.shape[0]:
            raise DataError("label count must equal row count")
        if len(labels) and np.min(labels) < 0:
            raise DataError("class indices must be non-negative")

    @property
    def class_count(self):
        return int(np.max(self.labels)) + 1 if len(self.labels) else 0

    def unlabeled(self) -> UnlabeledSet:
        return UnlabeledSet(self.features)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class DomainBatch:
    features: np.ndarray
    n_source: int
    n_target: int
    source_labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] != self.n_source + self.n_target:
            raise LayoutError("batch rows do not match n_source + n_target")
        if len(self.source_labels) != self.n_source:
            raise LayoutError("one label per source row is required")


@dataclass(frozen=True)
class ShiftSpec:
    """Gaussian class blobs; the target domain is the same mixture under an affine map.

    The target map is ``x -> scale * R x + translation`` where ``R`` rotates
    consecutive coordinate pairs (0, 1), (2, 3), ... by ``rotation_deg``.
    A scalar ``translation`` is applied to every coordinate.
    """

    classes: int = 3
    dim: int = 10
    separation: float = 3.0
    cov_scale: float = 1.0
    rotation_deg: float = 0.0
    translation: float | Sequence[float] = 0.0
    scale: float = 1.0
    n_source: int = 600
    n_target: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise SpecError("need at least two classes")
        if self.dim < 1:
            raise SpecError("dimension must be positive")
        if not self.cov_scale > 0:
            raise SpecError("degenerate covariance: cov_scale must be positive")
        if self.scale == 0 or not math.isfinite(self.scale):
            raise SpecError("target scale must be finite and non-zero")
        if self.n_source < 1 or self.n_target < 1:
            raise SpecError("sample counts must be positive")
        if np.ndim(self.translation) == 1 and len(self.translation) != self.dim:
            raise SpecError("translation vector length must equal dim")

    def translation_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.translation, dtype=np.float64), (self.dim,)).copy()

    def rotation_matrix(self) -> np.ndarray:
        theta = math.radians(self.rotation_deg)
        c, s = math.cos(theta), math.sin(theta)
        R = np.eye(self.dim)
        for i in range(0, self.dim - 1, 2):
            R[i, i], R[i, i + 1] = c, -s
            R[i + 1, i], R[i + 1, i + 1] = s, c
        return R

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.scale * x @ self.rotation_matrix().T + self.translation_vector()

    def class_means(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0])
        directions = rng.normal(size=(self.classes, self.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return self.separation * directions


def _sample_blobs(means, n, cov_scale, rng):
    k = means.shape[0]
    labels = rng.permutation(np.arange(n) % k)
    x = means[labels] + cov_scale * rng.normal(size=(n, means.shape[1]))
    return x, labels


def generate_shifted_gaussians(spec: ShiftSpec) -> tuple[LabeledSet, LabeledSet]:
    """Draw the source set and the (transformed) target set.

    The returned target labels are for evaluation only.
    """
    means = spec.class_means()
    xs, ys = _sample_blobs(means, spec.n_source, spec.cov_scale, np.random.default_rng([spec.seed, 1]))
    xt, yt = _sample_blobs(means, spec.n_target, spec.cov_scale, np.random.default_rng([spec.seed, 2]))
    return LabeledSet(xs, ys), LabeledSet(spec.transform(xt), yt)


def proportional_counts(total: int, n_source_set: int, n_target_set: int) -> tuple[int, int]:
    """Split a batch of ``total`` rows proportionally to the two dataset sizes."""
    if total < 2:
        raise LayoutError("a two-domain batch needs at least two rows")
    if n_source_set < 1 or n_target_set < 1:
        raise DataError("empty dataset")
    n_s = int(round(total * n_source_set / (n_source_set + n_target_set)))
    n_s = min(total - 1, max(1, n_s))
    return n_s, total - n_s


class _Recycler:
    """Endless index stream over ``size`` items, reshuffled on every pass."""

    def __init__(self, size, rng):
        self.size, self.rng = size, rng
        self.order = rng.permutation(size)
        self.pos = 0

    def take(self, k):
        out = []
        while k:
            if self.pos == self.size:
                self.order = self.rng.permutation(self.size)
                self.pos = 0
            step = min(k, self.size - self.pos)
            out.append(self.order[self.pos:self.pos + step])
            self.pos += step
            k -= step
        return np.concatenate(out)


def batches_per_epoch(n_source_set: int, n_source: int) -> int:
    return max(1, n_source_set // n_source)


def compose_batches(source: LabeledSet, target: UnlabeledSet, n_source: int, n_target: int,
                    seed: int = 0, epoch: int = 0) -> Iterator[DomainBatch]:
    """Yield one epoch of source-then-target batches.

    An epoch is one pass over the source set; the target set is recycled
    (and reshuffled) as needed.  Shuffles are independent per domain and
    fully determined by ``(seed, epoch)``.
    """
    if len(source) == 0 or len(target) == 0:
        raise DataError("empty dataset")
    if n_source < 1 or n_target < 1:
        raise LayoutError("n_source and n_target must both be at least 1")
    if isinstance(target, LabeledSet):
        target = target.unlabeled()
    src = _Recycler(len(source), np.random.default_rng([seed, epoch, 0]))
    tgt = _Recycler(len(target), np.random.default_rng([seed, epoch, 1]))
    for _ in range(batches_per_epoch(len(source), n_source)):
        i_s = src.take(n_source)
        i_t = tgt.take(n_target)
        yield DomainBatch(
            features=np.concatenate([source.features[i_s], target.features[i_t]], axis=0),
            n_source=n_source,
            n_target=n_target,
            source_labels=source.labels[i_s],
        )


def _split_fields(line, delimiter):
    if delimiter == ",":
        return [f.strip() for f in next(csv.reader(io.StringIO(line)))]
    return line.split()


def load_tabular(path, labeled: bool = True, delimiter: str | None = None):
    """Read delimited numeric text; the last column holds labels when ``labeled``.

    ``delimiter`` is ``","`` or ``None`` for whitespace; by default a comma
    in the first data line selects comma separation.  A non-numeric first
    line is treated as a header.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"no such file: {path}") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not valid UTF-8") from exc
    lines = [(no, ln) for no, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise DataError(f"{path} contains no data")
    if delimiter is None:
        delimiter = "," if "," in lines[0][1] else None
    rows, width = [], None
    for idx, (no, line) in enumerate(lines):
        fields = _split_fields(line, delimiter)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            if idx == 0:
                continue
            raise FormatError(f"non-numeric field in {fields!r}", line=no) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise FormatError(f"expected {width} fields, found {len(values)}", line=no)
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite value", line=no)
        rows.append((no, values))
    if not rows:
        raise DataError(f"{path} contains no data rows")
    table = np.array([v for _, v in rows], dtype=np.float64)
    if not labeled:
        return UnlabeledSet(table)
    if table.shape[1] < 2:
        raise FormatError("a labeled file needs at least one feature column and a label column")
    raw = table[:, -1]
    for (no, _), value in zip(rows, raw):
        if value < 0 or value != int(value):
            raise FormatError(f"label {value!r} is not a class index", line=no)
    return LabeledSet(table[:, :-1], raw.astype(np.int64))


def save_tabular(path, dataset: UnlabeledSet):
    """Write a set in the comma-separated format :func:`load_tabular` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(dataset.features):
            fields = [repr(float(v)) for v in row]
            if isinstance(dataset, LabeledSet):
                fields.append(str(int(dataset.labels[i])))
            fh.write(",".join(fields) + "\n")
