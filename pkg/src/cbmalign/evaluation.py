"""Metrics and reports: macro F1, multi-seed confidence intervals, and the
concept-influence audit that compares a trained model against the expert
importance matrix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import concept_influence
from .cbm import CbmModel
from .data import Dataset
from .errors import ConfigError, UsageError
from .knowledge import HIGH, LOW, ImportanceMatrix

FORMAT_VERSION = 1
CI_METHOD = "normal approximation, mean +/- 1.96 * sd / sqrt(n)"
EVAL_BATCH = 512


def macro_f1(y_true, y_pred, num_classes: int) -> tuple[float, list[float]]:
    """Unweighted mean of per-class F1 over all ``num_classes`` labels.

    A class with zero precision+recall contributes F1 = 0; classes absent
    from both vectors also count (with F1 = 0), matching the usual library
    convention.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size < 1:
        raise UsageError(f"label vectors must be equal-length and 1-d, "
                         f"got {y_true.shape} and {y_pred.shape}")
    for arr, name in ((y_true, "y_true"), (y_pred, "y_pred")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise UsageError(f"{name} contains labels outside [0, {num_classes})")
    per_class = []
    for k in range(num_classes):
        tp = int(np.sum((y_true == k) & (y_pred == k)))
        fp = int(np.sum((y_true != k) & (y_pred == k)))
        fn = int(np.sum((y_true == k) & (y_pred != k)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(f1)
    return float(np.mean(per_class)), per_class


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% half-width over per-seed values (normal approximation)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise UsageError(f"confidence interval needs at least 2 values, got {values.size}")
    mean = float(values.mean())
    half = float(1.96 * values.std(ddof=1) / np.sqrt(values.size))
    return mean, half


@dataclass
class MetricsReport:
    macro_f1: float
    per_class_f1: list[float]
    concept_accuracy: list[float]
    n: int
    domain_tag: str
    seed: int | None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "metrics-report",
            "macro_f1": self.macro_f1,
            "per_class_f1": self.per_class_f1,
            "concept_accuracy": self.concept_accuracy,
            "n": self.n,
            "domain_tag": self.domain_tag,
            "seed": self.seed,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "metrics-report":
            raise ConfigError(f"{path} is not a metrics report")
        return cls(doc["macro_f1"], doc["per_class_f1"], doc["concept_accuracy"],
                   doc["n"], doc["domain_tag"], doc.get("seed"))


@dataclass
class HeatmapReport:
    """Mean concept influence over a dataset next to the expert matrix."""

    mean_influence: np.ndarray  # (K, L)
    importance: ImportanceMatrix
    alignment_score: float
    n: int
    domain_tag: str

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "heatmap-report",
            "classes": list(self.importance.scheme.class_names),
            "concepts": [c.name for c in self.importance.scheme.concepts],
            "mean_influence": [[float(v) for v in row] for row in self.mean_influence],
            "importance": [list(row) for row in self.importance.levels],
            "alignment_score": self.alignment_score,
            "n": self.n,
            "domain_tag": self.domain_tag,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def save_csv(self, path) -> None:
        """Delimited heatmap: one row per class, one column per concept."""
        scheme = self.importance.scheme
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + [c.name for c in scheme.concepts])
            for name, row in zip(scheme.class_names, self.mean_influence):
                writer.writerow([name] + [repr(float(v)) for v in row])


def _forward_arrays(model: CbmModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched inference returning (bottleneck, class probabilities) arrays."""
    chunks_c, chunks_y = [], []
    for start in range(0, x.shape[0], EVAL_BATCH):
        c_hat, y_hat = model.forward(x[start:start + EVAL_BATCH])
        chunks_c.append(c_hat.data)
        chunks_y.append(y_hat.data)
    return np.concatenate(chunks_c), np.concatenate(chunks_y)


def concept_accuracy(model: CbmModel, dataset: Dataset) -> list[float]:
    """Per-concept accuracy of the argmax concept prediction."""
    x, c, _ = dataset.as_arrays()
    c_hat, _ = _forward_arrays(model, x)
    out = []
    for l in range(dataset.scheme.num_concepts):
        start, stop = dataset.scheme.segment_bounds(l)
        pred = c_hat[:, start:stop].argmax(axis=1)
        out.append(float(np.mean(pred == c[:, l])))
    return out


def evaluate(model: CbmModel, dataset: Dataset) -> MetricsReport:
    if model.scheme != dataset.scheme:
        raise ConfigError("model and dataset use different schemes")
    x, c, y = dataset.as_arrays()
    c_hat, y_hat = _forward_arrays(model, x)
    y_pred = y_hat.argmax(axis=1)
    macro, per_class = macro_f1(y, y_pred, dataset.scheme.num_classes)
    acc = []
    for l in range(dataset.scheme.num_concepts):
        start, stop = dataset.scheme.segment_bounds(l)
        acc.append(float(np.mean(c_hat[:, start:stop].argmax(axis=1) == c[:, l])))
    return MetricsReport(macro, per_class, acc, len(dataset), dataset.domain_tag,
                         model.train_seed)


def alignment_score(mean_influence: np.ndarray, matrix: ImportanceMatrix) -> float:
    """Mean influence over High cells minus mean influence over Low cells.

    An empty cell set contributes 0, so the score is always defined and
    stays within [-1, 1].
    """
    def mean_over(level: str) -> float:
        cells = matrix.pairs(level)
        if not cells:
            return 0.0
        return float(np.mean([mean_influence[k, l] for k, l in cells]))

    return mean_over(HIGH) - mean_over(LOW)


def audit_influence(model: CbmModel, dataset: Dataset,
                    matrix: ImportanceMatrix) -> HeatmapReport:
    """Dataset-mean concept influence plus the High-minus-Low alignment score."""
    if model.scheme != dataset.scheme or matrix.scheme != dataset.scheme:
        raise ConfigError("model, dataset, and importance matrix must share a scheme")
    x, _, _ = dataset.as_arrays()
    total = np.zeros((dataset.scheme.num_classes, dataset.scheme.num_concepts))
    for start in range(0, x.shape[0], EVAL_BATCH):
        c_hat = model.predict_concepts(x[start:start + EVAL_BATCH])
        influence = concept_influence(model, c_hat)
        total += influence.per_sample().sum(axis=0)
    mean_influence = total / len(dataset)
    return HeatmapReport(mean_influence, matrix,
                         alignment_score(mean_influence, matrix),
                         len(dataset), dataset.domain_tag)
