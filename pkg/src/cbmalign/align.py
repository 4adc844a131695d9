"""Perturbation-based concept influence and the importance-alignment losses.

Influence of concept l on class k is the absolute change in the predicted
class-k probability when segment l is zero-filled before the classifier.
The High loss pulls influence toward 1 at High cells, the Low loss pulls it
toward 0 at Low cells; Mid cells are unconstrained. Gradients flow through
both the unperturbed and every concept-removed classifier branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .cbm import CbmModel
from .errors import ConfigError, NumericError
from .knowledge import HIGH, LOW, ImportanceMatrix

ALIGN_MODES = ("pairwise", "column")


@dataclass(frozen=True)
class LossWeights:
    """phi scales the concept loss, lam scales the alignment terms."""

    phi: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.phi < 0 or self.lam < 0:
            raise ConfigError(f"loss weights must be nonnegative, got phi={self.phi} lam={self.lam}")


class ConceptInfluence:
    """Per-sample influence tensors, one (batch, K) tensor per concept."""

    def __init__(self, per_concept: list[Tensor], num_classes: int):
        self.per_concept = per_concept
        self.num_classes = num_classes

    @property
    def num_concepts(self) -> int:
        return len(self.per_concept)

    @property
    def batch_size(self) -> int:
        return self.per_concept[0].shape[0]

    def per_sample(self) -> np.ndarray:
        """Values as a (batch, K, L) array."""
        return np.stack([t.data for t in self.per_concept], axis=-1)

    def batch_mean(self) -> np.ndarray:
        """Mean over the batch, as a (K, L) array."""
        return self.per_sample().mean(axis=0)


def concept_influence(model: CbmModel, bottleneck: Tensor) -> ConceptInfluence:
    """Influence of every concept on every class probability, per sample.

    Runs one classifier forward on the intact bottleneck and one per
    zero-filled concept; all L+1 branches stay differentiable.
    """
    baseline = model.predict_class(bottleneck)
    per_concept = []
    for l in range(model.scheme.num_concepts):
        removed = model.predict_class(model.remove_concept(bottleneck, l))
        per_concept.append(abs(baseline - removed))
    return ConceptInfluence(per_concept, model.scheme.num_classes)


def _check_dims(influence: ConceptInfluence, matrix: ImportanceMatrix) -> None:
    if (influence.num_concepts != matrix.scheme.num_concepts
            or influence.num_classes != matrix.scheme.num_classes):
        raise ConfigError(
            f"influence is {influence.num_classes}x{influence.num_concepts}, importance matrix is "
            f"{matrix.scheme.num_classes}x{matrix.scheme.num_concepts}")


def _masked_sum(influence: ConceptInfluence, matrix: ImportanceMatrix, level: str,
                mode: str, labels, toward_one: bool) -> Tensor:
    _check_dims(influence, matrix)
    if mode not in ALIGN_MODES:
        raise ConfigError(f"unknown alignment mode {mode!r}; expected one of {ALIGN_MODES}")
    batch = influence.batch_size
    k = influence.num_classes

    if mode == "column":
        if labels is None:
            raise ConfigError("column mode needs the batch's ground-truth class labels")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ConfigError(f"labels must have shape ({batch},), got {labels.shape}")

    total = Tensor(0.0)
    for l in range(influence.num_concepts):
        if mode == "pairwise":
            # only the cells whose own (class, concept) level matches
            mask = np.array([1.0 if matrix.level(c, l) == level else 0.0 for c in range(k)])
            if not mask.any():
                continue
            mask_arr = np.broadcast_to(mask, (batch, k)).copy()
        else:
            # full K-column for every sample whose true class marks concept l
            rows = np.array([1.0 if matrix.level(int(y), l) == level else 0.0 for y in labels])
            if not rows.any():
                continue
            mask_arr = np.repeat(rows[:, None], k, axis=1)
        cell = influence.per_concept[l]
        term = abs(1.0 - cell) if toward_one else abs(cell)
        total = total + (term * Tensor(mask_arr)).sum()
    return total.scale(1.0 / batch)


def high_alignment_loss(influence: ConceptInfluence, matrix: ImportanceMatrix,
                        mode: str = "pairwise", labels=None) -> Tensor:
    """L1 distance of influence from 1 over High cells, batch-averaged."""
    return _masked_sum(influence, matrix, HIGH, mode, labels, toward_one=True)


def low_alignment_loss(influence: ConceptInfluence, matrix: ImportanceMatrix,
                       mode: str = "pairwise", labels=None) -> Tensor:
    """L1 magnitude of influence over Low cells, batch-averaged."""
    return _masked_sum(influence, matrix, LOW, mode, labels, toward_one=False)


def total_loss(concept_loss: Tensor, class_loss: Tensor,
               high_loss: Tensor | None, low_loss: Tensor | None,
               weights: LossWeights) -> Tensor:
    """phi * L_concept + L_class + lam * (L_low + L_high).

    The alignment term is omitted entirely when lam is 0 or both alignment
    components are absent, so a lam=0 run builds the same graph as a build
    without this module.
    """
    for name, component in (("concept_loss", concept_loss), ("class_loss", class_loss),
                            ("high_loss", high_loss), ("low_loss", low_loss)):
        if component is not None and not np.all(np.isfinite(component.data)):
            raise NumericError(f"loss component {name} is not finite")
    base = concept_loss.scale(weights.phi) + class_loss
    if weights.lam == 0.0 or (high_loss is None and low_loss is None):
        return base
    if high_loss is None or low_loss is None:
        raise ConfigError("high and low alignment losses must be provided together")
    return base + (low_loss + high_loss).scale(weights.lam)
