"""Seeded end-to-end training of the concept bottleneck model.

One combined objective per step: concept cross-entropy, class cross-entropy,
and (when an importance matrix is supplied with a positive alignment weight)
the High/Low influence-alignment terms. When the alignment weight is zero the
alignment branch is skipped entirely, so a lam=0 run is bit-identical to a
run without it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .align import (LossWeights, concept_influence, high_alignment_loss,
                    low_alignment_loss, total_loss)
from .autodiff import Tensor
from .cbm import CbmModel, resolve_variant
from .data import Dataset, batches
from .errors import ConfigError, NumericError
from .evaluation import macro_f1, _forward_arrays
from .knowledge import ImportanceMatrix, load_importance
from .nn import AdamW, cross_entropy, one_hot

FORMAT_VERSION = 1

KNOWLEDGE_NONE = "none"
TRAINING_MODES = ("joint", "sequential")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    phi: float = 1.0
    lam: float = 1.0
    label_smoothing: float = 0.3
    smooth_concepts: bool = False
    classifier: str = "MLP(128)"
    align_mode: str = "pairwise"
    training_mode: str = "joint"
    predictor_hidden: list[int] = field(default_factory=lambda: [64])
    seed: int = 0
    knowledge: str = KNOWLEDGE_NONE  # path, "none", or "random:<seed>"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        for name in ("lr", "weight_decay", "phi", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0.0 <= self.label_smoothing <= 1.0:
            raise ConfigError("label_smoothing must be in [0, 1]")
        if self.training_mode not in TRAINING_MODES:
            raise ConfigError(f"training_mode must be one of {TRAINING_MODES}")
        self.classifier = resolve_variant(self.classifier)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["format_version"] = FORMAT_VERSION
        return doc

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        kwargs = {k: v for k, v in payload.items() if k != "format_version"}
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"malformed train config: {exc}") from exc


@dataclass
class EpochRecord:
    epoch: int
    loss_concept: float
    loss_class: float
    loss_high: float
    loss_low: float
    loss_total: float
    val_macro_f1: float


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_concept: float
    loss_class: float
    loss_high: float
    loss_low: float
    loss_total: float


@dataclass
class RunRecord:
    config: TrainConfig
    epochs: list[EpochRecord]
    best_epoch: int
    best_val_macro_f1: float
    steps: list[StepRecord] = field(default_factory=list)

    def save_epochs(self, path) -> None:
        """One JSON object per line per epoch."""
        with open(path, "w") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(asdict(rec)) + "\n")

    def save_summary(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "run-summary",
            "best_epoch": self.best_epoch,
            "best_val_macro_f1": self.best_val_macro_f1,
            "final_train_loss": self.epochs[-1].loss_total,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def resolve_knowledge(spec: str, scheme, base_dir: Path | None = None) -> ImportanceMatrix | None:
    """Turn a knowledge spec string into a matrix.

    ``none`` disables alignment. ``random:<seed>[:<path>]`` permutes each row
    of a base matrix; the base defaults to ``importance.json`` next to the
    data. Anything else is a path to an importance file.
    """
    if spec == KNOWLEDGE_NONE:
        return None
    if spec.startswith("random:"):
        parts = spec.split(":", 2)
        try:
            rand_seed = int(parts[1])
        except (IndexError, ValueError):
            raise ConfigError(f"malformed knowledge spec {spec!r}; "
                              "expected random:<seed>[:<path>]") from None
        if len(parts) == 3:
            base_path = Path(parts[2])
        elif base_dir is not None:
            base_path = Path(base_dir) / "importance.json"
        else:
            raise ConfigError(
                f"knowledge spec {spec!r} needs an explicit base path "
                "(random:<seed>:<path>) when no data directory is known")
        if not base_path.exists():
            raise ConfigError(f"base importance file {base_path} does not exist")
        return load_importance(base_path, scheme).randomized(rand_seed)
    if not Path(spec).exists():
        raise ConfigError(f"importance file {spec} does not exist")
    return load_importance(spec, scheme)


def _val_macro_f1(model: CbmModel, val_set: Dataset) -> float:
    x, _, y = val_set.as_arrays()
    _, y_hat = _forward_arrays(model, x)
    macro, _ = macro_f1(y, y_hat.argmax(axis=1), val_set.scheme.num_classes)
    return macro


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset,
          matrix: ImportanceMatrix | None = None,
          record_steps: bool = False) -> tuple[CbmModel, RunRecord]:
    """Train a model from the config's seed; returns the best-validation model.

    The importance matrix comes either from the caller or from the config's
    knowledge path. With no matrix the alignment weight is forced to zero.
    """
    if train_set.scheme != val_set.scheme:
        raise ConfigError("train and validation sets use different schemes")
    scheme = train_set.scheme
    if matrix is None and config.knowledge != KNOWLEDGE_NONE:
        matrix = resolve_knowledge(config.knowledge, scheme)
    if matrix is not None and matrix.scheme != scheme:
        raise ConfigError("importance matrix scheme does not match the data")

    lam = config.lam if matrix is not None else 0.0
    weights = LossWeights(phi=config.phi, lam=lam)
    align_on = matrix is not None and lam > 0.0

    rng = np.random.default_rng(config.seed)
    model = CbmModel(scheme, train_set.feature_width, config.predictor_hidden,
                     config.classifier, rng)
    model.train_seed = config.seed
    optimizer = AdamW(lr=config.lr, weight_decay=config.weight_decay)

    concept_smoothing = config.label_smoothing if config.smooth_concepts else 0.0
    sequential = config.training_mode == "sequential"
    cards = scheme.cardinalities

    epoch_records: list[EpochRecord] = []
    step_records: list[StepRecord] = []
    best_f1 = -1.0
    best_epoch = 0
    best_state = model.state_arrays()

    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(5)
        steps = 0
        for step, (x, c, y) in enumerate(
                batches(train_set, config.batch_size, config.seed, epoch), start=1):
            c_hat = model.predict_concepts(x)

            concept_terms = None
            for l in range(scheme.num_concepts):
                start, stop = scheme.segment_bounds(l)
                term = cross_entropy(c_hat.slice_segment(start, stop), c[:, l],
                                     concept_smoothing, cards[l])
                concept_terms = term if concept_terms is None else concept_terms + term
            loss_c = concept_terms.scale(1.0 / scheme.num_concepts)

            clf_input = Tensor(_true_bottleneck(c, cards)) if sequential else c_hat
            y_hat = model.predict_class(clf_input)
            loss_y = cross_entropy(y_hat, y, config.label_smoothing, scheme.num_classes)

            loss_h = loss_l = None
            if align_on:
                influence = concept_influence(model, clf_input)
                loss_h = high_alignment_loss(influence, matrix, config.align_mode, y)
                loss_l = low_alignment_loss(influence, matrix, config.align_mode, y)

            loss = total_loss(loss_c, loss_y, loss_h, loss_l, weights)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch} step {step}")

            model.zero_grad()
            loss.backward()
            optimizer.step(model.named_parameters())

            h_val = float(loss_h.data) if loss_h is not None else 0.0
            l_val = float(loss_l.data) if loss_l is not None else 0.0
            sums += (float(loss_c.data), float(loss_y.data), h_val, l_val, float(loss.data))
            steps += 1
            if record_steps:
                step_records.append(StepRecord(epoch, step, float(loss_c.data),
                                               float(loss_y.data), h_val, l_val,
                                               float(loss.data)))

        val_f1 = _val_macro_f1(model, val_set)
        means = sums / steps
        epoch_records.append(EpochRecord(epoch, *(float(v) for v in means), val_f1))
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_state = model.state_arrays()

    model.load_state_arrays(best_state)
    return model, RunRecord(config, epoch_records, best_epoch, best_f1, step_records)


def _true_bottleneck(c: np.ndarray, cards: list[int]) -> np.ndarray:
    """Ground-truth one-hot bottleneck for sequential-mode classifier input."""
    blocks = [one_hot(c[:, l], card) for l, card in enumerate(cards)]
    return np.concatenate(blocks, axis=1)
