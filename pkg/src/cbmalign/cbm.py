"""The concept bottleneck model.

A feature-vector concept predictor produces per-concept probability segments
which are concatenated into the bottleneck vector; a classifier head (Linear,
MLP(20), or MLP(128)) maps the bottleneck to class probabilities. Concept
removal zero-fills one segment before the head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat
from .errors import ConfigError, UsageError
from .nn import DenseLayer

FORMAT_VERSION = 1

CLASSIFIER_VARIANTS = {
    "Linear": None,
    "MLP(20)": 20,
    "MLP(128)": 128,
}

# CLI-friendly aliases for the canonical variant names
VARIANT_ALIASES = {
    "linear": "Linear",
    "mlp20": "MLP(20)",
    "mlp128": "MLP(128)",
}


def resolve_variant(name: str) -> str:
    if name in CLASSIFIER_VARIANTS:
        return name
    if name in VARIANT_ALIASES:
        return VARIANT_ALIASES[name]
    raise ConfigError(f"unknown classifier variant {name!r}; "
                      f"choose from {sorted(CLASSIFIER_VARIANTS) + sorted(VARIANT_ALIASES)}")


@dataclass(frozen=True)
class ConceptSpec:
    name: str
    values: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ConceptScheme:
    """Class names plus the named categorical concepts of the bottleneck.

    Fixes the layout of the concatenated bottleneck vector: concept l owns
    the contiguous segment of width N_l at offset sum of earlier widths.
    """

    class_names: tuple[str, ...]
    concepts: tuple[ConceptSpec, ...]

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise ConfigError("scheme needs at least 2 classes")
        if len(self.concepts) < 1:
            raise ConfigError("scheme needs at least 1 concept")
        for spec in self.concepts:
            if spec.cardinality < 2:
                raise ConfigError(f"concept {spec.name!r} needs at least 2 values")
            if len(set(spec.values)) != spec.cardinality:
                raise ConfigError(f"concept {spec.name!r} has duplicate value names")
        names = [c.name for c in self.concepts]
        if len(set(names)) != len(names):
            raise ConfigError("concept names must be unique")
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigError("class names must be unique")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_concepts(self) -> int:
        return len(self.concepts)

    @property
    def cardinalities(self) -> list[int]:
        return [c.cardinality for c in self.concepts]

    @property
    def bottleneck_width(self) -> int:
        return sum(self.cardinalities)

    def segment_bounds(self, concept_index: int) -> tuple[int, int]:
        if not 0 <= concept_index < self.num_concepts:
            raise UsageError(
                f"concept index {concept_index} out of range [0, {self.num_concepts})")
        start = sum(self.cardinalities[:concept_index])
        return start, start + self.cardinalities[concept_index]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "classes": list(self.class_names),
            "concepts": [{"name": c.name, "values": list(c.values)} for c in self.concepts],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ConceptScheme":
        try:
            classes = tuple(str(n) for n in payload["classes"])
            concepts = tuple(
                ConceptSpec(str(c["name"]), tuple(str(v) for v in c["values"]))
                for c in payload["concepts"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scheme document: {exc}") from exc
        return cls(classes, concepts)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ConceptScheme":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scheme file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


def _build_stack(widths: list[int], rng: np.random.Generator) -> list[DenseLayer]:
    return [DenseLayer(i, o, rng) for i, o in zip(widths[:-1], widths[1:])]


class CbmModel:
    """x -> bottleneck -> class probabilities, with concept removal."""

    def __init__(self, scheme: ConceptScheme, input_width: int,
                 predictor_hidden: list[int] | None = None,
                 classifier_variant: str = "MLP(128)",
                 rng: np.random.Generator | None = None):
        if input_width < 1:
            raise ConfigError(f"input width must be positive, got {input_width}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.scheme = scheme
        self.input_width = input_width
        self.predictor_hidden = list(predictor_hidden) if predictor_hidden is not None else [64]
        self.classifier_variant = resolve_variant(classifier_variant)
        self.train_seed: int | None = None

        d = scheme.bottleneck_width
        self.predictor_layers = _build_stack(
            [input_width] + self.predictor_hidden + [d], rng)
        hidden = CLASSIFIER_VARIANTS[self.classifier_variant]
        clf_widths = [d, scheme.num_classes] if hidden is None else [d, hidden, scheme.num_classes]
        self.classifier_layers = _build_stack(clf_widths, rng)

    # -- forward passes ------------------------------------------------------

    def _as_batch(self, x) -> Tensor:
        if isinstance(x, Tensor):
            t = x
        else:
            arr = np.asarray(x, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[None, :]
            t = Tensor(arr)
        if t.ndim != 2:
            raise ConfigError(f"expected a (batch, features) input, got shape {t.shape}")
        return t

    def predict_concepts(self, x) -> Tensor:
        """Map features to the concatenated per-concept probability segments."""
        t = self._as_batch(x)
        if t.shape[1] != self.input_width:
            raise ConfigError(
                f"input width {t.shape[1]} does not match predictor width {self.input_width}")
        for layer in self.predictor_layers[:-1]:
            t = layer(t).relu()
        logits = self.predictor_layers[-1](t)
        segments = []
        for l in range(self.scheme.num_concepts):
            start, stop = self.scheme.segment_bounds(l)
            segments.append(logits.slice_segment(start, stop).softmax())
        return concat(segments)

    def predict_class(self, bottleneck) -> Tensor:
        """Map a bottleneck batch to the K-class probability simplex."""
        t = self._as_batch(bottleneck)
        if t.shape[1] != self.scheme.bottleneck_width:
            raise ConfigError(
                f"bottleneck width {t.shape[1]} does not match scheme width "
                f"{self.scheme.bottleneck_width}")
        for layer in self.classifier_layers[:-1]:
            t = layer(t).relu()
        return self.classifier_layers[-1](t).softmax()

    def forward(self, x) -> tuple[Tensor, Tensor]:
        c_hat = self.predict_concepts(x)
        return c_hat, self.predict_class(c_hat)

    def remove_concept(self, bottleneck: Tensor, concept_index: int) -> Tensor:
        """Zero-fill one concept's segment; other segments keep their gradient."""
        start, stop = self.scheme.segment_bounds(concept_index)
        return bottleneck.zero_segment(start, stop)

    # -- parameter access ----------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.predictor_layers):
            out.append((f"predictor.{i}.weight", layer.weight))
            out.append((f"predictor.{i}.bias", layer.bias))
        for i, layer in enumerate(self.classifier_layers):
            out.append((f"classifier.{i}.weight", layer.weight))
            out.append((f"classifier.{i}.bias", layer.bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ConfigError("state array count does not match parameters")
        for p, arr in zip(params, arrays):
            if p.shape != arr.shape:
                raise ConfigError(f"state array shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        layers = []
        for name, p in self.named_parameters():
            layers.append({"name": name, "shape": list(p.shape),
                           "values": p.data.ravel().tolist()})
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "cbm-model",
            "scheme": self.scheme.to_dict(),
            "input_width": self.input_width,
            "predictor_hidden": self.predictor_hidden,
            "classifier_variant": self.classifier_variant,
            "train_seed": self.train_seed,
            "layers": layers,
        }
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path) -> "CbmModel":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file {path} is not valid JSON: {exc}") from exc
        if doc.get("kind") != "cbm-model":
            raise ConfigError(f"{path} is not a model file")
        scheme = ConceptScheme.from_dict(doc["scheme"])
        model = cls(scheme, int(doc["input_width"]),
                    [int(w) for w in doc["predictor_hidden"]],
                    doc["classifier_variant"])
        model.train_seed = doc.get("train_seed")
        params = dict(model.named_parameters())
        stored = {entry["name"]: entry for entry in doc["layers"]}
        if set(stored) != set(params):
            raise ConfigError("model file layers do not match the declared architecture")
        for name, p in params.items():
            entry = stored[name]
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != p.shape:
                raise ConfigError(
                    f"layer {name!r} has shape {arr.shape}, scheme requires {p.shape}")
            p.data = arr
        return model
