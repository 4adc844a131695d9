"""Dataset schema, CSV ingestion, and the synthetic domain-shift benchmark.

The generator realizes the failure mode the alignment loss is meant to fix:
High-tier concepts determine the class outright in both domains, Mid-tier
concepts are moderately class-linked, and Low-tier concepts are strongly
class-linked in-domain but fall to chance out-of-domain. Features are the
concatenated one-hot concept blocks plus Gaussian noise; the out-of-domain
split additionally passes through a fixed per-dimension affine jitter, the
stand-in for staining and device variation.

All randomness is counter-based: each sample draws from a generator keyed by
(seed, domain, split, sample index), so generation is deterministic and
order-independent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cbm import ConceptScheme, ConceptSpec
from .errors import ConfigError

FORMAT_VERSION = 1

IN_DOMAIN = "in_domain"
OUT_OF_DOMAIN = "out_of_domain"
DOMAIN_TAGS = (IN_DOMAIN, OUT_OF_DOMAIN)
SPLITS = ("train", "val", "test")

CHANCE = "chance"  # rho_out sentinel: per-concept 1/N_l, exact independence
MID_LINK_PROB = 0.7

_DOMAIN_CODE = {IN_DOMAIN: 0, OUT_OF_DOMAIN: 1}
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}
_JITTER_STREAM = 3


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    concept_values: tuple[int, ...]
    label: int


@dataclass
class Dataset:
    scheme: ConceptScheme
    samples: list[Sample]
    domain_tag: str
    split: str

    def __post_init__(self):
        if self.domain_tag not in DOMAIN_TAGS:
            raise ConfigError(f"domain tag must be one of {DOMAIN_TAGS}, got {self.domain_tag!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.samples:
            raise ConfigError("no samples")
        widths = {s.features.shape for s in self.samples}
        if len(widths) != 1:
            raise ConfigError(f"inconsistent feature widths: {sorted(widths)}")
        for s in self.samples:
            if not 0 <= s.label < self.scheme.num_classes:
                raise ConfigError(f"class index {s.label} out of range")
            if len(s.concept_values) != self.scheme.num_concepts:
                raise ConfigError("concept value count does not match scheme")
            for value, card in zip(s.concept_values, self.scheme.cardinalities):
                if not 0 <= value < card:
                    raise ConfigError(f"concept value index {value} out of range [0, {card})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_width(self) -> int:
        return self.samples[0].features.shape[0]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features (n, F), concept values (n, L), labels (n,))."""
        x = np.stack([s.features for s in self.samples])
        c = np.array([s.concept_values for s in self.samples], dtype=np.int64)
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, c, y


@dataclass
class SynthConfig:
    """Knobs of the synthetic benchmark; defaults give the 5-class, 11-concept task."""

    num_classes: int = 5
    cardinalities: list[int] = field(
        default_factory=lambda: [2, 3, 4, 3, 2, 4, 2, 3, 4, 2, 3])
    tiers: list[str] = field(default_factory=lambda: [
        "High", "High", "High", "Mid", "Mid", "Mid", "Mid", "Low", "Low", "Low", "Low"])
    counts: dict = field(default_factory=lambda: {
        "train": 4000, "val": 1000, "test": 2000, "test_ood": 2000})
    noise_sigma: float = 0.1
    rho_in: float = 0.9
    rho_out: float | str = CHANCE
    jitter_scale: tuple[float, float] = (0.6, 1.4)
    jitter_offset: tuple[float, float] = (-0.4, 0.4)
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if len(self.cardinalities) != len(self.tiers):
            raise ConfigError("cardinalities and tiers must have equal length")
        if any(n < 2 for n in self.cardinalities):
            raise ConfigError("every concept needs at least 2 values")
        if any(t not in ("High", "Mid", "Low") for t in self.tiers):
            raise ConfigError("tiers must be High/Mid/Low")
        if "High" not in self.tiers:
            raise ConfigError("at least one High-tier concept is required")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if not 0.0 <= self.rho_in <= 1.0:
            raise ConfigError("rho_in must be in [0, 1]")
        if self.rho_out != CHANCE and not 0.0 <= float(self.rho_out) <= 1.0:
            raise ConfigError(f"rho_out must be in [0, 1] or {CHANCE!r}")
        if any(n < 1 for n in self.counts.values()):
            raise ConfigError("split counts must be at least 1")
        high_capacity = math.prod(
            n for n, t in zip(self.cardinalities, self.tiers) if t == "High")
        if high_capacity < self.num_classes:
            raise ConfigError(
                f"High-tier value combinations ({high_capacity}) cannot injectively "
                f"encode {self.num_classes} classes")

    @property
    def num_concepts(self) -> int:
        return len(self.cardinalities)

    def scheme(self) -> ConceptScheme:
        classes = tuple(f"class_{k}" for k in range(self.num_classes))
        concepts = tuple(
            ConceptSpec(f"concept_{l + 1}", tuple(f"v{j}" for j in range(n)))
            for l, n in enumerate(self.cardinalities))
        return ConceptScheme(classes, concepts)

    def true_importance_levels(self) -> tuple[tuple[str, ...], ...]:
        """Every class row copies the tier assignment of the generator."""
        row = tuple(self.tiers)
        return tuple(row for _ in range(self.num_classes))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "num_classes": self.num_classes,
            "cardinalities": list(self.cardinalities),
            "tiers": list(self.tiers),
            "counts": dict(self.counts),
            "noise_sigma": self.noise_sigma,
            "rho_in": self.rho_in,
            "rho_out": self.rho_out,
            "jitter_scale": list(self.jitter_scale),
            "jitter_offset": list(self.jitter_offset),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthConfig":
        kwargs = {k: v for k, v in payload.items() if k != "format_version"}
        if "jitter_scale" in kwargs:
            kwargs["jitter_scale"] = tuple(kwargs["jitter_scale"])
        if "jitter_offset" in kwargs:
            kwargs["jitter_offset"] = tuple(kwargs["jitter_offset"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"malformed synthetic config: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SynthConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


def _class_value_maps(config: SynthConfig) -> list[list[int]]:
    """Per concept, the class-linked value for each class.

    High-tier concepts jointly encode the class through a mixed-radix map,
    so distinct classes always get distinct High value tuples. Mid and Low
    concepts link class k to value k mod N_l.
    """
    high = [l for l, t in enumerate(config.tiers) if t == "High"]
    maps = [[k % n for k in range(config.num_classes)] for n in config.cardinalities]
    for k in range(config.num_classes):
        rem = k
        for l in high:
            maps[l][k] = rem % config.cardinalities[l]
            rem //= config.cardinalities[l]
    return maps


def high_value_lookup(config: SynthConfig) -> dict[tuple[int, ...], int]:
    """Map from High-tier value tuples back to the class they encode."""
    maps = _class_value_maps(config)
    high = [l for l, t in enumerate(config.tiers) if t == "High"]
    return {tuple(maps[l][k] for l in high): k for k in range(config.num_classes)}


def _draw_linked(rng: np.random.Generator, linked: int, n_values: int, p: float) -> int:
    """Return ``linked`` with probability p, otherwise uniform over the rest.

    p = 1/n_values makes the draw exactly uniform, hence independent of the
    class; p = 1 makes it deterministic.
    """
    if rng.random() < p:
        return linked
    other = int(rng.integers(n_values - 1))
    return other if other < linked else other + 1


def _sample_rng(seed: int, domain_tag: str, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _DOMAIN_CODE[domain_tag], _SPLIT_CODE[split], index])


def generate(config: SynthConfig, domain_tag: str, split: str = "test") -> Dataset:
    """Draw one synthetic dataset for the given domain and split."""
    if domain_tag not in DOMAIN_TAGS:
        raise ConfigError(f"domain tag must be one of {DOMAIN_TAGS}, got {domain_tag!r}")
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    count_key = "test_ood" if (domain_tag == OUT_OF_DOMAIN and "test_ood" in config.counts) \
        else split
    if count_key not in config.counts:
        raise ConfigError(f"no sample count configured for split {count_key!r}")
    count = int(config.counts[count_key])

    scheme = config.scheme()
    maps = _class_value_maps(config)
    cards = config.cardinalities
    width = sum(cards)
    offsets = np.cumsum([0] + cards)

    scale = np.ones(width)
    offset = np.zeros(width)
    if domain_tag == OUT_OF_DOMAIN:
        jitter_rng = np.random.default_rng(
            [config.seed, _DOMAIN_CODE[domain_tag], _JITTER_STREAM])
        scale = jitter_rng.uniform(*config.jitter_scale, size=width)
        offset = jitter_rng.uniform(*config.jitter_offset, size=width)

    rho_low = config.rho_in if domain_tag == IN_DOMAIN else config.rho_out
    samples = []
    for i in range(count):
        rng = _sample_rng(config.seed, domain_tag, split, i)
        label = int(rng.integers(config.num_classes))
        values = []
        for l, (card, tier) in enumerate(zip(cards, config.tiers)):
            linked = maps[l][label]
            if tier == "High":
                values.append(linked)
            elif tier == "Mid":
                values.append(_draw_linked(rng, linked, card, MID_LINK_PROB))
            else:
                p = 1.0 / card if rho_low == CHANCE else float(rho_low)
                values.append(_draw_linked(rng, linked, card, p))
        features = np.zeros(width)
        for l, value in enumerate(values):
            features[offsets[l] + value] = 1.0
        if config.noise_sigma > 0:
            features = features + rng.normal(0.0, config.noise_sigma, size=width)
        features = scale * features + offset
        samples.append(Sample(features, tuple(values), label))
    return Dataset(scheme, samples, domain_tag, split)


# -- CSV round trip -----------------------------------------------------------

def _header(num_concepts: int, feature_width: int) -> list[str]:
    return (["split", "class"]
            + [f"concept_{l + 1}" for l in range(num_concepts)]
            + [f"f_{j}" for j in range(feature_width)])


def save_dataset(dataset: Dataset, path) -> None:
    """Write the delimited dataset format: split, class, concept values, features."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header(dataset.scheme.num_concepts, dataset.feature_width))
        for s in dataset.samples:
            writer.writerow([dataset.split, s.label]
                            + [int(v) for v in s.concept_values]
                            + [repr(float(f)) for f in s.features])


def load_dataset(data_path, scheme_path=None, scheme: ConceptScheme | None = None,
                 domain_tag: str = IN_DOMAIN) -> Dataset:
    """Load and validate a dataset CSV against a scheme.

    The scheme comes either from ``scheme_path`` or a pre-loaded ``scheme``.
    The file's rows must agree on a single split; the domain tag is metadata
    the file does not carry, so callers pass it.
    """
    if scheme is None:
        if scheme_path is None:
            raise ConfigError("either scheme_path or scheme is required")
        scheme = ConceptScheme.load(scheme_path)
    num_concepts = scheme.num_concepts

    with open(data_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{data_path}: no samples") from None
        if len(header) < 2 + num_concepts + 1 or header[:2] != ["split", "class"]:
            raise ConfigError(f"{data_path}: malformed header")
        expected_concepts = [f"concept_{l + 1}" for l in range(num_concepts)]
        if header[2:2 + num_concepts] != expected_concepts:
            raise ConfigError(
                f"{data_path}: concept columns do not match the scheme "
                f"({num_concepts} concepts expected)")
        feature_width = len(header) - 2 - num_concepts
        if header[2 + num_concepts:] != [f"f_{j}" for j in range(feature_width)]:
            raise ConfigError(f"{data_path}: malformed feature columns")

        samples = []
        splits_seen = set()
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError(f"{data_path}: ragged row at line {row_number}")
            try:
                splits_seen.add(row[0])
                label = int(row[1])
                values = tuple(int(v) for v in row[2:2 + num_concepts])
                features = np.array([float(v) for v in row[2 + num_concepts:]])
            except ValueError as exc:
                raise ConfigError(f"{data_path}: bad value at line {row_number}: {exc}") from exc
            if not 0 <= label < scheme.num_classes:
                raise ConfigError(
                    f"{data_path}: unknown class index {label} at line {row_number}")
            for value, card in zip(values, scheme.cardinalities):
                if not 0 <= value < card:
                    raise ConfigError(
                        f"{data_path}: concept value index {value} out of range "
                        f"at line {row_number}")
            if not np.all(np.isfinite(features)):
                raise ConfigError(f"{data_path}: non-finite feature at line {row_number}")
            samples.append(Sample(features, values, label))

    if not samples:
        raise ConfigError(f"{data_path}: no samples")
    if len(splits_seen) != 1:
        raise ConfigError(f"{data_path}: mixed split values {sorted(splits_seen)}")
    split = splits_seen.pop()
    if split not in SPLITS:
        raise ConfigError(f"{data_path}: unknown split {split!r}")
    return Dataset(scheme, samples, domain_tag, split)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int):
    """Yield (features, concept values, labels) mini-batches in seeded order.

    The shuffle is a function of (seed, epoch); the final short batch is kept.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be at least 1, got {batch_size}")
    x, c, y = dataset.as_arrays()
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start:start + batch_size]
        yield x[idx], c[idx], y[idx]
