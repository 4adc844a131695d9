"""Machine-readable expert knowledge: the per-class concept-importance matrix.

Each (class, concept) cell carries one of three importance levels. The file
format is JSON with ordered class and concept name lists plus a K x L grid of
level strings; on load the grid is reindexed into the scheme's order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cbm import ConceptScheme
from .errors import ConfigError

FORMAT_VERSION = 1

HIGH = "High"
MID = "Mid"
LOW = "Low"
LEVELS = (HIGH, MID, LOW)


@dataclass(frozen=True)
class ImportanceMatrix:
    """K x L grid of {High, Mid, Low} levels bound to a concept scheme."""

    scheme: ConceptScheme
    levels: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        k, l = self.scheme.num_classes, self.scheme.num_concepts
        if len(self.levels) != k or any(len(row) != l for row in self.levels):
            raise ConfigError(
                f"importance grid must be {k}x{l}, got "
                f"{len(self.levels)}x{len(self.levels[0]) if self.levels else 0}")
        for row in self.levels:
            for cell in row:
                if cell not in LEVELS:
                    raise ConfigError(f"invalid importance level {cell!r}; expected one of {LEVELS}")

    def level(self, class_index: int, concept_index: int) -> str:
        return self.levels[class_index][concept_index]

    def pairs(self, level: str) -> set[tuple[int, int]]:
        """All (class, concept) index pairs marked at the given level."""
        if level not in LEVELS:
            raise ConfigError(f"invalid importance level {level!r}; expected one of {LEVELS}")
        return {(k, l)
                for k, row in enumerate(self.levels)
                for l, cell in enumerate(row)
                if cell == level}

    def randomized(self, seed: int) -> "ImportanceMatrix":
        """Permute each class row's levels with a seeded shuffle.

        Per-row level counts are preserved, so the randomized control matches
        the true matrix in regularization strength and differs only in which
        concepts each class emphasizes.
        """
        rng = np.random.default_rng(seed)
        rows = []
        for row in self.levels:
            perm = rng.permutation(len(row))
            rows.append(tuple(row[j] for j in perm))
        return ImportanceMatrix(self.scheme, tuple(rows))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "classes": list(self.scheme.class_names),
            "concepts": [c.name for c in self.scheme.concepts],
            "importance": [list(row) for row in self.levels],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def randomize_importance(matrix: ImportanceMatrix, seed: int) -> ImportanceMatrix:
    return matrix.randomized(seed)


def load_importance(path, scheme: ConceptScheme) -> ImportanceMatrix:
    """Load and validate an importance file against the scheme.

    Row and column order follow the scheme, not the file: files may list
    classes and concepts in any order as long as the names match exactly.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"importance file {path} is not valid JSON: {exc}") from exc
    for field in ("classes", "concepts", "importance"):
        if field not in doc:
            raise ConfigError(f"importance file {path} is missing field {field!r}")

    file_classes = [str(n) for n in doc["classes"]]
    file_concepts = [str(n) for n in doc["concepts"]]
    scheme_concepts = [c.name for c in scheme.concepts]

    unknown = set(file_classes) - set(scheme.class_names)
    if unknown:
        raise ConfigError(f"unknown class name(s) in {path}: {sorted(unknown)}")
    missing = set(scheme.class_names) - set(file_classes)
    if missing:
        raise ConfigError(f"class(es) missing from {path}: {sorted(missing)}")
    unknown = set(file_concepts) - set(scheme_concepts)
    if unknown:
        raise ConfigError(f"unknown concept name(s) in {path}: {sorted(unknown)}")
    missing = set(scheme_concepts) - set(file_concepts)
    if missing:
        raise ConfigError(f"concept(s) missing from {path}: {sorted(missing)}")

    grid = doc["importance"]
    if len(grid) != len(file_classes) or any(len(row) != len(file_concepts) for row in grid):
        raise ConfigError(
            f"importance grid in {path} must be {len(file_classes)}x{len(file_concepts)}")

    class_pos = {name: i for i, name in enumerate(file_classes)}
    concept_pos = {name: i for i, name in enumerate(file_concepts)}
    rows = []
    for class_name in scheme.class_names:
        src = grid[class_pos[class_name]]
        row = []
        for concept_name in scheme_concepts:
            cell = src[concept_pos[concept_name]]
            if cell not in LEVELS:
                raise ConfigError(
                    f"invalid importance level {cell!r} for ({class_name}, {concept_name}) "
                    f"in {path}; expected one of {LEVELS}")
            row.append(cell)
        rows.append(tuple(row))
    return ImportanceMatrix(scheme, tuple(rows))
