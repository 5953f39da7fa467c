"""Observational datasets, variable kinds and the CSV dataset format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError, StorageError


@dataclass(frozen=True)
class VariableKind:
    """Continuous, binary or categorical with ``cardinality`` levels 0..cardinality-1."""

    kind: str = "continuous"
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind == "continuous":
            if self.cardinality is not None:
                raise SchemaError("continuous variables have no cardinality")
        elif self.kind == "binary":
            if self.cardinality not in (None, 2):
                raise SchemaError("binary variables have cardinality 2")
            object.__setattr__(self, "cardinality", 2)
        elif self.kind == "categorical":
            if self.cardinality is None or self.cardinality < 2:
                raise SchemaError("categorical variables need cardinality >= 2")
        else:
            raise SchemaError(f"unknown variable kind {self.kind!r}")

    @classmethod
    def continuous(cls) -> "VariableKind":
        return cls("continuous")

    @classmethod
    def binary(cls) -> "VariableKind":
        return cls("binary", 2)

    @classmethod
    def categorical(cls, cardinality: int) -> "VariableKind":
        return cls("categorical", int(cardinality))

    @classmethod
    def parse(cls, text: str) -> "VariableKind":
        """Parse ``continuous``, ``binary`` or ``categorical:K``."""
        name, _, arg = text.strip().partition(":")
        if name == "categorical":
            try:
                return cls.categorical(int(arg))
            except ValueError:
                raise SchemaError(f"bad categorical cardinality in {text!r}") from None
        if arg:
            raise SchemaError(f"unexpected argument in variable kind {text!r}")
        return cls(name)

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous"

    def __str__(self) -> str:
        if self.kind == "categorical":
            return f"categorical:{self.cardinality}"
        return self.kind


CONTINUOUS = VariableKind.continuous()
BINARY = VariableKind.binary()


def _validate_column(name: str, values: np.ndarray, kind: VariableKind) -> np.ndarray:
    if values.ndim != 1:
        raise DataError(f"column {name} must be one-dimensional")
    bad = ~np.isfinite(values)
    if bad.any():
        raise DataError(f"column {name} has a missing or non-finite value at row {int(np.argmax(bad)) + 1}")
    if kind.is_discrete:
        invalid = (values != np.round(values)) | (values < 0) | (values >= kind.cardinality)
        if invalid.any():
            row = int(np.argmax(invalid))
            raise SchemaError(
                f"column {name} row {row + 1}: value {values[row]!r} is not a category of {kind}"
            )
    return values


@dataclass(frozen=True)
class ObservationalDataset:
    """Paired treatment/outcome samples. Discrete columns hold integer categories."""

    a: np.ndarray
    y: np.ndarray
    a_kind: VariableKind = CONTINUOUS
    y_kind: VariableKind = CONTINUOUS
    name: str = "dataset"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if a.shape != y.shape:
            raise DataError(f"columns differ in length: {a.shape[0]} vs {y.shape[0]}")
        if a.size == 0:
            raise DataError("dataset is empty")
        a = _validate_column("a", a, self.a_kind)
        y = _validate_column("y", y, self.y_kind)
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    def subset(self, index) -> "ObservationalDataset":
        return ObservationalDataset(self.a[index], self.y[index], self.a_kind, self.y_kind, self.name)


def _format(value: float, discrete: bool) -> str:
    if discrete:
        return str(int(value))
    return repr(float(value))


def save_dataset(dataset: ObservationalDataset, path) -> Path:
    """Write ``a,y`` CSV (UTF-8, LF endings, shortest round-trip float repr)."""
    path = Path(path)
    da, dy = dataset.a_kind.is_discrete, dataset.y_kind.is_discrete
    lines = ["a,y"]
    lines.extend(f"{_format(a, da)},{_format(y, dy)}" for a, y in zip(dataset.a, dataset.y))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise StorageError(f"cannot write dataset {path}: {exc}") from exc
    return path


def load_dataset(
    path,
    a_kind: VariableKind = CONTINUOUS,
    y_kind: VariableKind = CONTINUOUS,
    name: str | None = None,
) -> ObservationalDataset:
    """Read and validate an ``a,y`` CSV file with a header row."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read dataset {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["a", "y"]:
            raise DataError(f"{path}: expected header 'a,y'")
        a_vals, y_vals = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{line_no}: expected 2 fields, got {len(row)}")
            parsed = []
            for col, text in zip("ay", row):
                text = text.strip()
                if text == "" or text.lower() in ("na", "nan"):
                    raise DataError(f"{path}:{line_no}: missing value in column {col}")
                try:
                    value = float(text)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: cannot parse {text!r} in column {col}") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}:{line_no}: non-finite value in column {col}")
                parsed.append(value)
            a_vals.append(parsed[0])
            y_vals.append(parsed[1])
    a = np.array(a_vals, dtype=float)
    y = np.array(y_vals, dtype=float)
    for col, values, kind in (("a", a, a_kind), ("y", y, y_kind)):
        if kind.is_discrete:
            invalid = (values != np.round(values)) | (values < 0) | (values >= kind.cardinality)
            if invalid.any():
                row = int(np.argmax(invalid))
                raise SchemaError(
                    f"{path}:{row + 2}: value {values[row]!r} in column {col} is not a category of {kind}"
                )
    return ObservationalDataset(a, y, a_kind, y_kind, name or path.stem)
