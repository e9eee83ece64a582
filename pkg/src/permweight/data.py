"""Datasets, weight sets and delimiter-separated file I/O."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class DataError(Exception):
    """Base class for dataset problems a user can fix."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class SizeError(DataError):
    pass


class ValidationError(DataError):
    def __init__(self, issues: Sequence[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


class TreatmentKind(enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class Normalization(enum.Enum):
    NONE = "none"
    HAJEK = "hajek"


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


def infer_treatment_kind(treatment: np.ndarray) -> TreatmentKind:
    t = np.asarray(treatment, dtype=float)
    if np.all((t == 0.0) | (t == 1.0)):
        return TreatmentKind.BINARY
    return TreatmentKind.CONTINUOUS


@dataclass(frozen=True)
class Dataset:
    """Treatment, optional outcome and covariates for n units.

    Arrays are copied and marked read-only, so a Dataset can be shared
    freely between worker threads. Construction does not validate; call
    :func:`validate` or use :meth:`create`.
    """

    treatment: np.ndarray
    covariates: np.ndarray
    outcome: np.ndarray | None = None
    treatment_kind: TreatmentKind | None = None
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        a = _frozen(self.treatment).reshape(-1)
        x = _frozen(self.covariates)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "covariates", x)
        if self.outcome is not None:
            object.__setattr__(self, "outcome", _frozen(self.outcome).reshape(-1))
        if self.treatment_kind is None:
            object.__setattr__(self, "treatment_kind", infer_treatment_kind(a))
        else:
            object.__setattr__(self, "treatment_kind", TreatmentKind(self.treatment_kind))
        if not self.covariate_names:
            names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
            object.__setattr__(self, "covariate_names", names)

    @classmethod
    def create(cls, treatment, covariates, outcome=None, treatment_kind=None,
               covariate_names: Sequence[str] = ()) -> "Dataset":
        ds = cls(treatment, covariates, outcome, treatment_kind, tuple(covariate_names))
        issues = validate(ds)
        if issues:
            raise ValidationError(issues)
        return ds

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def d(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def is_binary(self) -> bool:
        return self.treatment_kind is TreatmentKind.BINARY

    def require_outcome(self) -> np.ndarray:
        if self.outcome is None:
            raise ValidationError(["dataset has no outcome column"])
        return self.outcome

    def subset(self, index: np.ndarray) -> "Dataset":
        y = None if self.outcome is None else self.outcome[index]
        return Dataset(self.treatment[index], self.covariates[index], y,
                       self.treatment_kind, self.covariate_names)


def _nonfinite_locations(values: np.ndarray, label: str, names: Sequence[str] = ()) -> list[str]:
    bad = np.argwhere(~np.isfinite(values))
    out = []
    for loc in bad[:20]:
        if values.ndim == 2:
            r, j = int(loc[0]), int(loc[1])
            col = names[j] if j < len(names) else str(j)
            out.append(f"non-finite {label} at (row {r}, column {col})")
        else:
            out.append(f"non-finite {label} at row {int(loc[0])}")
    if len(bad) > 20:
        out.append(f"... {len(bad) - 20} more non-finite {label} values")
    return out


def validate(dataset: Dataset) -> list[str]:
    """Return every violated invariant; an empty list means valid."""
    issues: list[str] = []
    a, x, y = dataset.treatment, dataset.covariates, dataset.outcome
    n = a.shape[0]
    if x.ndim != 2:
        issues.append("covariates must be a 2-D matrix")
        return issues
    if x.shape[0] != n:
        issues.append(f"covariates have {x.shape[0]} rows but treatment has {n}")
    if y is not None and y.shape[0] != n:
        issues.append(f"outcome has {y.shape[0]} rows but treatment has {n}")
    if n < 2:
        issues.append(f"need at least 2 units, got {n}")
    if x.shape[1] < 1:
        issues.append("need at least 1 covariate column")
    issues += _nonfinite_locations(a, "treatment")
    issues += _nonfinite_locations(x, "covariate", dataset.covariate_names)
    if y is not None:
        issues += _nonfinite_locations(y, "outcome")
    if dataset.is_binary:
        off = np.flatnonzero(~((a == 0.0) | (a == 1.0)))
        if off.size:
            issues.append(f"binary treatment has values outside {{0,1}} at rows {off[:10].tolist()}")
        elif n >= 1 and (np.all(a == 0.0) or np.all(a == 1.0)):
            issues.append("single treatment arm: binary treatment needs both arms")
    return issues


@dataclass(frozen=True)
class Schema:
    treatment: str
    covariates: tuple[str, ...]
    outcome: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate column")


def _data_lines(path: Path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return lines


def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header and "," not in header else ","


def load_dataset(
    path: str | Path,
    schema: Schema,
    treatment_kind: TreatmentKind | str | None = None,
) -> Dataset:
    """Read a header-bearing CSV/TSV file into a validated Dataset.

    Lines beginning with ``#`` are ignored. The treatment kind is binary
    iff every treatment value is 0 or 1 unless ``treatment_kind`` is given.
    """
    lines = _data_lines(Path(path))
    if not lines:
        raise SchemaError(f"{path}: file has no header row")
    reader = csv.reader(lines, delimiter=_sniff_delimiter(lines[0]))
    header = [h.strip() for h in next(reader)]
    wanted = [schema.treatment, *schema.covariates]
    if schema.outcome is not None:
        wanted.append(schema.outcome)
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
    cols = [header.index(c) for c in wanted]
    rows = []
    for i, rec in enumerate(reader):
        if not rec or all(not cell.strip() for cell in rec):
            continue
        vals = []
        for name, j in zip(wanted, cols):
            cell = rec[j].strip() if j < len(rec) else ""
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"{path}: row {i} (line {i + 2}), column '{name}': "
                    f"cannot parse {cell!r} as a number",
                    row=i,
                ) from None
        rows.append(vals)
    if len(rows) < 2:
        raise SizeError(f"{path}: need at least 2 data rows, got {len(rows)}")
    table = np.array(rows, dtype=float)
    d = len(schema.covariates)
    outcome = table[:, 1 + d] if schema.outcome is not None else None
    kind = None if treatment_kind is None else TreatmentKind(treatment_kind)
    return Dataset.create(table[:, 0], table[:, 1:1 + d], outcome, kind, schema.covariates)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_header(fh, meta: dict[str, Any] | None) -> None:
    if meta:
        for key, value in meta.items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")


def save_dataset(dataset: Dataset, path: str | Path, *, treatment_name: str = "a",
                 outcome_name: str = "y", meta: dict[str, Any] | None = None) -> Schema:
    """Write a dataset as CSV with full float precision; returns its schema."""
    names = list(dataset.covariate_names)
    header = [treatment_name] + ([outcome_name] if dataset.outcome is not None else []) + names
    with open(path, "w", newline="") as fh:
        write_header(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(dataset.treatment[i])]
            if dataset.outcome is not None:
                row.append(_fmt(dataset.outcome[i]))
            row += [_fmt(v) for v in dataset.covariates[i]]
            w.writerow(row)
    return Schema(treatment_name, tuple(names), outcome_name if dataset.outcome is not None else None)


@dataclass(frozen=True)
class WeightSet:
    """Per-unit nonnegative weights and how they were produced."""

    weights: np.ndarray
    replicates: int = 1
    normalization: Normalization = Normalization.NONE
    clamp_count: int = 0
    method_tag: str = ""
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if not np.all(np.isfinite(w)):
            raise ValidationError(["weights must be finite"])
        if np.any(w < 0):
            raise ValidationError(["weights must be nonnegative"])
        if self.replicates < 1:
            raise ValidationError(["replicates must be >= 1"])
        if self.normalization is Normalization.HAJEK and w.size:
            if not math.isclose(float(w.sum()), w.size, rel_tol=1e-9):
                raise ValidationError(["Hajek weights must sum to n"])

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    def hajek(self) -> "WeightSet":
        return WeightSet(hajek_normalize(self.weights), self.replicates, Normalization.HAJEK,
                         self.clamp_count, self.method_tag, dict(self.extra))

    def report(self) -> dict[str, Any]:
        w = self.weights
        return {
            "method_tag": self.method_tag,
            "replicates": self.replicates,
            "normalization": self.normalization.value,
            "clamp_count": self.clamp_count,
            "n": self.n,
            "weight_summary": {
                "min": float(w.min()), "max": float(w.max()),
                "mean": float(w.mean()), "sum": float(w.sum()),
                "effective_sample_size": effective_sample_size(w),
            },
            **self.extra,
        }


def hajek_normalize(weights: np.ndarray) -> np.ndarray:
    """Rescale so the weights sum to n."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValidationError(["weights sum to zero; cannot normalize"])
    return w * (w.size / total)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = float(np.dot(w, w))
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


def write_weights(ws: WeightSet, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        write_header(fh, meta)
        fh.write("unit_index,weight\n")
        for i, v in enumerate(ws.weights):
            fh.write(f"{i},{_fmt(v)}\n")


def read_weights(path: str | Path) -> np.ndarray:
    """Read a ``unit_index,weight`` file; rows must be indexed 0..n-1 in order."""
    lines = _data_lines(Path(path))
    if not lines:
        raise SchemaError(f"{path}: empty weights file")
    reader = csv.reader(lines, delimiter=_sniff_delimiter(lines[0]))
    header = [h.strip() for h in next(reader)]
    if "weight" not in header:
        raise SchemaError(f"{path}: weights file needs a 'weight' column")
    j = header.index("weight")
    out = []
    for i, rec in enumerate(reader):
        if not rec:
            continue
        try:
            out.append(float(rec[j]))
        except (ValueError, IndexError):
            raise ParseError(f"{path}: row {i}: bad weight {rec!r}", row=i) from None
    return np.array(out, dtype=float)


@dataclass(frozen=True)
class EstimandRequest:
    kind: str  # "binary-means" | "ate" | "dose-response"
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("binary-means", "ate", "dose-response"):
            raise ValueError(f"unknown estimand {self.kind!r}")
        if self.kind == "dose-response":
            g = np.asarray(self.grid if self.grid is not None else [], dtype=float)
            if g.size == 0 or np.any(np.diff(g) < 0):
                raise ValueError("dose-response grid must be nonempty and sorted ascending")
            object.__setattr__(self, "grid", tuple(float(v) for v in g))
