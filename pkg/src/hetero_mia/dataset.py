"""Loading, validating and preprocessing labeled tabular data.

A CSV file is read against a declarative :class:`Schema` into a
:class:`RawDataset` (typed columns, labels, groups, category vocabularies);
:func:`preprocess` turns that into the numeric :class:`TabularDataset` every
other module consumes.  :func:`gen_synthetic` draws class-conditional
Gaussian data with known parameters for oracle tests and surrogate runs.

Conventions
-----------
* Categorical vocabularies come from the schema when declared, otherwise from
  the whole file before any split, so every subset shares one feature space.
* Standardization uses population statistics (``ddof=0``); a constant column
  is only centered.
* Rows with a missing value in any used column are dropped and counted.
"""

from __future__ import annotations

import csv
import json
import math
import operator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import DataError, SchemaError
from .seeding import make_rng

__all__ = [
    "ColumnSpec",
    "LabelRule",
    "Schema",
    "RawDataset",
    "TabularDataset",
    "GaussianComponent",
    "SyntheticSpec",
    "load_schema",
    "load_csv",
    "load_dataset",
    "preprocess",
    "gen_synthetic",
    "load_synthetic_spec",
    "concat",
]

COLUMN_KINDS = ("numeric", "categorical", "drop")

_OPS = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "!=": operator.ne,
}


def _canonical_token(value: str) -> str:
    """Strip whitespace and collapse integral numeric spellings ("1.0" -> "1")."""
    value = value.strip()
    try:
        num = float(value)
    except ValueError:
        return value
    if math.isfinite(num) and num == int(num):
        return str(int(num))
    return value


# --------------------------------------------------------------------------- schema


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    vocabulary: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.vocabulary is not None and self.kind != "categorical":
            raise SchemaError(f"column {self.name!r}: vocabulary only allowed on categoricals")


@dataclass(frozen=True)
class LabelRule:
    """Maps a raw label cell to a class index.

    ``kind="threshold"`` parses the cell as a number and yields class 1 when
    ``value <op> threshold`` holds, else class 0.  ``kind="map"`` looks the
    (canonicalized) token up in ``mapping``.
    """

    kind: str
    op: str | None = None
    threshold: float | None = None
    mapping: Mapping[str, int] | None = None

    def __post_init__(self):
        if self.kind == "threshold":
            if self.op not in _OPS or self.threshold is None:
                raise SchemaError(f"threshold label rule needs op in {sorted(_OPS)} and a value")
        elif self.kind == "map":
            if not self.mapping:
                raise SchemaError("map label rule needs a non-empty mapping")
            if sorted(set(self.mapping.values())) != list(range(max(self.mapping.values()) + 1)):
                raise SchemaError("map label rule must cover classes 0..K-1 without gaps")
        else:
            raise SchemaError(f"unknown label rule kind {self.kind!r}")

    @property
    def n_classes(self) -> int:
        if self.kind == "threshold":
            return 2
        return max(self.mapping.values()) + 1

    def apply(self, token: str) -> int:
        if self.kind == "threshold":
            return int(_OPS[self.op](float(token), self.threshold))
        key = _canonical_token(token)
        if key not in self.mapping:
            raise ValueError(f"label value {token!r} not in label map")
        return int(self.mapping[key])


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]
    label_column: str
    label_rule: LabelRule
    group_column: str | None = None
    positive_label_name: str = "positive"
    class_names: tuple[str, ...] | None = None
    delimiter: str = ","
    na_values: tuple[str, ...] = ("", "?", "NA", "nan")
    name: str = "dataset"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if self.label_column in names:
            raise SchemaError(f"label column {self.label_column!r} is also listed as a feature column")
        if self.group_column is not None and self.group_column == self.label_column:
            raise SchemaError("group column cannot be the label column")
        if not self.feature_columns:
            raise SchemaError("schema has no numeric or categorical feature columns")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise SchemaError("class_names length does not match the label rule's class count")

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind != "drop")

    @property
    def n_classes(self) -> int:
        return self.label_rule.n_classes

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Schema":
        try:
            label = raw["label"]
            rule = label["rule"]
            if "map" in rule:
                label_rule = LabelRule(
                    "map", mapping={_canonical_token(str(k)): int(v) for k, v in rule["map"].items()}
                )
            else:
                label_rule = LabelRule("threshold", op=rule["op"], threshold=float(rule["value"]))
            columns = []
            for col in raw["columns"]:
                vocab = col.get("vocabulary")
                if vocab is not None:
                    vocab = tuple(_canonical_token(str(v)) for v in vocab)
                columns.append(ColumnSpec(str(col["name"]), col.get("kind", "numeric"), vocab))
            class_names = label.get("class_names")
            return cls(
                columns=tuple(columns),
                label_column=str(label["column"]),
                label_rule=label_rule,
                group_column=raw.get("group_column"),
                positive_label_name=label.get("positive_name", "positive"),
                class_names=tuple(class_names) if class_names else None,
                delimiter=raw.get("delimiter", ","),
                na_values=tuple(str(v) for v in raw.get("na_values", ("", "?", "NA", "nan"))),
                name=raw.get("name", "dataset"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc!r}") from exc


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read schema file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"schema file {path} is not a mapping")
    return Schema.from_dict(raw)


# --------------------------------------------------------------------------- datasets


@dataclass
class RawDataset:
    """Typed columns straight from the CSV, before encoding."""

    schema: Schema
    columns: dict[str, np.ndarray]
    labels: np.ndarray
    groups: np.ndarray | None
    vocabularies: dict[str, tuple[str, ...]]
    dropped_rows: int = 0
    source: str | None = None

    @property
    def n(self) -> int:
        return len(self.labels)

    def subset(self, idx: Sequence[int] | np.ndarray) -> "RawDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            columns={k: v[idx] for k, v in self.columns.items()},
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
        )


@dataclass
class TabularDataset:
    """Numeric design matrix with integer labels and optional group ids.

    ``onehot_blocks`` maps a categorical source column to the indices of its
    one-hot columns; ``numeric_mask`` flags columns eligible for standardization.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    n_classes: int
    groups: np.ndarray | None = None
    numeric_mask: np.ndarray | None = None
    onehot_blocks: dict[str, list[int]] = field(default_factory=dict)
    dropped_rows: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=object)
        if self.numeric_mask is None:
            self.numeric_mask = np.ones(self.features.shape[1], dtype=bool)
        self.numeric_mask = np.asarray(self.numeric_mask, dtype=bool)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "TabularDataset":
        n, d = self.features.shape
        if len(self.labels) != n:
            raise DataError(f"{len(self.labels)} labels for {n} feature rows")
        if self.groups is not None and len(self.groups) != n:
            raise DataError(f"{len(self.groups)} group ids for {n} feature rows")
        if len(self.feature_names) != d or len(self.numeric_mask) != d:
            raise DataError("feature_names / numeric_mask do not match the feature dimension")
        if self.n_classes < 2:
            raise DataError(f"need at least two classes, got K={self.n_classes}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature values")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")
        for name, cols in self.onehot_blocks.items():
            if n and not np.allclose(self.features[:, cols].sum(axis=1), 1.0):
                raise DataError(f"one-hot block {name!r} does not sum to 1 on every row")
        return self

    def subset(self, idx: Sequence[int] | np.ndarray) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
        )

    def class_counts(self) -> dict[int, int]:
        return {k: int(np.sum(self.labels == k)) for k in range(self.n_classes)}

    def group_values(self) -> list[str]:
        if self.groups is None:
            return []
        return sorted({str(g) for g in self.groups})

    def save(self, path: str | Path) -> Path:
        """Write a columnar CSV plus a ``<stem>.meta.json`` sidecar; returns the sidecar path."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*self.feature_names, "label", "group"])
            for i in range(self.n):
                group = "" if self.groups is None else str(self.groups[i])
                writer.writerow([*(repr(float(v)) for v in self.features[i]), int(self.labels[i]), group])
        meta = {
            "feature_names": self.feature_names,
            "n_classes": self.n_classes,
            "numeric_mask": [bool(v) for v in self.numeric_mask],
            "onehot_blocks": self.onehot_blocks,
            "groups": self.group_values() if self.groups is not None else None,
            "n_rows": self.n,
            "dropped_rows": self.dropped_rows,
        }
        sidecar = path.with_name(path.stem + ".meta.json")
        sidecar.write_text(json.dumps(meta, indent=2))
        return sidecar

    @classmethod
    def load(cls, path: str | Path) -> "TabularDataset":
        path = Path(path)
        meta = json.loads(path.with_name(path.stem + ".meta.json").read_text())
        d = len(meta["feature_names"])
        rows = list(csv.reader(path.open(newline="")))[1:]
        features = np.array([[float(v) for v in r[:d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
        labels = np.array([int(r[d]) for r in rows], dtype=np.int64)
        groups = None if meta["groups"] is None else np.array([r[d + 1] for r in rows], dtype=object)
        return cls(
            features=features,
            labels=labels,
            feature_names=list(meta["feature_names"]),
            n_classes=int(meta["n_classes"]),
            groups=groups,
            numeric_mask=np.array(meta["numeric_mask"], dtype=bool),
            onehot_blocks={k: list(v) for k, v in meta["onehot_blocks"].items()},
            dropped_rows=int(meta.get("dropped_rows", 0)),
        ).validate()


def concat(parts: Iterable[TabularDataset]) -> TabularDataset:
    parts = list(parts)
    first = parts[0]
    groups = None
    if all(p.groups is not None for p in parts):
        groups = np.concatenate([p.groups for p in parts])
    return replace(
        first,
        features=np.vstack([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        groups=groups,
    )


# --------------------------------------------------------------------------- CSV ingestion


def load_csv(
    path: str | Path,
    schema: Schema,
    vocabularies: Mapping[str, Sequence[str]] | None = None,
) -> RawDataset:
    """Read ``path`` under ``schema``.

    Parameters
    ----------
    path : path-like
        RFC-4180 CSV with a header row (delimiter from the schema).
    schema : Schema
    vocabularies : mapping, optional
        Category vocabularies overriding the ones derived from this file; used
        when several files must share one feature space.

    Raises
    ------
    SchemaError
        A schema column is missing from the header.
    DataError
        Unparseable numeric cell or label (message carries the data-row
        index, 0-based, excluding the header), undeclared category, or no rows
        left after dropping incomplete ones.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    position = {name: i for i, name in enumerate(header)}
    used = [c.name for c in schema.feature_columns] + [schema.label_column]
    if schema.group_column is not None:
        used.append(schema.group_column)
    for name in [c.name for c in schema.columns] + used:
        if name not in position:
            raise SchemaError(f"column {name!r} not found in {path.name}")

    na = set(schema.na_values)
    kept: list[list[str]] = []
    row_ids: list[int] = []
    dropped = 0
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} cells, found {len(row)}")
        if any(row[position[name]].strip() in na for name in used):
            dropped += 1
            continue
        kept.append(row)
        row_ids.append(i)
    if not kept:
        raise DataError(f"no complete rows left in {path.name} ({dropped} dropped)")

    columns: dict[str, np.ndarray] = {}
    vocabs: dict[str, tuple[str, ...]] = {}
    for col in schema.feature_columns:
        j = position[col.name]
        if col.kind == "numeric":
            values = np.empty(len(kept), dtype=np.float64)
            for i, row in enumerate(kept):
                try:
                    values[i] = float(row[j])
                except ValueError:
                    raise DataError(f"row {row_ids[i]}: column {col.name!r} value {row[j]!r} is not numeric") from None
                if not math.isfinite(values[i]):
                    raise DataError(f"row {row_ids[i]}: column {col.name!r} is not finite")
            columns[col.name] = values
        else:
            tokens = np.array([_canonical_token(row[j]) for row in kept], dtype=object)
            if vocabularies is not None and col.name in vocabularies:
                vocab = tuple(vocabularies[col.name])
            elif col.vocabulary is not None:
                vocab = col.vocabulary
            else:
                vocab = tuple(sorted(set(tokens)))
            unseen = sorted(set(tokens) - set(vocab))
            if unseen:
                raise DataError(f"column {col.name!r}: values {unseen} not in vocabulary {list(vocab)}")
            columns[col.name] = tokens
            vocabs[col.name] = vocab

    labels = np.empty(len(kept), dtype=np.int64)
    j = position[schema.label_column]
    for i, row in enumerate(kept):
        try:
            labels[i] = schema.label_rule.apply(row[j])
        except ValueError as exc:
            raise DataError(f"row {row_ids[i]}: label {row[j]!r}: {exc}") from None

    groups = None
    if schema.group_column is not None:
        j = position[schema.group_column]
        groups = np.array([row[j].strip() for row in kept], dtype=object)

    return RawDataset(
        schema=schema,
        columns=columns,
        labels=labels,
        groups=groups,
        vocabularies=vocabs,
        dropped_rows=dropped,
        source=str(path),
    )


def preprocess(
    data: RawDataset | TabularDataset,
    one_hot: bool = True,
    standardize: bool = False,
) -> TabularDataset:
    """Encode a raw dataset (or re-standardize an encoded one).

    Column order is schema order; a categorical expands to one column per
    vocabulary entry, named ``"<column>=<value>"``.  With ``one_hot=False`` a
    categorical becomes a single integer-code column instead.  Standardization
    touches numeric source columns only and uses statistics of ``data`` alone.
    On a :class:`TabularDataset` with ``standardize=False`` this is the
    identity.
    """
    if isinstance(data, TabularDataset):
        out = replace(data, features=data.features.copy())
    else:
        blocks: list[np.ndarray] = []
        names: list[str] = []
        numeric: list[bool] = []
        onehot_blocks: dict[str, list[int]] = {}
        for col in data.schema.feature_columns:
            values = data.columns[col.name]
            if col.kind == "numeric":
                blocks.append(values[:, None].astype(np.float64))
                names.append(col.name)
                numeric.append(True)
                continue
            vocab = data.vocabularies[col.name]
            code = {v: i for i, v in enumerate(vocab)}
            codes = np.array([code[v] for v in values], dtype=np.int64)
            if one_hot:
                start = len(names)
                blocks.append(np.eye(len(vocab))[codes] if len(codes) else np.zeros((0, len(vocab))))
                names.extend(f"{col.name}={v}" for v in vocab)
                numeric.extend([False] * len(vocab))
                onehot_blocks[col.name] = list(range(start, start + len(vocab)))
            else:
                blocks.append(codes[:, None].astype(np.float64))
                names.append(col.name)
                numeric.append(False)
        out = TabularDataset(
            features=np.hstack(blocks),
            labels=data.labels.copy(),
            feature_names=names,
            n_classes=data.schema.n_classes,
            groups=None if data.groups is None else data.groups.copy(),
            numeric_mask=np.array(numeric, dtype=bool),
            onehot_blocks=onehot_blocks,
            dropped_rows=data.dropped_rows,
        )

    if standardize and out.n:
        cols = np.flatnonzero(out.numeric_mask)
        block = out.features[:, cols]
        mean = block.mean(axis=0)
        std = block.std(axis=0)
        std[std == 0] = 1.0
        out.features[:, cols] = (block - mean) / std
    return out.validate()


def load_dataset(
    path: str | Path,
    schema: Schema | str | Path,
    standardize: bool = False,
) -> TabularDataset:
    if not isinstance(schema, Schema):
        schema = load_schema(schema)
    return preprocess(load_csv(path, schema), standardize=standardize)


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class GaussianComponent:
    group: str
    label: int
    mean: np.ndarray
    cov: np.ndarray
    count: int


@dataclass(frozen=True)
class SyntheticSpec:
    dimension: int
    n_classes: int
    components: tuple[GaussianComponent, ...]

    def validate(self) -> "SyntheticSpec":
        if self.n_classes < 2:
            raise DataError("synthetic spec needs at least two classes")
        for c in self.components:
            mean = np.asarray(c.mean, dtype=np.float64)
            cov = np.asarray(c.cov, dtype=np.float64)
            where = f"component (group={c.group!r}, label={c.label})"
            if mean.shape != (self.dimension,) or cov.shape != (self.dimension, self.dimension):
                raise DataError(f"{where}: mean/cov shape does not match dimension {self.dimension}")
            if not 0 <= c.label < self.n_classes:
                raise DataError(f"{where}: label outside [0, {self.n_classes})")
            if c.count < 1:
                raise DataError(f"{where}: count must be >= 1")
            scale = max(1.0, float(np.abs(cov).max()))
            if not np.allclose(cov, cov.T, atol=1e-10 * scale, rtol=0):
                raise DataError(f"{where}: covariance is not symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-10 * scale:
                raise DataError(f"{where}: covariance is not positive semi-definite")
        return self

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SyntheticSpec":
        d = int(raw["dimension"])
        comps = []
        for c in raw["components"]:
            mean = np.broadcast_to(np.asarray(c.get("mean", 0.0), dtype=np.float64), (d,)).copy()
            cov = np.asarray(c.get("cov", 1.0), dtype=np.float64)
            if cov.ndim == 0:
                cov = float(cov) * np.eye(d)
            elif cov.ndim == 1:
                cov = np.diag(cov)
            comps.append(GaussianComponent(str(c["group"]), int(c["label"]), mean, cov, int(c["count"])))
        return cls(d, int(raw.get("n_classes", 2)), tuple(comps))


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    return SyntheticSpec.from_dict(yaml.safe_load(Path(path).read_text()))


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gen_synthetic(spec: SyntheticSpec, seed: int) -> TabularDataset:
    """Sample every component of ``spec`` in declaration order from one PCG64 stream."""
    spec.validate()
    rng = make_rng(seed)
    feats, labels, groups = [], [], []
    for c in spec.components:
        factor = _psd_factor(np.asarray(c.cov, dtype=np.float64))
        z = rng.standard_normal((c.count, spec.dimension))
        feats.append(np.asarray(c.mean, dtype=np.float64) + z @ factor.T)
        labels.append(np.full(c.count, c.label, dtype=np.int64))
        groups.append(np.full(c.count, c.group, dtype=object))
    return TabularDataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        feature_names=[f"x{i}" for i in range(spec.dimension)],
        n_classes=spec.n_classes,
        groups=np.concatenate(groups),
    ).validate()
