"""Flow-record ingestion, encoding, standardization and stratified splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

UNLABELED = -1

# provenance codes for rows of an assembled training set
ORIGINAL, PSEUDO, SYNTHETIC = 0, 1, 2


class SchemaError(ValueError):
    """Raised when input rows or schema documents violate the declared layout."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical" | "ignore"
    header: str | None = None

    def matches_header(self, cell: str) -> bool:
        return cell.strip() == (self.header if self.header is not None else self.name)


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label_column: str
    classes: tuple[str, ...]
    class_merges: dict[str, str] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.label_column not in names:
            raise SchemaError(f"label column {self.label_column!r} not among columns")
        for c in self.columns:
            if c.kind not in ("numeric", "categorical", "ignore"):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
        if len(set(self.classes)) != len(self.classes):
            raise SchemaError("class names must be unique")
        for raw, target in self.class_merges.items():
            if target not in self.classes:
                raise SchemaError(f"merge target {target!r} (from {raw!r}) is not a declared class")

    @property
    def label_index(self) -> int:
        return [c.name for c in self.columns].index(self.label_column)

    @property
    def feature_columns(self) -> list[tuple[int, Column]]:
        return [
            (i, c)
            for i, c in enumerate(self.columns)
            if c.name != self.label_column and c.kind != "ignore"
        ]

    def map_label(self, raw: str) -> str:
        """Resolve a raw class name through the merge table.

        Lookup order: explicit merge entry, declared class, then the ``"*"``
        default entry if present.
        """
        raw = raw.strip()
        if raw in self.class_merges:
            return self.class_merges[raw]
        if raw in self.classes:
            return raw
        if "*" in self.class_merges:
            return self.class_merges["*"]
        raise SchemaError(f"unknown label {raw!r} and no default merge ('*') configured")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "columns": [
                {"name": c.name, "kind": c.kind, **({"header": c.header} if c.header else {})}
                for c in self.columns
            ],
            "label_column": self.label_column,
            "classes": list(self.classes),
            "class_merges": dict(self.class_merges),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            cols = tuple(Column(c["name"], c["kind"], c.get("header")) for c in doc["columns"])
            return cls(
                columns=cols,
                label_column=doc["label_column"],
                classes=tuple(doc["classes"]),
                class_merges=dict(doc.get("class_merges", {})),
                name=doc.get("name", "custom"),
            )
        except KeyError as exc:
            raise SchemaError(f"schema document missing field {exc}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_schema(path_or_name: str | Path) -> Schema:
    """Load a schema JSON file, or one of the bundled ones by name
    (``nsl_kdd``, ``nsl_kdd_plus``, ``cicids2017``)."""
    p = Path(path_or_name)
    if p.exists():
        return Schema.from_dict(json.loads(p.read_text(encoding="utf-8")))
    bundled = resources.files("sfids") / "schemas" / f"{path_or_name}.json"
    if not bundled.is_file():
        raise SchemaError(f"no schema file or bundled schema named {str(path_or_name)!r}")
    return Schema.from_dict(json.loads(bundled.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RawRecord:
    values: tuple[str, ...]
    label: str


def load_csv(path: str | Path, schema: Schema, header: bool | None = None) -> list[RawRecord]:
    """Read comma-delimited flow records.

    ``header=None`` sniffs the first row: it is treated as a header when every
    cell matches the schema's column names. ``header=True`` requires a matching
    header; ``header=False`` treats every row as data.
    """
    ncols = len(schema.columns)
    label_at = schema.label_index
    records: list[RawRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if rowno == 1 and header is not False:
                is_header = len(row) == ncols and all(
                    c.matches_header(cell) for c, cell in zip(schema.columns, row)
                )
                if is_header:
                    continue
                if header:
                    raise SchemaError(f"row 1: header does not match schema {schema.name!r}")
            if len(row) != ncols:
                raise SchemaError(f"row {rowno}: expected {ncols} cells, got {len(row)}")
            label = row[label_at].strip()
            if not label:
                raise SchemaError(f"row {rowno}: empty label")
            schema.map_label(label)  # unknown labels fail here, with the row number below
            records.append(RawRecord(tuple(row), label))
    return records


def _parse_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


@dataclass
class Standardizer:
    """Per-column moments and categorical vocabularies fit on training records."""

    means: dict[str, float]
    stds: dict[str, float]  # 0.0 marks a zero-variance column
    vocab: dict[str, dict[str, int]]

    def output_dim(self, schema: Schema) -> int:
        return sum(
            len(self.vocab[c.name]) if c.kind == "categorical" else 1
            for _, c in schema.feature_columns
        )

    def to_dict(self) -> dict:
        return {"means": self.means, "stds": self.stds, "vocab": self.vocab}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(dict(doc["means"]), dict(doc["stds"]), {k: dict(v) for k, v in doc["vocab"].items()})


def fit_preprocess(records: Sequence[RawRecord], schema: Schema) -> Standardizer:
    if not records:
        raise ValueError("cannot fit a standardizer on zero records")
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    vocab: dict[str, dict[str, int]] = {}
    for i, col in schema.feature_columns:
        if col.kind == "numeric":
            vals = np.array([_parse_float(r.values[i]) for r in records], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                means[col.name], stds[col.name] = 0.0, 0.0
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                mu = float(vals.mean())
                sd = float(vals.std())  # population
            if not np.isfinite(mu):
                mu, sd = 0.0, 0.0
            means[col.name] = mu
            stds[col.name] = sd if sd > 0 and np.isfinite(sd) else 0.0
        else:
            v: dict[str, int] = {}
            for r in records:
                v.setdefault(r.values[i].strip(), len(v))
            vocab[col.name] = v
    return Standardizer(means, stds, vocab)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded samples plus class metadata.

    ``labels`` holds class indices or ``UNLABELED``. True classes of unlabeled
    rows live in ``hidden_labels`` and are for diagnostics only; training code
    reads ``labels`` exclusively.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    hidden_labels: np.ndarray | None = None
    provenance: np.ndarray | None = None
    source_index: np.ndarray | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise ValueError(f"features {feats.shape} and labels {labels.shape} disagree")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        m = len(self.class_names)
        bad = (labels != UNLABELED) & ((labels < 0) | (labels >= m))
        if bad.any():
            raise ValueError(f"class index out of range [0, {m})")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        for name in ("hidden_labels", "provenance", "source_index"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64)
                if arr.shape != labels.shape:
                    raise ValueError(f"{name} has shape {arr.shape}, expected {labels.shape}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        feats.setflags(write=False)
        labels.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        lab = self.labels[self.labels != UNLABELED]
        return np.bincount(lab, minlength=self.num_classes)

    @property
    def is_labeled(self) -> bool:
        return bool(np.all(self.labels != UNLABELED))

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.class_names,
            pick(self.hidden_labels),
            pick(self.provenance),
            pick(self.source_index),
        )

    def true_labels(self) -> np.ndarray:
        """Labels if present, otherwise hidden labels. Diagnostics only."""
        if self.is_labeled:
            return self.labels
        if self.hidden_labels is None:
            raise ValueError("dataset has unlabeled rows and no hidden labels")
        return np.where(self.labels == UNLABELED, self.hidden_labels, self.labels)


def transform(records: Sequence[RawRecord], standardizer: Standardizer, schema: Schema) -> Dataset:
    cols = schema.feature_columns
    n = len(records)
    blocks = []
    for i, col in cols:
        if col.kind == "numeric":
            raw = np.array([_parse_float(r.values[i]) for r in records], dtype=np.float64)
            mu, sd = standardizer.means[col.name], standardizer.stds[col.name]
            with np.errstate(invalid="ignore", over="ignore"):
                out = (raw - mu) / sd if sd > 0 else np.zeros(n)
            out[~np.isfinite(out)] = 0.0
            blocks.append(out[:, None])
        else:
            vocab = standardizer.vocab[col.name]
            onehot = np.zeros((n, len(vocab)))
            for row, r in enumerate(records):
                slot = vocab.get(r.values[i].strip())
                if slot is not None:
                    onehot[row, slot] = 1.0
            blocks.append(onehot)
    feats = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Dataset(feats, encode_labels(records, schema), schema.classes)


def encode_labels(records: Sequence[RawRecord], schema: Schema) -> np.ndarray:
    """Class indices after applying the schema's merges."""
    index = {c: k for k, c in enumerate(schema.classes)}
    return np.array([index[schema.map_label(r.label)] for r in records], dtype=np.int64)


def _stratum_counts(n: int, fraction: float) -> int:
    # guard against 0.01 * 100 -> 1.0000000000000002
    return math.ceil(fraction * n - 1e-9)


def split(
    dataset: Dataset, test_fraction: float, label_fraction: float, seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified train/test split followed by a stratified labeled subsample.

    Per class: ``round(test_fraction * n)`` rows go to test, and of the
    remaining training rows ``ceil(label_fraction * n_train)`` (at least 1)
    stay labeled. Unlabeled rows carry ``UNLABELED`` with the true class kept
    in ``hidden_labels``.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    if not 0 < label_fraction <= 1:
        raise ValueError("label_fraction must lie in (0, 1]")
    if not dataset.is_labeled:
        raise ValueError("split expects a fully labeled dataset")
    rng = np.random.default_rng(seed)
    test_idx, lab_idx, unl_idx = [], [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        n_train = idx.size - n_test
        name = dataset.class_names[c]
        if n_test == 0 or n_train == 0:
            raise ValueError(
                f"class {name!r} ({idx.size} samples) leaves an empty test or train split; "
                "merge it into another class via the schema's class_merges"
            )
        n_lab = min(n_train, max(1, _stratum_counts(n_train, label_fraction)))
        test_idx.append(idx[:n_test])
        lab_idx.append(idx[n_test : n_test + n_lab])
        unl_idx.append(idx[n_test + n_lab :])
    test_i = np.sort(np.concatenate(test_idx))
    lab_i = np.sort(np.concatenate(lab_idx))
    unl_i = np.sort(np.concatenate(unl_idx)) if unl_idx else np.zeros(0, dtype=np.int64)

    def part(idx: np.ndarray, hide: bool) -> Dataset:
        labels = dataset.labels[idx]
        return Dataset(
            dataset.features[idx],
            np.full(idx.size, UNLABELED) if hide else labels,
            dataset.class_names,
            hidden_labels=labels if hide else None,
            source_index=idx,
        )

    return part(lab_i, False), part(unl_i, True), part(test_i, False)


def subsample_unlabeled(unlabeled: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform random subset of the unlabeled pool (never stratified: true labels are hidden)."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng([seed, 0x5B5A])
    n = int(round(fraction * len(unlabeled)))
    return unlabeled.subset(np.sort(rng.permutation(len(unlabeled))[:n]))


# ---------------------------------------------------------------- persistence
# A dataset container is an ``.npz`` archive with arrays ``features``
# (float64), ``labels`` (int64), optional ``hidden_labels``/``provenance``/
# ``source_index`` (int64) and ``meta``: a UTF-8 JSON string holding
# ``class_names``, ``schema_hash`` and ``format`` = "sfids-dataset/1".

DATASET_FORMAT = "sfids-dataset/1"


def save_dataset(path: str | Path, ds: Dataset, schema_hash: str = "") -> None:
    meta = {"format": DATASET_FORMAT, "class_names": list(ds.class_names), "schema_hash": schema_hash}
    arrays = {"features": ds.features, "labels": ds.labels, "meta": np.array(json.dumps(meta))}
    for name in ("hidden_labels", "provenance", "source_index"):
        if getattr(ds, name) is not None:
            arrays[name] = getattr(ds, name)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path: str | Path, expect_schema_hash: str | None = None) -> tuple[Dataset, str]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != DATASET_FORMAT:
            raise SchemaError(f"{path}: not a {DATASET_FORMAT} container")
        if expect_schema_hash is not None and meta["schema_hash"] != expect_schema_hash:
            raise SchemaError(f"{path}: schema hash mismatch")
        opt = {k: z[k] for k in ("hidden_labels", "provenance", "source_index") if k in z.files}
        ds = Dataset(z["features"], z["labels"], tuple(meta["class_names"]), **opt)
    return ds, meta["schema_hash"]
