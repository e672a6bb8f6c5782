"""Prediction tables: the per-fold matrix of hard labels a classifier pool emits.

File format (one table per file)::

    sample_id,truth,c1,c2,...
    #num_classes=30          <- optional
    0,4,4,4,...

Fold manifests are JSON arrays of ``{"fold": int, "split": str, "path": str}``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateClassifier,
    IndexOutOfRange,
    LabelOutOfRange,
    MalformedFile,
    RowOrderMismatch,
)

SPLITS = ("train", "validation", "test")
_NUM_CLASSES_DIRECTIVE = "#num_classes="


def _frozen(a, dtype=np.int64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PredictionTable:
    """Hard predictions of ``M`` classifiers on ``N`` samples.

    ``predictions[i, j]`` is the label classifier ``i`` assigns to sample ``j``.
    Arrays are stored read-only so a table can be shared between threads.
    """

    classifier_names: tuple
    truth: np.ndarray
    predictions: np.ndarray
    num_classes: int
    sample_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        names = tuple(str(n) for n in self.classifier_names)
        truth = _frozen(self.truth)
        preds = np.array(self.predictions, dtype=np.int64)
        if preds.ndim == 1:
            preds = preds[None, :]
        preds = _frozen(preds)
        if truth.ndim != 1 or truth.size == 0:
            raise MalformedFile("truth must be a non-empty 1-d sequence")
        if len(names) == 0 or preds.ndim != 2 or preds.shape != (len(names), truth.size):
            raise MalformedFile(
                f"predictions shape {preds.shape} does not match "
                f"{len(names)} classifiers x {truth.size} samples"
            )
        seen = set()
        for name in names:
            if name in seen:
                raise DuplicateClassifier(f"duplicate classifier name {name!r}")
            seen.add(name)
        if int(self.num_classes) < 1:
            raise MalformedFile("num_classes must be positive")
        for what, arr in (("truth", truth), ("prediction", preds)):
            if arr.min() < 0 or arr.max() >= self.num_classes:
                raise LabelOutOfRange(
                    f"{what} label outside [0, {self.num_classes}): "
                    f"min={arr.min()}, max={arr.max()}"
                )
        ids = np.arange(truth.size) if self.sample_ids is None else self.sample_ids
        ids = _frozen(ids)
        if ids.shape != truth.shape:
            raise MalformedFile("sample_ids length differs from truth")
        object.__setattr__(self, "classifier_names", names)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "sample_ids", ids)

    @property
    def num_classifiers(self) -> int:
        return self.predictions.shape[0]

    @property
    def num_samples(self) -> int:
        return self.predictions.shape[1]

    def hits(self) -> np.ndarray:
        """Boolean (M, N) matrix, True where a classifier is correct."""
        return self.predictions == self.truth[None, :]

    def index_of(self, name: str) -> int:
        try:
            return self.classifier_names.index(name)
        except ValueError:
            raise IndexOutOfRange(f"no classifier named {name!r}") from None

    def subset(self, samples) -> "PredictionTable":
        """Restrict to the given sample positions (keeps ids and class count)."""
        samples = np.asarray(samples, dtype=np.int64)
        return PredictionTable(
            self.classifier_names,
            self.truth[samples],
            self.predictions[:, samples],
            self.num_classes,
            self.sample_ids[samples],
        )

    def __eq__(self, other):
        if not isinstance(other, PredictionTable):
            return NotImplemented
        return (
            self.classifier_names == other.classifier_names
            and self.num_classes == other.num_classes
            and np.array_equal(self.truth, other.truth)
            and np.array_equal(self.predictions, other.predictions)
            and np.array_equal(self.sample_ids, other.sample_ids)
        )

    __hash__ = None


def _parse_int(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise MalformedFile(f"line {lineno}: {token!r} is not an integer") from None


def load_prediction_table(path) -> PredictionTable:
    """Read and validate a prediction CSV."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedFile(f"{path}: empty file")
    header = lines[0].rstrip("\r").split(",")
    if len(header) < 3 or header[0] != "sample_id" or header[1] != "truth":
        raise MalformedFile(f"{path}: header must start with 'sample_id,truth' and name >= 1 classifier")
    names = header[2:]
    if any(n == "" for n in names):
        raise MalformedFile(f"{path}: empty classifier name in header")
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise DuplicateClassifier(f"{path}: duplicate classifier name {dup!r}")

    declared = None
    body_start = 1
    if len(lines) > 1 and lines[1].startswith("#"):
        directive = lines[1].rstrip("\r")
        if not directive.startswith(_NUM_CLASSES_DIRECTIVE):
            raise MalformedFile(f"{path}: unknown header directive {directive!r}")
        declared = _parse_int(directive[len(_NUM_CLASSES_DIRECTIVE):], 2)
        if declared < 1:
            raise MalformedFile(f"{path}: num_classes must be positive")
        body_start = 2

    width = len(header)
    rows = []
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        tokens = line.rstrip("\r").split(",")
        if len(tokens) != width:
            raise MalformedFile(f"{path}: line {lineno} has {len(tokens)} fields, expected {width}")
        rows.append([_parse_int(t, lineno) for t in tokens])
    if not rows:
        raise MalformedFile(f"{path}: no sample rows")
    data = np.array(rows, dtype=np.int64)
    labels = data[:, 1:]
    if labels.min() < 0:
        raise LabelOutOfRange(f"{path}: negative label")
    if declared is None:
        num_classes = int(labels.max()) + 1
    else:
        if labels.max() >= declared:
            raise LabelOutOfRange(f"{path}: label {labels.max()} >= declared num_classes={declared}")
        num_classes = declared
    return PredictionTable(names, data[:, 1], data[:, 2:].T, num_classes, data[:, 0])


def format_prediction_table(table: PredictionTable) -> str:
    out = ["sample_id,truth," + ",".join(table.classifier_names)]
    out.append(f"{_NUM_CLASSES_DIRECTIVE}{table.num_classes}")
    cols = np.vstack([table.sample_ids, table.truth, table.predictions]).T
    out.extend(",".join(map(str, row)) for row in cols.tolist())
    return "\n".join(out) + "\n"


def save_prediction_table(table: PredictionTable, path) -> None:
    """Write ``table``; the class count is always written so reloads are exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_prediction_table(table))


def merge_tables(tables: Sequence[PredictionTable]) -> PredictionTable:
    """Stack the classifiers of several tables covering the same samples."""
    if not tables:
        raise MalformedFile("nothing to merge")
    first = tables[0]
    names, rows = [], []
    for t in tables:
        if not np.array_equal(t.sample_ids, first.sample_ids):
            raise RowOrderMismatch("tables disagree on sample_id order")
        if not np.array_equal(t.truth, first.truth):
            raise RowOrderMismatch("tables disagree on ground truth")
        names.extend(t.classifier_names)
        rows.append(t.predictions)
    num_classes = max(t.num_classes for t in tables)
    return PredictionTable(names, first.truth, np.vstack(rows), num_classes, first.sample_ids)


def classifier_accuracy(table: PredictionTable, index: int) -> float:
    if not 0 <= index < table.num_classifiers:
        raise IndexOutOfRange(f"classifier index {index} outside [0, {table.num_classifiers})")
    hits = int(np.count_nonzero(table.predictions[index] == table.truth))
    return hits / table.num_samples


def accuracies(table: PredictionTable) -> np.ndarray:
    return np.count_nonzero(table.hits(), axis=1) / table.num_samples


@dataclass(frozen=True)
class FoldManifest:
    fold_id: int
    split: str
    table_path: str


def load_manifest(path) -> list:
    """Parse a fold manifest; relative table paths resolve against the manifest's directory."""
    base = Path(path).resolve().parent
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise MalformedFile(f"{path}: manifest must be a JSON array")
    entries, seen = [], set()
    for item in raw:
        try:
            fold, split, table_path = item["fold"], item["split"], item["path"]
        except (TypeError, KeyError):
            raise MalformedFile(f"{path}: entries need 'fold', 'split' and 'path'") from None
        if not isinstance(fold, int) or isinstance(fold, bool) or fold < 0:
            raise MalformedFile(f"{path}: fold must be a non-negative integer, got {fold!r}")
        if split not in SPLITS:
            raise MalformedFile(f"{path}: split must be one of {SPLITS}, got {split!r}")
        if (fold, split) in seen:
            raise MalformedFile(f"{path}: duplicate entry for fold {fold} split {split}")
        seen.add((fold, split))
        if not os.path.isabs(table_path):
            table_path = str(base / table_path)
        entries.append(FoldManifest(fold, split, table_path))
    return entries


def save_manifest(entries: Sequence[FoldManifest], path, relative_to=None) -> None:
    records = []
    for e in entries:
        p = e.table_path
        if relative_to is not None:
            p = os.path.relpath(p, relative_to)
        records.append({"fold": e.fold_id, "split": e.split, "path": p})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")
