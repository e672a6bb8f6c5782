"""Majority-vote fusion over a masked subset of a classifier pool."""
from __future__ import annotations

import numpy as np

from .errors import EmptyEnsemble, MaskLengthMismatch, MalformedFile
from .pool import PredictionTable


def as_mask(mask, size: int) -> np.ndarray:
    bits = np.asarray(mask)
    if bits.ndim != 1 or bits.size != size:
        raise MaskLengthMismatch(f"mask has length {bits.size}, pool has {size} classifiers")
    if not np.isin(bits, (0, 1)).all():
        raise MalformedFile("mask entries must be 0 or 1")
    return bits.astype(bool)


def vote_counts(table: PredictionTable, mask) -> np.ndarray:
    """(num_classes, N) matrix of votes cast by the selected classifiers."""
    sel = as_mask(mask, table.num_classifiers)
    if not sel.any():
        raise EmptyEnsemble("majority vote needs at least one selected classifier")
    n, k = table.num_samples, table.num_classes
    flat = table.predictions[sel] * n + np.arange(n)
    return np.bincount(flat.ravel(), minlength=k * n).reshape(k, n)


def majority_vote(table: PredictionTable, mask) -> np.ndarray:
    """Most voted label per sample; ties go to the smallest label."""
    # argmax returns the first maximum, i.e. the smallest tied label
    return np.argmax(vote_counts(table, mask), axis=0)


def ensemble_accuracy(table: PredictionTable, mask) -> float:
    fused = majority_vote(table, mask)
    return int(np.count_nonzero(fused == table.truth)) / table.num_samples


def parse_mask(text: str, names) -> np.ndarray:
    """Accept ``"1,0,1"`` / ``"101"`` bit strings or a comma-separated name list."""
    names = list(names)
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if tokens and all(t in ("0", "1") for t in tokens) and len(tokens) == len(names):
        return np.array([int(t) for t in tokens], dtype=np.int8)
    if len(tokens) == 1 and set(tokens[0]) <= {"0", "1"} and len(tokens[0]) == len(names):
        return np.array([int(ch) for ch in tokens[0]], dtype=np.int8)
    bits = np.zeros(len(names), dtype=np.int8)
    for t in tokens:
        if t not in names:
            raise MalformedFile(f"mask refers to unknown classifier {t!r}")
        bits[names.index(t)] = 1
    return bits
