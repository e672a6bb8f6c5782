"""Pairwise hit/miss relationships and the correlation-coefficient diversity score.

For a pair ``(c_i, c_j)``:

========  ==========  ===========
          hit ``c_i``  miss ``c_i``
========  ==========  ===========
hit c_j   a           b
miss c_j  c           d
========  ==========  ===========

Lower correlation means a more diverse pair.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange
from .pool import PredictionTable


@dataclass(frozen=True)
class RelationshipCounts:
    """Fractions of samples in each hit/miss cell (they sum to one)."""

    a: float
    b: float
    c: float
    d: float

    @property
    def degenerate(self) -> bool:
        """True when one classifier of the pair never hits or never misses."""
        return _denominator(self.a, self.b, self.c, self.d) == 0.0


def _denominator(a, b, c, d):
    # grouped so that swapping b and c reproduces bit-identical products
    return ((a + b) * (a + c)) * ((c + d) * (b + d))


def relationship(table: PredictionTable, i: int, j: int) -> RelationshipCounts:
    m = table.num_classifiers
    for k in (i, j):
        if not 0 <= k < m:
            raise IndexOutOfRange(f"classifier index {k} outside [0, {m})")
    hit_i = table.predictions[i] == table.truth
    hit_j = table.predictions[j] == table.truth
    n = table.num_samples
    both = int(np.count_nonzero(hit_i & hit_j))
    only_j = int(np.count_nonzero(hit_j & ~hit_i))
    only_i = int(np.count_nonzero(hit_i & ~hit_j))
    neither = n - both - only_j - only_i
    return RelationshipCounts(both / n, only_j / n, only_i / n, neither / n)


def correlation_coefficient(rc: RelationshipCounts) -> float:
    """(ad - bc) / sqrt((a+b)(c+d)(a+c)(b+d)); 0.0 for a degenerate pair."""
    den = _denominator(rc.a, rc.b, rc.c, rc.d)
    if den == 0.0:
        return 0.0
    rho = (rc.a * rc.d - rc.b * rc.c) / math.sqrt(den)
    return min(1.0, max(-1.0, rho))


@dataclass(frozen=True, eq=False)
class DiversityMatrix:
    classifier_names: tuple
    scores: np.ndarray
    degenerate_pairs: tuple  # (i, j) with i <= j

    def to_csv(self) -> str:
        lines = ["classifier," + ",".join(self.classifier_names)]
        for name, row in zip(self.classifier_names, self.scores):
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "classifiers": list(self.classifier_names),
            "scores": [[round(float(v), 6) for v in row] for row in self.scores],
            "degenerate_pairs": [
                [self.classifier_names[i], self.classifier_names[j]] for i, j in self.degenerate_pairs
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def diversity_matrix(table: PredictionTable) -> DiversityMatrix:
    """Correlation coefficient for every classifier pair of the pool.

    Counts are exact integer matrix products; each fraction is formed with a
    single division, so the result matches the pairwise :func:`relationship`
    path bit for bit.
    """
    hits = table.hits().astype(np.int64)
    miss = 1 - hits
    n = table.num_samples
    # [i, j] entries, indexed as in relationship(table, i, j)
    n_a = hits @ hits.T
    n_b = miss @ hits.T  # c_j hit, c_i miss
    n_c = hits @ miss.T
    n_d = miss @ miss.T
    a, b, c, d = n_a / n, n_b / n, n_c / n, n_d / n

    den = _denominator(a, b, c, d)
    num = a * d - b * c
    degenerate = den == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(degenerate, 0.0, num / np.sqrt(np.where(degenerate, 1.0, den)))
    scores = np.clip(scores, -1.0, 1.0)
    diag = np.arange(table.num_classifiers)
    scores[diag, diag] = np.where(degenerate[diag, diag], 0.0, 1.0)
    # symmetrise explicitly so the invariant holds regardless of BLAS summation order
    upper = np.triu(scores)
    scores = upper + np.triu(upper, 1).T
    pairs = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(degenerate))))
    scores.setflags(write=False)
    return DiversityMatrix(table.classifier_names, scores, pairs)
