"""Synthetic classifier pools with block-correlated errors.

Members of a family share an error source: with probability ``shared`` a
member copies the family's common hit/miss draw (and, on a miss, the family's
common wrong label), otherwise it draws independently. Every member has
marginal accuracy ``accuracy``; members of one family correlate at roughly
``shared``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pool import PredictionTable

DML_NAMES = ("contrastive", "nngk", "proxyanchor", "softtriple", "supcon", "triplet")


@dataclass(frozen=True)
class Family:
    name: str
    members: tuple  # classifier names
    accuracy: float
    shared: float


def three_family_layout() -> list:
    """24 classifiers in three correlated blocks: the two VGG nets form one large,
    weaker, strongly correlated block; each ResNet is a smaller, stronger block."""
    vgg = tuple(f"{d}+vgg{v}" for v in (16, 19) for d in DML_NAMES)
    r18 = tuple(f"{d}+resnet18" for d in DML_NAMES)
    r50 = tuple(f"{d}+resnet50" for d in DML_NAMES)
    return [
        Family("vgg", vgg, accuracy=0.74, shared=0.85),
        Family("resnet18", r18, accuracy=0.80, shared=0.45),
        Family("resnet50", r50, accuracy=0.82, shared=0.45),
    ]


def _wrong_label(truth, rng, num_classes):
    return (truth + rng.integers(1, num_classes, size=truth.shape)) % num_classes


def correlated_family_pool(num_samples: int, num_classes: int, families=None,
                           seed: int = 0) -> PredictionTable:
    families = three_family_layout() if families is None else families
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, num_classes, size=num_samples)
    names, rows = [], []
    for fam in families:
        common_hit = rng.random(num_samples) < fam.accuracy
        common_wrong = _wrong_label(truth, rng, num_classes)
        for member in fam.members:
            use_common = rng.random(num_samples) < fam.shared
            own_hit = rng.random(num_samples) < fam.accuracy
            own_wrong = _wrong_label(truth, rng, num_classes)
            hit = np.where(use_common, common_hit, own_hit)
            wrong = np.where(use_common, common_wrong, own_wrong)
            rows.append(np.where(hit, truth, wrong))
            names.append(member)
    return PredictionTable(names, truth, np.vstack(rows), num_classes)
