"""Metric-learning objectives as plain numpy kernels.

Per-item kernels (``contrastive_loss``, ``triplet_loss``, ``gaussian_kernel``,
the NNGK probabilities, ``softtriple_similarity``/``softtriple_loss``) follow
the textbook formulas literally. Batch objectives (``*_batch_loss``,
``proxy_anchor_loss``, ``supcon_loss``) are vectorised and are what the
embedding trainer in :mod:`ensemble_forge.lab` differentiates.

Distances are squared Euclidean throughout; margins are compared against
squared distances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateDenominator,
    DimensionMismatch,
    EmptyBatch,
    ForgeError,
    InsufficientCenters,
    MissingProxy,
    NonFiniteValue,
    NonPositiveBandwidth,
    NoPositives,
    UnknownClass,
    ZeroProbability,
)

PROB_FLOOR = 1e-12


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def _check_same_dim(*vectors):
    dims = {v.shape[-1] for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedding dimensions differ: {sorted(dims)}")


def squared_distance(x, y) -> float:
    x, y = _vec(x), _vec(y)
    _check_same_dim(x, y)
    diff = x - y
    return float(diff @ diff)


def l2_normalize(x, axis=-1, eps=1e-12):
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    return x / np.maximum(norm, eps)


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """``vectors[i]`` is the embedding of an item with class ``labels[i]``."""

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if v.ndim != 2 or v.shape[0] == 0:
            raise EmptyBatch("a batch needs at least one (N, D) embedding")
        if v.shape[0] != y.size:
            raise DimensionMismatch(f"{v.shape[0]} vectors but {y.size} labels")
        if not np.isfinite(v).all():
            raise NonFiniteValue("embeddings must be finite")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def take(self, idx) -> "EmbeddingBatch":
        return EmbeddingBatch(self.vectors[idx], self.labels[idx])

    def with_vectors(self, vectors) -> "EmbeddingBatch":
        return EmbeddingBatch(vectors, self.labels)


def _pairwise_sq(a, b=None):
    b = a if b is None else b
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


# --- contrastive / triplet -------------------------------------------------

def contrastive_loss(x_p, x_n, same_class: bool, margin: float = 1.0) -> float:
    """D^2 for a same-class pair, max(0, margin - D^2) otherwise."""
    d2 = squared_distance(x_p, x_n)
    if same_class:
        return d2
    return max(0.0, margin - d2)


def triplet_loss(x_a, x_p, x_n, margin: float = 1.0) -> float:
    return max(0.0, squared_distance(x_a, x_p) - squared_distance(x_a, x_n) + margin)


def contrastive_batch_loss(batch: EmbeddingBatch, margin: float = 1.0) -> float:
    """Mean contrastive loss over all unordered pairs of the batch."""
    n = len(batch)
    if n < 2:
        raise EmptyBatch("contrastive loss needs at least two items")
    d2 = _pairwise_sq(batch.vectors)
    same = batch.labels[:, None] == batch.labels[None, :]
    per_pair = np.where(same, d2, np.maximum(0.0, margin - d2))
    iu = np.triu_indices(n, 1)
    return float(per_pair[iu].mean())


def triplet_batch_loss(batch: EmbeddingBatch, margin: float = 1.0) -> float:
    """Mean hinge over every valid (anchor, positive, negative) triplet."""
    y = batch.labels
    d2 = _pairwise_sq(batch.vectors)
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(len(batch), dtype=bool)
    neg = ~same
    valid = pos[:, :, None] & neg[:, None, :]
    count = int(np.count_nonzero(valid))
    if count == 0:
        raise NoPositives("batch has no valid triplet")
    hinge = np.maximum(0.0, d2[:, :, None] - d2[:, None, :] + margin)
    return float(hinge[valid].sum() / count)


# --- NNGK ------------------------------------------------------------------

def gaussian_kernel(x, c, phi: float) -> float:
    if not phi > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {phi}")
    return float(np.exp(-squared_distance(x, c) / (2.0 * phi * phi)))


@dataclass(frozen=True, eq=False)
class CenterSet:
    centers: np.ndarray  # (K, D)
    labels: np.ndarray  # (K,)
    weights: np.ndarray  # (K,), non-negative
    phi: float
    num_classes: int | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if c.shape[0] == 0 or c.shape[0] != y.size or y.size != w.size:
            raise InsufficientCenters("centers, labels and weights must be non-empty and aligned")
        if (w < 0).any():
            raise ForgeError("center weights must be non-negative")
        if not self.phi > 0:
            raise NonPositiveBandwidth(f"bandwidth must be positive, got {self.phi}")
        k = int(y.max()) + 1 if self.num_classes is None else int(self.num_classes)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "num_classes", k)

    def __len__(self):
        return self.labels.size

    def with_weights(self, weights) -> "CenterSet":
        return CenterSet(self.centers, self.labels, weights, self.phi, self.num_classes)


def _neighbor_indices(d2, k, exclude):
    order = np.argsort(d2, kind="stable")  # distance ties -> lower center index
    if exclude is not None:
        order = order[order != exclude]
    if k is None:
        return order
    if k < 1 or k > order.size:
        raise InsufficientCenters(f"k={k} but only {order.size} centers are available")
    return order[:k]


def nngk_probabilities(x, centers: CenterSet, k: int | None = None,
                       exclude_own_center: bool = False, own_center: int | None = None) -> np.ndarray:
    """Class membership probabilities from weighted kernels of the ``k`` nearest centers.

    ``k=None`` uses every center. With ``exclude_own_center`` the center with
    index ``own_center`` is skipped; if no index is given, the nearest center
    coinciding with ``x`` is taken as its own.
    """
    x = _vec(x)
    _check_same_dim(x, centers.centers)
    diff = centers.centers - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    exclude = None
    if exclude_own_center:
        if own_center is None:
            hits = np.flatnonzero(d2 == 0.0)
            if hits.size == 0:
                raise InsufficientCenters("no center coincides with x to exclude")
            own_center = int(hits[0])
        exclude = own_center
    idx = _neighbor_indices(d2, k, exclude)
    # shift by the smallest distance: same ratio, no underflow
    scaled = -(d2[idx] - d2[idx].min()) / (2.0 * centers.phi ** 2)
    terms = centers.weights[idx] * np.exp(scaled)
    total = terms.sum()
    if not total > 0:
        raise DegenerateDenominator("all neighbour weights are zero")
    probs = np.bincount(centers.labels[idx], weights=terms, minlength=centers.num_classes)
    return probs / total


def nngk_class_prob(x, centers: CenterSet, q: int) -> float:
    return float(nngk_probabilities(x, centers)[q])


def nngk_neighbor_prob(x, centers: CenterSet, k: int, r: int, exclude_own_center: bool = False,
                       own_center: int | None = None) -> float:
    return float(nngk_probabilities(x, centers, k, exclude_own_center, own_center)[r])


def nngk_loss(prob_correct: float, strict: bool = False) -> float:
    """-ln(p), with p floored at 1e-12 unless ``strict``."""
    p = float(prob_correct)
    if not 0.0 <= p <= 1.0:
        raise ForgeError(f"probability outside [0, 1]: {p}")
    if p < PROB_FLOOR:
        if strict:
            raise ZeroProbability("probability of the correct class is zero")
        p = PROB_FLOOR
    return float(-np.log(p)) if p < 1.0 else 0.0


def nngk_batch_loss(batch: EmbeddingBatch, phi: float, k: int | None = None, weights=None) -> float:
    """Mean NNGK loss using the batch itself as centers, each item excluding its own."""
    if not phi > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {phi}")
    n = len(batch)
    if n < 2:
        raise EmptyBatch("NNGK batch loss needs at least two items")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    d2 = _pairwise_sq(batch.vectors)
    np.fill_diagonal(d2, np.inf)
    if k is not None:
        if not 1 <= k <= n - 1:
            raise InsufficientCenters(f"k={k} but only {n - 1} centers are available")
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        keep = np.zeros_like(d2, dtype=bool)
        np.put_along_axis(keep, order, True, axis=1)
        d2 = np.where(keep, d2, np.inf)
    logits = -d2 / (2.0 * phi * phi)
    with np.errstate(divide="ignore"):
        logw = np.log(w)[None, :]
    same = batch.labels[:, None] == batch.labels[None, :]
    log_all = logsumexp(logits + logw, axis=1)
    log_pos = logsumexp(np.where(same, logits + logw, -np.inf), axis=1)
    if not np.isfinite(log_all).all():
        raise DegenerateDenominator("an item has no weighted neighbour")
    log_p = np.maximum(log_pos - log_all, np.log(PROB_FLOOR))
    return float(-log_p.mean())


# --- ProxyAnchor -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProxySet:
    proxies: np.ndarray  # (C, D), one row per class
    labels: np.ndarray  # (C,)
    alpha: float = 32.0
    margin: float = 0.1

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.proxies, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if p.shape[0] != y.size:
            raise DimensionMismatch("one label per proxy required")
        if np.unique(y).size != y.size:
            raise ForgeError("exactly one proxy per class")
        object.__setattr__(self, "proxies", p)
        object.__setattr__(self, "labels", y)


def proxy_anchor_loss(batch: EmbeddingBatch, proxies: ProxySet, normalize: bool = True) -> float:
    """Proxy-anchored soft hinge with cosine similarity.

    The positive term averages over proxies that have at least one positive
    in the batch; the negative term is divided by the number of all proxies.
    """
    if len(batch) == 0:
        raise EmptyBatch("empty batch")
    _check_same_dim(batch.vectors, proxies.proxies)
    missing = np.setdiff1d(batch.classes, proxies.labels)
    if missing.size:
        raise MissingProxy(f"no proxy for classes {missing.tolist()}")
    x, p = batch.vectors, proxies.proxies
    if normalize:
        x, p = l2_normalize(x), l2_normalize(p)
    sim = p @ x.T  # (C, N)
    positive = proxies.labels[:, None] == batch.labels[None, :]
    a, m = proxies.alpha, proxies.margin

    def soft_term(z, mask):
        # log(1 + sum_{mask} e^z) per proxy, stable
        lse = logsumexp(np.where(mask, z, -np.inf), axis=1)
        return np.logaddexp(0.0, lse)

    has_pos = positive.any(axis=1)
    pos_term = soft_term(-a * (sim - m), positive)[has_pos].sum() / has_pos.sum()
    neg_term = soft_term(a * (sim + m), ~positive).sum() / len(proxies.labels)
    return float(pos_term + neg_term)


# --- SoftTriple --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SoftTripleParams:
    weights: np.ndarray  # (C, K, D): K center vectors per class
    gamma: float = 0.1
    lam: float = 10.0
    margin: float = 0.01
    normalize: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 2:
            w = w[:, None, :]
        if w.ndim != 3:
            raise DimensionMismatch("weights must have shape (classes, K, D)")
        if not (self.gamma > 0 and self.lam > 0):
            raise ForgeError("gamma and lam must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def centers_per_class(self) -> int:
        return self.weights.shape[1]


def _softtriple_all(x, params: SoftTripleParams) -> np.ndarray:
    """Smoothed similarity of ``x`` to every class."""
    w = params.weights
    if params.normalize:
        x, w = l2_normalize(x), l2_normalize(w)
    inner = w @ x  # (C, K)
    logits = inner / params.gamma
    soft = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    return (soft * inner).sum(axis=1)


def softtriple_similarity(x, params: SoftTripleParams, q: int) -> float:
    x = _vec(x)
    _check_same_dim(x, params.weights)
    if not 0 <= q < params.num_classes:
        raise UnknownClass(f"class {q} has no SoftTriple centers")
    return float(_softtriple_all(x, params)[q])


def softtriple_loss(x, y: int, params: SoftTripleParams) -> float:
    x = _vec(x)
    _check_same_dim(x, params.weights)
    if not 0 <= y < params.num_classes:
        raise UnknownClass(f"class {y} has no SoftTriple centers")
    logits = params.lam * _softtriple_all(x, params)
    logits[y] -= params.lam * params.margin
    return float(logsumexp(logits) - logits[y])


def softtriple_batch_loss(batch: EmbeddingBatch, params: SoftTripleParams) -> float:
    """Mean :func:`softtriple_loss` over the batch, vectorised."""
    _check_same_dim(batch.vectors, params.weights)
    y = batch.labels
    if y.min() < 0 or y.max() >= params.num_classes:
        raise UnknownClass("batch contains a class without SoftTriple centers")
    x, w = batch.vectors, params.weights
    if params.normalize:
        x, w = l2_normalize(x), l2_normalize(w)
    inner = np.einsum("ckd,nd->nck", w, x)
    logits = inner / params.gamma
    soft = np.exp(logits - logits.max(axis=2, keepdims=True))
    soft /= soft.sum(axis=2, keepdims=True)
    scores = params.lam * (soft * inner).sum(axis=2)  # (N, C)
    rows = np.arange(y.size)
    scores[rows, y] -= params.lam * params.margin
    return float((logsumexp(scores, axis=1) - scores[rows, y]).mean())


# --- SupCon ------------------------------------------------------------------

@dataclass(frozen=True)
class SupConParams:
    temperature: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ForgeError("temperature must be positive")


def supcon_loss(batch: EmbeddingBatch, params: SupConParams = SupConParams(),
                normalize: bool = True) -> float:
    """Supervised contrastive loss summed over anchors.

    Positives of anchor ``i`` are the other items of its class; the
    denominator runs over every item except ``i``. Anchors without a positive
    are skipped.
    """
    n = len(batch)
    if n == 0:
        raise EmptyBatch("empty batch")
    x = l2_normalize(batch.vectors) if normalize else batch.vectors
    logits = (x @ x.T) / params.temperature
    eye = np.eye(n, dtype=bool)
    logits = np.where(eye, -np.inf, logits)
    log_den = logsumexp(logits, axis=1)
    pos = (batch.labels[:, None] == batch.labels[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.any():
        raise NoPositives("no anchor in the batch has a positive")
    log_ratio = np.where(pos, logits - log_den[:, None], 0.0)
    per_anchor = -log_ratio.sum(axis=1)[anchors] / n_pos[anchors]
    return float(per_anchor.sum())


# --- finite differences -----------------------------------------------------

def fd_gradient_flat(f, theta: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if not h > 0:
        raise ForgeError("finite-difference step must be positive")
    theta = np.array(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        up = f(theta)
        theta[i] = orig - h
        down = f(theta)
        theta[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteValue(f"non-finite value probing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad


def finite_diff_gradient(f, points, h: float = 1e-4) -> list:
    """Gradient of ``f(list_of_points)`` with respect to every coordinate of every point."""
    points = [_vec(p) for p in points]
    sizes = [p.size for p in points]
    splits = np.cumsum(sizes)[:-1]

    def flat_f(theta):
        return f(np.split(theta, splits))

    base = flat_f(np.concatenate(points))
    if not np.isfinite(base):
        raise NonFiniteValue("f is not finite at the probe point")
    grad = fd_gradient_flat(flat_f, np.concatenate(points), h)
    return np.split(grad, splits)
