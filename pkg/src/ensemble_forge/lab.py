"""Desk-scale metric-learning lab.

Embeddings are free parameters: each training point owns its vector and the
chosen loss moves it by gradient descent, with gradients from central finite
differences. Points outside the training set are embedded by carrying over
the mean displacement of their nearest training inputs, so a model trained
with ``learning_rate=0`` is the identity everywhere.

On top of an embedding space an NNGK head (weighted Gaussian kernels over
class-stratified centers) turns it into a classifier, and :func:`build_pool`
assembles several such classifiers into aligned prediction tables.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .errors import ForgeError, InsufficientData, MalformedFile, NonFiniteLoss
from .losses import CenterSet, EmbeddingBatch
from .pool import PredictionTable

log = logging.getLogger(__name__)

LOSSES = ("contrastive", "triplet", "nngk", "proxy_anchor", "softtriple", "supcon")

# step sizes that train stably on unit-stddev blobs
DEFAULT_LEARNING_RATES = {
    "contrastive": 0.05,
    "triplet": 0.05,
    "nngk": 0.5,
    "proxy_anchor": 0.05,
    "softtriple": 0.5,
    "supcon": 0.05,
}


@dataclass(frozen=True)
class BlobSpec:
    class_means: tuple
    stddev: float
    samples_per_class: int
    seed: int = 0

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.class_means, dtype=float))
        if means.shape[0] < 2:
            raise ForgeError("need at least two classes")
        if self.stddev < 0 or self.samples_per_class < 1:
            raise ForgeError("stddev must be >= 0 and samples_per_class >= 1")
        object.__setattr__(self, "class_means", tuple(map(tuple, means.tolist())))


def ring_means(num_classes: int, dim: int = 2, separation: float = 10.0) -> np.ndarray:
    """Class means on a circle in the first two axes, neighbours ``separation`` apart."""
    if dim < 2:
        raise ForgeError("ring layout needs dim >= 2")
    radius = separation / (2.0 * np.sin(np.pi / num_classes))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + np.pi / 2
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_blobs(spec: BlobSpec) -> EmbeddingBatch:
    """Isotropic Gaussian samples, class-major order."""
    rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.class_means)
    k, d = means.shape
    noise = rng.standard_normal((k, spec.samples_per_class, d)) * spec.stddev
    vectors = (means[:, None, :] + noise).reshape(-1, d)
    labels = np.repeat(np.arange(k), spec.samples_per_class)
    return EmbeddingBatch(vectors, labels)


def class_distances(batch: EmbeddingBatch):
    """(mean intra-class distance, mean inter-class distance) over all pairs."""
    d = np.sqrt(L._pairwise_sq(batch.vectors))
    same = batch.labels[:, None] == batch.labels[None, :]
    off = ~np.eye(len(batch), dtype=bool)
    return float(d[same & off].mean()), float(d[~same].mean())


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "triplet"
    learning_rate: float | None = None  # None -> DEFAULT_LEARNING_RATES[loss]
    steps: int = 200
    batch_size: int = 24
    fd_step: float = 1e-4
    seed: int = 0
    # loss parameters
    margin: float = 1.0  # contrastive / triplet
    phi: float = 1.0  # nngk training bandwidth
    nngk_k: int | None = None
    alpha: float = 32.0  # proxy anchor
    proxy_margin: float = 0.1
    st_centers: int = 2  # softtriple K
    st_gamma: float = 0.1
    st_lambda: float = 10.0
    st_margin: float = 0.01
    temperature: float = 0.1  # supcon
    # NNGK classifier head
    num_centers: int = 30
    head_phi: float = 1.0
    head_k: int | None = 5
    weight_steps: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ForgeError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.steps < 1 or self.batch_size < 2:
            raise ForgeError("steps must be >= 1 and batch_size >= 2")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ForgeError("learning_rate must be non-negative")
        if not self.fd_step > 0:
            raise ForgeError("fd_step must be positive")

    @property
    def lr(self) -> float:
        if self.learning_rate is None:
            return DEFAULT_LEARNING_RATES[self.loss]
        return self.learning_rate


@dataclass
class TrainResult:
    inputs: EmbeddingBatch
    embeddings: EmbeddingBatch
    loss_trace: list = field(default_factory=list)
    params: dict = field(default_factory=dict)  # proxies / softtriple weights

    def transform(self, batch: EmbeddingBatch, k: int = 5) -> EmbeddingBatch:
        return batch.with_vectors(extend_embedding(self.inputs.vectors, self.embeddings.vectors,
                                                   batch.vectors, k))


def extend_embedding(train_inputs, train_embeddings, new_inputs, k: int = 5) -> np.ndarray:
    """Embed unseen inputs by averaging the displacement of their ``k`` nearest training inputs."""
    train_inputs = np.asarray(train_inputs, dtype=float)
    shift = np.asarray(train_embeddings, dtype=float) - train_inputs
    new_inputs = np.atleast_2d(np.asarray(new_inputs, dtype=float))
    k = min(k, len(train_inputs))
    d2 = L._pairwise_sq(new_inputs, train_inputs)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return new_inputs + shift[nearest].mean(axis=1)


def _balanced_batch(labels, size, rng):
    classes = np.unique(labels)
    per_class = max(2, size // len(classes))
    picks = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        picks.append(rng.choice(members, size=min(per_class, members.size), replace=False))
    return np.sort(np.concatenate(picks))


def _init_params(config: TrainConfig, num_classes: int, dim: int, rng) -> dict:
    if config.loss == "proxy_anchor":
        return {"proxies": rng.standard_normal((num_classes, dim))}
    if config.loss == "softtriple":
        return {"weights": rng.standard_normal((num_classes, config.st_centers, dim))}
    return {}


def _objective(config: TrainConfig, labels, num_classes: int, dim: int, n_items: int):
    """Build f(theta) where theta packs the batch vectors followed by loss parameters."""
    split = n_items * dim

    def unpack(theta):
        return EmbeddingBatch(theta[:split].reshape(n_items, dim), labels), theta[split:]

    if config.loss == "contrastive":
        return lambda th: L.contrastive_batch_loss(unpack(th)[0], config.margin)
    if config.loss == "triplet":
        return lambda th: L.triplet_batch_loss(unpack(th)[0], config.margin)
    if config.loss == "nngk":
        return lambda th: L.nngk_batch_loss(unpack(th)[0], config.phi, config.nngk_k)
    if config.loss == "supcon":
        params = L.SupConParams(config.temperature)
        return lambda th: L.supcon_loss(unpack(th)[0], params)
    if config.loss == "proxy_anchor":
        def f(th):
            batch, rest = unpack(th)
            proxies = L.ProxySet(rest.reshape(num_classes, dim), np.arange(num_classes),
                                 config.alpha, config.proxy_margin)
            return L.proxy_anchor_loss(batch, proxies)
        return f

    def f(th):
        batch, rest = unpack(th)
        params = L.SoftTripleParams(rest.reshape(num_classes, config.st_centers, dim),
                                    config.st_gamma, config.st_lambda, config.st_margin,
                                    normalize=True)
        return L.softtriple_batch_loss(batch, params)
    return f


def train_embeddings(data: EmbeddingBatch, config: TrainConfig) -> TrainResult:
    """Gradient descent on the chosen loss over class-balanced mini-batches."""
    rng = np.random.default_rng(config.seed)
    num_classes = int(data.labels.max()) + 1
    dim = data.dim
    vectors = data.vectors.copy()
    params = _init_params(config, num_classes, dim, rng)
    param_keys = list(params)
    trace = []
    lr = config.lr
    for step in range(config.steps):
        idx = _balanced_batch(data.labels, config.batch_size, rng)
        f = _objective(config, data.labels[idx], num_classes, dim, idx.size)
        theta = np.concatenate([vectors[idx].ravel()] + [params[k].ravel() for k in param_keys])
        value = f(theta)
        if not np.isfinite(value):
            raise NonFiniteLoss(f"loss became non-finite at step {step}", trace)
        trace.append(float(value))
        if lr == 0.0:
            continue
        try:
            grad = L.fd_gradient_flat(f, theta, config.fd_step)
        except ForgeError as exc:
            raise NonFiniteLoss(f"gradient became non-finite at step {step}: {exc}", trace) from exc
        theta = theta - lr * grad
        if not np.isfinite(theta).all():
            raise NonFiniteLoss(f"parameters diverged at step {step}", trace)
        split = idx.size * dim
        vectors[idx] = theta[:split].reshape(idx.size, dim)
        offset = split
        for k in param_keys:
            size = params[k].size
            params[k] = theta[offset:offset + size].reshape(params[k].shape)
            offset += size
    log.debug("trained %s: loss %.4g -> %.4g", config.loss, trace[0], trace[-1])
    return TrainResult(data, data.with_vectors(vectors), trace, params)


def _stratified_centers(labels, num_centers, rng):
    classes, counts = np.unique(labels, return_counts=True)
    if num_centers < classes.size:
        raise InsufficientData(f"{num_centers} centers cannot cover {classes.size} classes")
    if num_centers > labels.size:
        raise InsufficientData(f"{num_centers} centers requested from {labels.size} points")
    # one per class, the rest by largest remainder of class share
    quota = np.ones(classes.size, dtype=int)
    extra = num_centers - classes.size
    share = (counts - 1) / max(1, (counts - 1).sum()) * extra
    quota += np.floor(share).astype(int)
    left = num_centers - quota.sum()
    for i in np.argsort(-(share - np.floor(share)), kind="stable")[:left]:
        quota[i] += 1
    quota = np.minimum(quota, counts)
    chosen = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        chosen.append(np.sort(rng.choice(members, size=q, replace=False)))
    return np.concatenate(chosen)


def _nngk_log_probs(vectors, labels, centers, own, k, weights):
    """log P(correct class) for every row, excluding each row's own center."""
    d2 = L._pairwise_sq(vectors, centers.centers)
    rows = np.flatnonzero(own >= 0)
    d2[rows, own[rows]] = np.inf
    if k is not None:
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        keep = np.zeros(d2.shape, dtype=bool)
        np.put_along_axis(keep, order, True, axis=1)
        d2 = np.where(keep, d2, np.inf)
    logits = -d2 / (2.0 * centers.phi ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    terms = np.exp(logits) * weights[None, :]
    same = labels[:, None] == centers.labels[None, :]
    num = (terms * same).sum(axis=1)
    den = terms.sum(axis=1)
    return np.log(np.maximum(num / np.maximum(den, 1e-300), L.PROB_FLOOR))


def fit_nngk(train: EmbeddingBatch, num_centers: int, phi: float, k: int | None = None,
             weight_steps: int = 0, seed: int = 0, learning_rate: float = 0.1,
             fd_step: float = 1e-4) -> CenterSet:
    """Pick class-stratified centers from ``train`` and learn non-negative weights.

    Weights start at one; each step is a projected gradient step on the mean
    NNGK loss over the training set (a training point never uses its own
    center as a neighbour).
    """
    rng = np.random.default_rng(seed)
    chosen = _stratified_centers(train.labels, num_centers, rng)
    num_classes = int(train.labels.max()) + 1
    centers = CenterSet(train.vectors[chosen], train.labels[chosen], np.ones(chosen.size), phi,
                        num_classes)
    if weight_steps <= 0:
        return centers
    own = np.full(len(train), -1)
    own[chosen] = np.arange(chosen.size)
    kk = None if k is None else min(k, chosen.size - 1)
    if kk is not None and kk < 1:
        return centers
    w = centers.weights.copy()

    def objective(weights):
        return -_nngk_log_probs(train.vectors, train.labels, centers, own, kk, weights).mean()

    for _ in range(weight_steps):
        w = np.maximum(w - learning_rate * L.fd_gradient_flat(objective, w, fd_step), 0.0)
    if not w.any():
        raise InsufficientData("all center weights collapsed to zero")
    return centers.with_weights(w)


def predict_nngk(centers: CenterSet, k: int | None, batch: EmbeddingBatch) -> np.ndarray:
    """Most probable class per item; probability ties go to the smaller label."""
    kk = None if k is None else min(k, len(centers))
    return np.array([int(np.argmax(L.nngk_probabilities(x, centers, kk))) for x in batch.vectors],
                    dtype=np.int64)


def nngk_accuracy(centers: CenterSet, k: int | None, batch: EmbeddingBatch) -> float:
    return float(np.mean(predict_nngk(centers, k, batch) == batch.labels))


def fold_splits(labels, folds: int = 5, seed: int = 0) -> list:
    """Stratified fold protocol: per fold 1/folds train, 1/folds validation, rest test.

    With five folds that is the 20/20/60 split; each sample is a training
    sample in exactly one fold.
    """
    labels = np.asarray(labels)
    if folds < 3:
        raise ForgeError("need at least three folds for train/validation/test")
    rng = np.random.default_rng(seed)
    chunk_of = np.empty(labels.size, dtype=int)
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        offset = int(rng.integers(folds))
        chunk_of[members] = (np.arange(members.size) + offset) % folds
    out = []
    for f in range(folds):
        out.append({
            "train": np.flatnonzero(chunk_of == f),
            "validation": np.flatnonzero(chunk_of == (f + 1) % folds),
            "test": np.flatnonzero((chunk_of != f) & (chunk_of != (f + 1) % folds)),
        })
    return out


def default_specs(seed: int = 0, **overrides) -> list:
    """One config per loss."""
    return [TrainConfig(loss=name, seed=seed + i, name=name, **overrides) for i, name in enumerate(LOSSES)]


def build_pool(specs, splits: dict, sample_ids: dict | None = None) -> dict:
    """Train one embedding space per spec on ``splits['train']`` and tabulate NNGK predictions.

    Returns ``{split_name: PredictionTable}`` with one classifier row per spec,
    in spec order.
    """
    if not specs:
        raise ForgeError("build_pool needs at least one spec")
    train = splits["train"]
    num_classes = 1 + max(int(b.labels.max()) for b in splits.values())
    names, rows = [], {s: [] for s in splits}
    for i, spec in enumerate(specs):
        result = train_embeddings(train, spec)
        n_centers = min(spec.num_centers, len(train))
        head = fit_nngk(result.embeddings, n_centers, spec.head_phi, spec.head_k,
                        spec.weight_steps, seed=spec.seed)
        for split, batch in splits.items():
            emb = result.embeddings if split == "train" else result.transform(batch)
            rows[split].append(predict_nngk(head, spec.head_k, emb))
        base = spec.name or f"{spec.loss}"
        name, dup = base, 1
        while name in names:
            dup += 1
            name = f"{base}_{dup}"
        names.append(name)
    ids = sample_ids or {}
    return {
        split: PredictionTable(names, batch.labels, np.vstack(rows[split]), num_classes,
                               ids.get(split))
        for split, batch in splits.items()
    }


def format_embeddings(batch: EmbeddingBatch) -> str:
    """CSV with header ``label,x0,...,x{D-1}``; floats written with repr precision."""
    lines = ["label," + ",".join(f"x{i}" for i in range(batch.dim))]
    for y, v in zip(batch.labels.tolist(), batch.vectors.tolist()):
        lines.append(f"{y}," + ",".join(repr(float(x)) for x in v))
    return "\n".join(lines) + "\n"


def save_embeddings(batch: EmbeddingBatch, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_embeddings(batch))


def load_embeddings(path) -> EmbeddingBatch:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "label" or len(header) < 2:
            raise MalformedFile(f"{path}: header must be 'label,x0,...'")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    try:
        labels = [int(r[0]) for r in rows]
        vectors = [[float(x) for x in r[1:]] for r in rows]
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
    if any(len(v) != len(header) - 1 for v in vectors):
        raise MalformedFile(f"{path}: ragged rows")
    return EmbeddingBatch(np.array(vectors), labels)
