"""Acceptance gate: one test per primary criterion, each printing PASS/FAIL."""
import itertools
import time

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.stats import chisquare

from conftest import random_table
from loss_cases import DERIVED, TRIVIAL
from ensemble_forge import lab
from ensemble_forge.cli import cli
from ensemble_forge.diversity import diversity_matrix
from ensemble_forge.experiment import evaluate_fold, relative_gain
from ensemble_forge.losses import contrastive_loss, finite_diff_gradient, triplet_loss
from ensemble_forge.synthetic import correlated_family_pool
from ensemble_forge.umda import ProbabilityVector, UmdaConfig, ensemble_fitness, make_rng, run, sample_population


def brute_pair(table, i, j):
    """Per-pair recomputation straight from the prediction rows."""
    hi = table.predictions[i] == table.truth
    hj = table.predictions[j] == table.truth
    n = table.num_samples
    a = sum(1 for s in range(n) if hi[s] and hj[s]) / n
    b = sum(1 for s in range(n) if hj[s] and not hi[s]) / n
    c = sum(1 for s in range(n) if hi[s] and not hj[s]) / n
    d = sum(1 for s in range(n) if not hi[s] and not hj[s]) / n
    den = ((a + b) * (c + d) * (a + c) * (b + d)) ** 0.5
    return (0.0 if den == 0 else (a * d - b * c) / den), (a, b, c, d)


def test_diversity_oracle(criterion):
    rng = np.random.default_rng(2024)
    start, worst, ok = time.perf_counter(), 0.0, True
    for _ in range(50):
        m, n, k = rng.integers(2, 11), rng.integers(1, 201), rng.integers(2, 9)
        table = random_table(rng, m, n, k)
        scores = diversity_matrix(table).scores
        for i, j in itertools.combinations(range(m), 2):
            rho, counts = brute_pair(table, i, j)
            worst = max(worst, abs(scores[i, j] - rho), abs(scores[j, i] - rho))
            ok &= abs(sum(counts) - 1) <= 1e-12 and abs(scores[i, j]) <= 1.0
    elapsed = time.perf_counter() - start
    passed = criterion("diversity oracle", ok and worst <= 1e-12 and elapsed < 5,
                       f"max |diff|={worst:.2e}, {elapsed:.2f}s")
    assert passed


def test_umda_optimality(criterion):
    start, hits = time.perf_counter(), 0
    for seed in range(20):
        fit = ensemble_fitness(random_table(np.random.default_rng(seed), 10, 60, 4))
        optimum = max(fit(np.array(b)) for b in itertools.product((0, 1), repeat=10))
        hits += run(UmdaConfig(n=10, lam=40, mu=10, generations=100, seed=seed), fit).best_fitness == optimum
    elapsed = time.perf_counter() - start
    assert criterion("UMDA optimality", hits >= 19 and elapsed < 30, f"{hits}/20 optimal, {elapsed:.2f}s")


def test_umda_sampling_law(criterion):
    p = np.array([0.2, 0.55, 0.9])
    draws = 10_000
    pop = sample_population(ProbabilityVector(p), draws, make_rng(42))
    cells = list(itertools.product((0, 1), repeat=3))
    observed = [int(np.sum(np.all(pop == x, axis=1))) for x in cells]
    expected = [draws * np.prod([pi if xi else 1 - pi for pi, xi in zip(p, x)]) for x in cells]
    pvalue = chisquare(observed, expected).pvalue
    assert criterion("UMDA sampling law", pvalue > 0.01, f"chi-square p={pvalue:.3f}")


def test_family_pool_pattern(criterion):
    pool = correlated_family_pool(1500, 30, seed=0)
    wins, sizes = 0, []
    for fold, split in enumerate(lab.fold_splits(pool.truth, 5, seed=0)):
        rec = evaluate_fold(fold, pool.subset(split["validation"]), pool.subset(split["test"]), seed=0)
        wins += rec.umda_test_accuracy >= rec.mv_test_accuracy
        sizes.append(rec.umda_mask_size)
    passed = wins >= 4 and max(sizes) < 24
    assert criterion("family pool UMDA >= MV", passed, f"{wins}/5 folds, mask sizes {sizes}")


def test_relative_gain_formula(criterion):
    cases = [(93.77, 87.37, 7.32), (84.92, 77.70, 9.29), (96.73, 91.60, 5.60)]
    got = [relative_gain(new, old) for new, old, _ in cases]
    passed = all(abs(g - want) <= 0.05 for g, (_, _, want) in zip(got, cases))
    assert criterion("relative gain", passed, ", ".join(f"{g:.3f}" for g in got))


def test_loss_kernel_exactness(criterion):
    bad = [n for n, f in DERIVED.items() if abs(f()[0] - f()[1]) > 1e-6]
    bad += [n for n, f in TRIVIAL.items() if abs(f()[0] - f()[1]) > 1e-12]
    total = len(DERIVED) + len(TRIVIAL)
    assert criterion("loss-kernel exactness", not bad, f"{total - len(bad)}/{total} cases" + (f" failing {bad}" if bad else ""))


def contrastive_grad(xp, xn, same, m):
    diff = xp - xn
    if same:
        g = 2 * diff
    elif m - diff @ diff > 0:
        g = -2 * diff
    else:
        g = np.zeros_like(diff)
    return [g, -g]


def triplet_grad(a, p, n, m):
    if (a - p) @ (a - p) - (a - n) @ (a - n) + m <= 0:
        return [np.zeros_like(a)] * 3
    return [2 * (n - p), -2 * (a - p), 2 * (a - n)]


def test_gradient_sanity(criterion):
    rng = np.random.default_rng(7)
    worst, done = 0.0, 0
    while done < 20:
        a, p, n = rng.normal(size=(3, 3))
        m = 2.0
        if abs((a - p) @ (a - p) - (a - n) @ (a - n) + m) < 1e-2 or abs(m - (a - p) @ (a - p)) < 1e-2:
            continue  # too close to a hinge kink for central differences
        same = bool(done % 2)
        pairs = [
            (finite_diff_gradient(lambda x: contrastive_loss(x[0], x[1], same, m), [a, p], 1e-4),
             contrastive_grad(a, p, same, m)),
            (finite_diff_gradient(lambda x: triplet_loss(x[0], x[1], x[2], m), [a, p, n], 1e-4),
             triplet_grad(a, p, n, m)),
        ]
        for fd, exact in pairs:
            fd, exact = np.concatenate(fd), np.concatenate(exact)
            err = np.linalg.norm(fd - exact) / max(np.linalg.norm(exact), 1.0)
            worst = max(worst, err)
        done += 1
    assert criterion("finite-difference gradients", worst <= 1e-4, f"max rel err={worst:.2e} over 20 points")


@pytest.mark.parametrize("loss", lab.LOSSES)
def test_metric_learning_behavior(criterion, loss):
    means = lab.ring_means(3, 2, separation=10.0)
    train = lab.generate_blobs(lab.BlobSpec(means, 1.0, 40, seed=0))
    held = lab.generate_blobs(lab.BlobSpec(means, 1.0, 40, seed=1))
    start = time.perf_counter()
    result = lab.train_embeddings(train, lab.TrainConfig(loss=loss, steps=200, seed=0))
    intra, inter = lab.class_distances(result.embeddings)
    head = lab.fit_nngk(result.embeddings, 30, phi=1.0, k=5, seed=0)
    acc = lab.nngk_accuracy(head, 5, result.transform(held))
    elapsed = time.perf_counter() - start
    passed = intra < inter and acc >= 0.90 and elapsed < 60
    assert criterion(f"metric learning [{loss}]", passed,
                     f"intra={intra:.3f} inter={inter:.3f} acc={acc:.3f} {elapsed:.1f}s")


def test_evaluate_is_byte_deterministic(criterion, tmp_path):
    runner = CliRunner()
    fam = runner.invoke(cli, ["lab", "families", "--out-dir", str(tmp_path / "fam"), "--samples", "600",
                              "--classes", "10", "--seed", "4"])
    assert fam.exit_code == 0
    manifest = fam.output.strip().splitlines()[-1]
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        res = runner.invoke(cli, ["evaluate", "--manifest", manifest, "--seed", "9", "--out", str(path)])
        assert res.exit_code == 0
        outs.append(path.read_bytes())
    assert criterion("evaluate determinism", outs[0] == outs[1], f"{len(outs[0])} bytes")
