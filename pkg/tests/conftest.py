import hypothesis
import numpy as np
import pytest

from ensemble_forge.pool import PredictionTable

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary is printed at the end of the run."""

    def record(name, passed, detail=""):
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def f1():
    """Three classifiers, eight samples, three classes."""
    truth = [0, 1, 2, 0, 1, 2, 0, 1]
    preds = [
        [0, 1, 2, 0, 1, 0, 0, 2],
        [0, 1, 1, 0, 2, 2, 1, 1],
        [1, 1, 2, 2, 1, 2, 0, 0],
    ]
    return PredictionTable(["c1", "c2", "c3"], truth, preds, 3)


def random_table(rng, m, n, k, name_prefix="c"):
    truth = rng.integers(0, k, size=n)
    acc = rng.uniform(0.3, 0.95, size=m)
    hit = rng.random((m, n)) < acc[:, None]
    wrong = (truth + rng.integers(1, max(k, 2), size=(m, n))) % k if k > 1 else truth
    preds = np.where(hit, truth, wrong)
    return PredictionTable([f"{name_prefix}{i}" for i in range(m)], truth, preds, k)
