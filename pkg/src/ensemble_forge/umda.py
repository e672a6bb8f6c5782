"""Univariate Marginal Distribution Algorithm over bit-strings.

Each generation samples ``lam`` individuals from independent Bernoulli
marginals, evaluates them, keeps the ``mu`` fittest and resets every marginal
to the frequency of ones among those survivors. Fitness is maximised.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EmptySelection, FitnessEvaluationError, ForgeError, LengthMismatch
from .fusion import ensemble_accuracy
from .pool import PredictionTable

Fitness = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class UmdaConfig:
    n: int
    lam: int = 40
    mu: int = 10
    generations: int = 100
    seed: int = 0
    clamp: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ForgeError("n must be >= 1")
        if not 1 <= self.mu <= self.lam:
            raise ForgeError(f"need 1 <= mu <= lam, got mu={self.mu}, lam={self.lam}")
        if self.generations < 1:
            raise ForgeError("generations must be >= 1")


@dataclass
class ProbabilityVector:
    p: np.ndarray
    generation: int = 0

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityVector":
        return cls(np.full(n, 0.5))


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float  # best so far
    mean_fitness: float  # of this generation's population
    generation_best: float
    probabilities: np.ndarray  # model after this generation's update
    best_mask: np.ndarray  # best so far

    def as_dict(self) -> dict:
        return {
            "generation": self.generation,
            "best_fitness": self.best_fitness,
            "mean_fitness": self.mean_fitness,
            "generation_best": self.generation_best,
            "probabilities": [float(v) for v in self.probabilities],
            "best_mask": [int(v) for v in self.best_mask],
        }


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    best_mask: np.ndarray | None = None
    best_fitness: float = float("-inf")
    evaluations: int = 0

    def as_dict(self) -> dict:
        return {
            "best_mask": None if self.best_mask is None else [int(v) for v in self.best_mask],
            "best_fitness": self.best_fitness,
            "evaluations": self.evaluations,
            "generations": [r.as_dict() for r in self.records],
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_population(pv: ProbabilityVector, lam: int, rng: np.random.Generator) -> np.ndarray:
    """``lam`` x ``n`` array of 0/1 draws, filled individual-major."""
    u = rng.random((lam, pv.p.size))
    return (u < pv.p).astype(np.int8)


def select_top(population, fitnesses, mu: int) -> np.ndarray:
    population = np.asarray(population)
    fitnesses = np.asarray(fitnesses, dtype=float)
    if len(population) != len(fitnesses):
        raise LengthMismatch(f"{len(population)} individuals but {len(fitnesses)} fitness values")
    if not 1 <= mu <= len(population):
        raise LengthMismatch(f"cannot select {mu} of {len(population)} individuals")
    # stable sort on negated fitness: equal scores keep sampling order
    order = np.argsort(-fitnesses, kind="stable")[:mu]
    return population[order]


def update_model(selected, n: int, clamp: bool = True, generation: int = 0) -> ProbabilityVector:
    selected = np.asarray(selected)
    if selected.size == 0 or len(selected) == 0:
        raise EmptySelection("cannot update the model from an empty selection")
    if selected.ndim != 2 or selected.shape[1] != n:
        raise LengthMismatch(f"selected individuals must have length {n}")
    p = np.count_nonzero(selected, axis=0) / len(selected)
    if clamp:
        p = np.clip(p, 1.0 / n, 1.0 - 1.0 / n)
    return ProbabilityVector(p, generation)


def run(config: UmdaConfig, fitness: Fitness, cache: bool = True) -> RunTrace:
    """Optimise ``fitness`` and return the full trace.

    Best-so-far tracking is elitist but the model only learns from the current
    generation. ``fitness`` must be pure; with ``cache`` on, repeated masks
    are looked up instead of re-evaluated.
    """
    rng = make_rng(config.seed)
    pv = ProbabilityVector.uniform(config.n)
    trace = RunTrace()
    memo = {}

    def evaluate(ind):
        key = ind.tobytes()
        if cache and key in memo:
            return memo[key]
        value = float(fitness(ind))
        trace.evaluations += 1
        if cache:
            memo[key] = value
        return value

    for gen in range(config.generations):
        pop = sample_population(pv, config.lam, rng)
        try:
            fits = np.array([evaluate(ind) for ind in pop])
        except Exception as exc:
            raise FitnessEvaluationError(f"fitness failed in generation {gen}: {exc}", trace) from exc
        top = int(np.argmax(fits))  # first maximum = earliest sampled
        if fits[top] > trace.best_fitness:
            trace.best_fitness = float(fits[top])
            trace.best_mask = pop[top].copy()
        pv = update_model(select_top(pop, fits, config.mu), config.n, config.clamp, gen + 1)
        trace.records.append(
            GenerationRecord(
                generation=gen,
                best_fitness=trace.best_fitness,
                mean_fitness=float(fits.mean()),
                generation_best=float(fits[top]),
                probabilities=pv.p.copy(),
                best_mask=trace.best_mask.copy(),
            )
        )
    return trace


def ensemble_fitness(validation: PredictionTable) -> Fitness:
    """Validation majority-vote accuracy of a mask; the empty ensemble scores 0."""

    def fitness(mask) -> float:
        if not np.any(mask):
            return 0.0
        return ensemble_accuracy(validation, mask)

    return fitness


def exhaustive_best(n: int, fitness: Fitness):
    """Brute-force optimum over all 2**n masks (for small n)."""
    best_mask, best = None, float("-inf")
    for code in range(2**n):
        mask = np.array([(code >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.int8)
        value = fitness(mask)
        if value > best:
            best, best_mask = value, mask
    return best_mask, best
