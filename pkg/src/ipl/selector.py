"""Greedy maximization of set functions under a cardinality budget.

The greedy loop is written against a small oracle interface so the same code
drives both the classification objective (see scorer.ObjectiveOracle) and
reference set functions used for verification: a modular (additive) function
and a facility-location coverage function, both monotone submodular, for
which greedy carries the classic (1 - 1/e) guarantee against the exact
optimum computed by brute force.

Candidate gains within one step may be evaluated by a thread pool; gains are
gathered into a list indexed by candidate position and the argmax runs
sequentially, so parallelism never changes the selected token. Ties are broken
by lexicographically smallest word.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SizeError, StateError
from .vocab import CandidatePool

# Relative float-noise floor: gain differences below this (scaled) threshold
# are treated as exact equality when probing for diminishing-returns
# violations, so genuinely modular/submodular oracles report epsilon 0.
_NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class GainParts:
    """Marginal gain of one candidate, split into its two objective terms."""

    gain: float
    delta_utility: float
    delta_redundancy: float


@dataclass(frozen=True)
class SelectionStep:
    word: str
    token_id: str
    gain: float
    delta_utility: float
    delta_redundancy: float
    pool_size_before: int


@dataclass(frozen=True)
class SelectedSet:
    steps: tuple[SelectionStep, ...] = ()

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(step.word for step in self.steps)

    @property
    def token_ids(self) -> tuple[str, ...]:
        return tuple(step.token_id for step in self.steps)

    def __len__(self) -> int:
        return len(self.steps)


class SetFunction:
    """Deterministic set function over tuples of item names.

    Subclasses implement ``value``. ``step_gains`` has a generic
    two-evaluation implementation; oracles with a cheaper or decomposed
    marginal (utility vs redundancy) override it.
    """

    def value(self, subset: tuple[str, ...]) -> float:
        raise NotImplementedError

    def token_id(self, item: str) -> str:
        return item

    def step_gains(self, selected: tuple[str, ...], items: Sequence[str], workers: int = 1) -> list[GainParts]:
        base = self.value(selected)

        def one(item: str) -> GainParts:
            delta = self.value(selected + (item,)) - base
            return GainParts(gain=delta, delta_utility=delta, delta_redundancy=0.0)

        return _map_candidates(one, items, workers)


def _map_candidates(fn: Callable[[str], GainParts], items: Sequence[str], workers: int) -> list[GainParts]:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


class ModularOracle(SetFunction):
    """f(S) = sum of per-item weights; submodular with equality in Eq-style checks."""

    def __init__(self, weights: dict[str, float]):
        self.weights = dict(weights)

    def value(self, subset: tuple[str, ...]) -> float:
        return float(sum(self.weights[item] for item in sorted(subset)))


class FacilityLocationOracle(SetFunction):
    """f(S) = sum over targets of the best coverage any selected item provides.

    ``coverage`` is a (targets x items) nonnegative matrix; monotone submodular.
    """

    def __init__(self, items: Sequence[str], coverage: np.ndarray):
        coverage = np.asarray(coverage, dtype=np.float64)
        if coverage.ndim != 2 or coverage.shape[1] != len(items):
            raise ConfigError("coverage must be a (targets x items) matrix")
        if coverage.size and coverage.min() < 0:
            raise ConfigError("coverage entries must be nonnegative")
        self.items = list(items)
        self.columns = {item: coverage[:, i] for i, item in enumerate(items)}
        self.n_targets = coverage.shape[0]

    def value(self, subset: tuple[str, ...]) -> float:
        if not subset:
            return 0.0
        best = np.zeros(self.n_targets)
        for item in sorted(subset):
            best = np.maximum(best, self.columns[item])
        return float(best.sum())


def _pool_words(pool) -> list[str]:
    if isinstance(pool, CandidatePool):
        return pool.words()
    return list(pool)


def greedy_step(pool, selected: Sequence[str], oracle: SetFunction, workers: int = 1) -> SelectionStep:
    """Pick the candidate with maximal marginal gain; ties go to the smallest word.

    The chosen element is only reported; removing it from the pool is the
    caller's responsibility.
    """
    items = _pool_words(pool)
    if not items:
        raise StateError("greedy step on an empty pool")
    parts = oracle.step_gains(tuple(selected), items, workers=workers)
    best = min(range(len(items)), key=lambda i: (-parts[i].gain, items[i]))
    return SelectionStep(
        word=items[best],
        token_id=oracle.token_id(items[best]),
        gain=parts[best].gain,
        delta_utility=parts[best].delta_utility,
        delta_redundancy=parts[best].delta_redundancy,
        pool_size_before=len(items),
    )


def greedy_select(
    pool,
    k: int,
    oracle: SetFunction,
    workers: int = 1,
    hook: Callable[[int, SelectionStep], None] | None = None,
    lazy: bool = False,
) -> SelectedSet:
    """Run k greedy steps, removing each chosen word from the working pool.

    ``hook(step_index, step)`` fires after each step; the scheduler uses it to
    interleave continuous optimization epochs with the discrete selections.

    ``lazy=True`` enables the stale-bound shortcut: cached gains from earlier
    steps serve as upper bounds, and only the current front-runner is
    re-evaluated until its fresh gain stays on top. That is exact for
    submodular objectives but a heuristic for this package's classification
    objective, which is only approximately submodular; the default path
    re-scores every candidate each step.
    """
    items = _pool_words(pool)
    if k < 0:
        raise ConfigError("k must be >= 0")
    if k > len(items):
        raise ConfigError(f"budget k={k} exceeds pool size {len(items)}")
    if lazy:
        return _lazy_select(items, k, oracle, hook)
    steps: list[SelectionStep] = []
    selected: list[str] = []
    for q in range(k):
        step = greedy_step(items, selected, oracle, workers=workers)
        items.remove(step.word)
        selected.append(step.word)
        steps.append(step)
        if hook is not None:
            hook(q, step)
    return SelectedSet(steps=tuple(steps))


def _lazy_select(items: list[str], k: int, oracle: SetFunction, hook) -> SelectedSet:
    import heapq

    selected: list[str] = []
    steps: list[SelectionStep] = []
    # Heap entries (-gain, word, evaluated_at, parts): an entry evaluated in
    # the current step is fresh and may be accepted; stale entries are
    # re-scored and pushed back, so ties still resolve by word order.
    parts = oracle.step_gains((), items)
    heap = [(-p.gain, w, 0, p) for w, p in zip(items, parts)]
    heapq.heapify(heap)
    for q in range(k):
        pool_size = len(heap)
        while True:
            neg_gain, word, evaluated_at, part = heapq.heappop(heap)
            if evaluated_at == q:
                step = SelectionStep(
                    word=word,
                    token_id=oracle.token_id(word),
                    gain=part.gain,
                    delta_utility=part.delta_utility,
                    delta_redundancy=part.delta_redundancy,
                    pool_size_before=pool_size,
                )
                break
            fresh = oracle.step_gains(tuple(selected), [word])[0]
            heapq.heappush(heap, (-fresh.gain, word, q, fresh))
        selected.append(step.word)
        steps.append(step)
        if hook is not None:
            hook(q, step)
    return SelectedSet(steps=tuple(steps))


def brute_force_best(pool, k: int, oracle: SetFunction) -> tuple[tuple[str, ...], float]:
    """Exact maximizer of the oracle over all subsets of size <= k.

    Subsets are enumerated by size and then lexicographically; the first
    maximum encountered wins, which pins the tie-break. Guarded against
    combinatorial blow-up.
    """
    items = sorted(_pool_words(pool))
    if k < 0 or k > len(items):
        raise ConfigError(f"k={k} outside 0..{len(items)}")
    if comb(len(items), k) > 10**6:
        raise SizeError(f"C({len(items)}, {k}) exceeds the 10^6 enumeration guard")
    best_subset: tuple[str, ...] = ()
    best_value = oracle.value(())
    for size in range(1, k + 1):
        for subset in itertools.combinations(items, size):
            v = oracle.value(subset)
            if v > best_value:
                best_value = v
                best_subset = subset
    return best_subset, float(best_value)


def marginal_curve(trace: SelectedSet) -> tuple[list[float], float | None]:
    """Per-step gain sequence and the least-squares slope of gain vs step index.

    The slope is None for a single-step trace (undefined fit).
    """
    if not trace.steps:
        raise StateError("marginal_curve on an empty selection trace")
    gains = [step.gain for step in trace.steps]
    if len(gains) < 2:
        return gains, None
    x = np.arange(1, len(gains) + 1, dtype=np.float64)
    y = np.asarray(gains)
    slope = float(((x - x.mean()) * (y - y.mean())).sum() / ((x - x.mean()) ** 2).sum())
    return gains, slope


def epsilon_estimate(oracle: SetFunction, pool, samples: int, seed: int) -> float:
    """Sampled lower-bound witness for the submodularity violation of an oracle.

    Draws random chains A subset-of B subset-of pool with v outside B and
    measures how badly the diminishing-returns inequality
    f(A + v) - f(A) >= f(B + v) - f(B) fails, relative to the larger of the
    two marginals. Returns the worst relative violation seen, 0.0 if none.
    Differences below the float-noise floor do not count as violations.
    """
    items = _pool_words(pool)
    if len(items) < 3:
        raise ConfigError("epsilon_estimate needs a pool of size >= 3")
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = len(items)
    for _ in range(samples):
        order = rng.permutation(n)
        b_size = int(rng.integers(0, n))  # leaves at least one item for v
        a_size = int(rng.integers(0, b_size + 1))
        b = tuple(sorted(items[i] for i in order[:b_size]))
        a = tuple(sorted(items[i] for i in order[:a_size]))
        v = items[order[b_size]]
        gain_a = oracle.value(tuple(sorted(a + (v,)))) - oracle.value(a)
        gain_b = oracle.value(tuple(sorted(b + (v,)))) - oracle.value(b)
        violation = gain_b - gain_a
        if violation > _NOISE_FLOOR * max(1.0, abs(gain_a), abs(gain_b)):
            rel = violation / max(abs(gain_a), abs(gain_b), _NOISE_FLOOR)
            worst = max(worst, rel)
    return worst
