"""Query-selection strategies: entropy extremes plus the three baselines.

The headline strategy picks, per round, one batch with the highest
prediction entropy (likely excessive noise) and one with the lowest
(likely slack noise). Baselines select at random, by uncertainty on clean
inputs, or by average uncertainty over noisy copies. All strategies
consider only examples whose level has not been finalized by an earlier
answer, and all order ties by example index so results are independent of
input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformity import ConformityReport, entropy_of
from .numerics import Rng


class PoolExhaustedError(RuntimeError):
    """Fewer eligible examples than the requested query size."""


@dataclass(frozen=True)
class SelectionResult:
    excessive: tuple[int, ...]
    deficient: tuple[int, ...]
    strategy: str
    round_index: int

    @property
    def all_indices(self) -> tuple[int, ...]:
        return self.excessive + self.deficient


def _check_pool(eligible, n_query: int):
    pool = sorted(eligible)
    if len(pool) < n_query:
        raise PoolExhaustedError(
            f"need {n_query} eligible examples, have {len(pool)}"
        )
    return pool


def select_aqpl(
    reports: list[ConformityReport],
    per_side: int,
    eligible,
    round_index: int = 0,
) -> SelectionResult:
    """Top ``per_side`` indices by entropy descending, then by entropy ascending.

    The excessive batch is chosen first (highest entropy, index breaking
    ties); the deficient batch is the lowest-entropy remainder, so the two
    never overlap.
    """
    pool = set(_check_pool(eligible, 2 * per_side))
    ranked = sorted(
        (r for r in reports if r.index in pool),
        key=lambda r: (-r.entropy, r.index),
    )
    if len(ranked) < 2 * per_side:
        raise PoolExhaustedError("reports do not cover the eligible pool")
    excessive = [r.index for r in ranked[:per_side]]
    rest = sorted(ranked[per_side:], key=lambda r: (r.entropy, r.index))
    deficient = [r.index for r in rest[:per_side]]
    return SelectionResult(tuple(excessive), tuple(deficient), "aqpl", round_index)


def select_random(eligible, n_query: int, rng: Rng, round_index: int = 0) -> SelectionResult:
    """Uniform sample without replacement, split evenly between the two sides."""
    pool = _check_pool(eligible, n_query)
    picked = [int(i) for i in rng.choice_without_replacement(pool, n_query)]
    half = n_query // 2
    return SelectionResult(tuple(picked[:half]), tuple(picked[half:]), "random", round_index)


def _split_ranked(indices: list[int], strategy: str, round_index: int) -> SelectionResult:
    half = len(indices) // 2
    return SelectionResult(tuple(indices[:half]), tuple(indices[half:]), strategy, round_index)


def select_clean_uncertainty(
    clf, data, eligible, n_query: int, round_index: int = 0
) -> SelectionResult:
    """Highest softmax entropy of the clean inputs; ignores levels entirely."""
    pool = _check_pool(eligible, n_query)
    probs = np.atleast_2d(clf.forward(data.x[pool]))
    ents = [entropy_of(p) for p in probs]
    order = sorted(range(len(pool)), key=lambda j: (-ents[j], pool[j]))
    picked = [pool[j] for j in order[:n_query]]
    return _split_ranked(picked, "clean_uncertainty", round_index)


def select_noise_uncertainty(
    clf,
    triplets,
    eligible,
    n_query: int,
    n_samples: int,
    rng: Rng,
    round_index: int = 0,
    family: str = "gaussian",
    clip: bool = False,
) -> SelectionResult:
    """Highest mean softmax entropy over noisy copies at each example's level."""
    from .perturb import noise_block

    pool = _check_pool(eligible, n_query)
    means = []
    for i in pool:
        t = triplets[i]
        z = noise_block(rng.substream(i), (n_samples, t.x.shape[0]), family)
        noisy = t.x + t.sigma * z
        if clip:
            noisy = np.clip(noisy, 0.0, 1.0)
        probs = np.atleast_2d(clf.forward(noisy))
        means.append(float(np.mean([entropy_of(p) for p in probs])))
    order = sorted(range(len(pool)), key=lambda j: (-means[j], pool[j]))
    picked = [pool[j] for j in order[:n_query]]
    return _split_ranked(picked, "noise_uncertainty", round_index)
