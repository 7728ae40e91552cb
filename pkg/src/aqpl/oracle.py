"""Sources of the optimal perturbation level and the conformity gap.

The optimal level of an example is the largest noise level at which a
ground-truth classifier still recognizes it with the target probability.
For a linear ground truth that level has a closed form; for an arbitrary
label function it is found by bisecting the candidate ladder against a
Monte-Carlo agreement estimate. The conformity gap is simply the current
level minus the optimal one: positive means excessive noise, negative
deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearBinary
from .numerics import DomainError, Rng, std_normal_quantile
from .perturb import Ladder, noise_block


class OnBoundaryError(ValueError):
    """The optimal level is undefined for points on the decision boundary."""


class UnidentifiableExampleError(ValueError):
    """Even the minimum ladder level fails the agreement target."""


@dataclass(frozen=True)
class Conformity:
    """Current level, optimal level, and their gap (current minus optimal)."""

    sigma: float
    sigma_opt: float
    gap: float


def conformity_of(sigma: float, sigma_opt: float) -> Conformity:
    return Conformity(sigma, sigma_opt, sigma - sigma_opt)


def sigma_opt_linear(
    oracle_w: np.ndarray,
    oracle_b: float,
    x: np.ndarray,
    agreement_target: float = 0.9973,
) -> float:
    """Closed-form optimal level for a linear sign ground truth.

    Under Gaussian noise the correct-side probability is
    Phi(|f(x)| / (sigma * ||w||)), which equals the target exactly at
    sigma = |f(x)| / (||w|| * Phi^-1(target)).
    """
    if not (0.5 < agreement_target < 1.0):
        raise DomainError(f"agreement target must be in (0.5, 1), got {agreement_target}")
    clf = LinearBinary(oracle_w, oracle_b)
    f = clf.decision(np.asarray(x, dtype=np.float64))
    if f == 0.0:
        raise OnBoundaryError("optimal level undefined on the decision boundary")
    return abs(f) / (clf.w_norm * std_normal_quantile(agreement_target))


def sigma_opt_bisect(
    concept,
    x: np.ndarray,
    y: int,
    agreement_target: float,
    probe_samples: int,
    ladder: Ladder,
    rng: Rng,
    family: str = "gaussian",
) -> float:
    """Largest ladder level whose Monte-Carlo agreement still meets the target.

    ``concept`` maps an (m, d) batch to m labels. One fixed noise block is
    drawn up front and rescaled for every candidate level, which keeps the
    empirical agreement curve monotone in the level, so plain bisection over
    the grid finds the threshold. The result is always a grid point.
    """
    if probe_samples < 1:
        raise DomainError(f"probe_samples must be >= 1, got {probe_samples}")
    if not (0.5 < agreement_target < 1.0):
        raise DomainError(f"agreement target must be in (0.5, 1), got {agreement_target}")
    v = np.asarray(x, dtype=np.float64)
    z = noise_block(rng, (probe_samples, v.shape[0]), family)
    cache: dict[int, float] = {}

    def agreement(idx: int) -> float:
        if idx not in cache:
            labels = np.asarray(concept(v + ladder.levels[idx] * z))
            cache[idx] = float(np.mean(labels == y))
        return cache[idx]

    lo, hi = 0, len(ladder.levels) - 1
    if agreement(lo) < agreement_target:
        raise UnidentifiableExampleError(
            f"agreement {agreement(lo):.4f} below target at the minimum level"
        )
    if agreement(hi) >= agreement_target:
        return ladder.levels[hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if agreement(mid) >= agreement_target:
            lo = mid
        else:
            hi = mid
    return ladder.levels[lo]


class LinearOracle:
    """Simulated annotator backed by a known linear ground truth.

    Answers are snapped to the ladder grid when one is given, mirroring a
    human picking a single rung.
    """

    def __init__(
        self,
        oracle_w: np.ndarray,
        oracle_b: float,
        agreement_target: float = 0.9973,
        ladder: Ladder | None = None,
    ):
        self.oracle_w = np.asarray(oracle_w, dtype=np.float64)
        self.oracle_b = float(oracle_b)
        self.agreement_target = agreement_target
        self.ladder = ladder

    def query(self, index: int, x: np.ndarray, y: int, current_sigma: float, round_index: int) -> float:
        sigma = sigma_opt_linear(self.oracle_w, self.oracle_b, x, self.agreement_target)
        if self.ladder is not None:
            if sigma >= self.ladder.levels[-1]:
                return self.ladder.levels[-1]
            sigma = self.ladder.snap(sigma)
        return sigma


class ConceptOracle:
    """Simulated annotator that probes an arbitrary label function."""

    def __init__(
        self,
        concept,
        ladder: Ladder,
        agreement_target: float = 0.9973,
        probe_samples: int = 10_000,
        seed: int = 0,
        family: str = "gaussian",
    ):
        if probe_samples < 1_000:
            raise DomainError("concept probing needs at least 1000 samples")
        self.concept = concept
        self.ladder = ladder
        self.agreement_target = agreement_target
        self.probe_samples = probe_samples
        self.family = family
        self._root = Rng(seed).substream("concept-oracle")

    def query(self, index: int, x: np.ndarray, y: int, current_sigma: float, round_index: int) -> float:
        return sigma_opt_bisect(
            self.concept,
            x,
            y,
            self.agreement_target,
            self.probe_samples,
            self.ladder,
            self._root.substream(index),
            family=self.family,
        )
