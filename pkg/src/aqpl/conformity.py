"""Prediction-consistency entropy of examples under their current noise level.

For each example we draw a fixed number of noisy copies at the example's
own level, count the classifier's hard class decisions, and take the
entropy of the empirical class distribution. Consistent predictions (low
entropy) indicate slack noise; scattered predictions (high entropy)
indicate excessive noise. For a linear two-class model the same quantity
has a closed form used by the theory checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import LinearBinary
from .numerics import DomainError, Rng
from .perturb import noise_block

_SQRT2 = math.sqrt(2.0)


class DegenerateInputError(ValueError):
    """The point sits exactly on the decision boundary."""


def entropy_of(p) -> float:
    """Shannon entropy (natural log) of a probability vector; 0*ln0 = 0."""
    v = np.asarray(p, dtype=np.float64)
    if np.any(v < 0.0):
        raise DomainError("probabilities must be non-negative")
    if abs(float(v.sum()) - 1.0) > 1e-9:
        raise DomainError(f"probabilities must sum to 1, got {float(v.sum())}")
    nz = v[v > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class ConformityReport:
    """Per-example Monte-Carlo summary at the level used for sampling."""

    index: int
    counts: tuple[int, ...]
    entropy: float
    sigma_used: float

    @property
    def n_samples(self) -> int:
        return int(sum(self.counts))

    @property
    def p_hat(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / self.n_samples


def mc_conformity(
    clf,
    triplet,
    n_samples: int,
    rng: Rng,
    family: str = "gaussian",
    clip: bool = False,
) -> ConformityReport:
    """Entropy of hard predictions over noisy copies of one example.

    ``rng`` should already be scoped to the current round; the draw is keyed
    by the example index here, so report values do not depend on the order
    examples are processed in.
    """
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    sub = rng.substream(triplet.index)
    z = noise_block(sub, (n_samples, triplet.x.shape[0]), family)
    noisy = triplet.x + triplet.sigma * z
    if clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    preds = np.asarray(clf.predict(noisy))
    counts = np.bincount(preds, minlength=clf.n_classes)
    h = entropy_of(counts / n_samples)
    return ConformityReport(triplet.index, tuple(int(c) for c in counts), h, triplet.sigma)


def conformity_reports(
    clf,
    triplets,
    n_samples: int,
    rng: Rng,
    eligible=None,
    family: str = "gaussian",
    clip: bool = False,
) -> list[ConformityReport]:
    indices = list(eligible) if eligible is not None else [t.index for t in triplets.triplets]
    return [
        mc_conformity(clf, triplets[i], n_samples, rng, family=family, clip=clip)
        for i in indices
    ]


def closed_form_entropy_linear(clf: LinearBinary, x, sigma: float) -> float:
    """Exact prediction entropy of a linear sign classifier under Gaussian noise.

    The noisy decision value is Gaussian around f(x), so the minority-side
    probability is q = Phi(-|f(x)| / (sigma * ||w||)); the result is the
    binary entropy of q. q is computed directly via erfc to stay accurate
    (and strictly monotone in sigma) far into the tail.
    """
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    f = clf.decision(np.asarray(x, dtype=np.float64))
    if f == 0.0:
        raise DegenerateInputError("point lies on the decision boundary")
    z = abs(f) / (sigma * clf.w_norm)
    q = 0.5 * math.erfc(z / _SQRT2)
    if q == 0.0:
        return 0.0
    return -q * math.log(q) - (1.0 - q) * math.log1p(-q)


def reports_to_csv(reports: list[ConformityReport], path: str) -> None:
    """One row per report: index, sigma, entropy, then per-class counts."""
    if not reports:
        raise DomainError("no reports to write")
    k = len(reports[0].counts)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "sigma", "entropy"] + [f"count_{c}" for c in range(k)])
        for r in reports:
            writer.writerow([r.index, repr(r.sigma_used), repr(r.entropy)] + list(r.counts))
