"""Noise families, the candidate-level ladder, and corrupted evaluation sets.

Both families are parameterized by standard deviation so a level means the
same amount of noise regardless of family: ``gaussian`` adds N(0, sigma^2)
per entry, ``uniform`` adds U(-sigma*sqrt(3), sigma*sqrt(3)). Image-valued
data is clipped back to [0, 1] after adding noise; synthetic features are
left unclipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .numerics import Rng

_SQRT3 = math.sqrt(3.0)

FAMILIES = ("gaussian", "uniform")


class ConfigError(ValueError):
    """Invalid noise or ladder configuration."""


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    sigma: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")


def noise_block(rng: Rng, shape, family: str = "gaussian") -> np.ndarray:
    """Unit-scale noise draws; multiply by a level to get the perturbation."""
    if family == "gaussian":
        return rng.normal(shape)
    if family == "uniform":
        return _SQRT3 * (2.0 * rng.uniform(shape) - 1.0)
    raise ConfigError(f"unknown noise family {family!r}")


def perturb(x: np.ndarray, spec: NoiseSpec, rng: Rng, clip: bool = False) -> np.ndarray:
    """Return x plus one draw from the noise family at the spec's level."""
    v = np.asarray(x, dtype=np.float64)
    out = v + spec.sigma * noise_block(rng, v.shape, spec.family)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class Ladder:
    """Inclusive evenly spaced grid of candidate levels."""

    sigma_min: float
    sigma_max: float
    alpha: float
    levels: tuple[float, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.levels)

    def index_of(self, sigma: float, tol: float = 1e-9) -> int:
        """Index of the grid level equal to sigma, or raise."""
        for i, lvl in enumerate(self.levels):
            if abs(lvl - sigma) <= tol:
                return i
        raise ConfigError(f"{sigma} is not a ladder level")

    def contains(self, sigma: float, tol: float = 1e-9) -> bool:
        return any(abs(lvl - sigma) <= tol for lvl in self.levels)

    def snap(self, sigma: float) -> float:
        """Nearest grid level (lowest index wins on exact ties)."""
        arr = np.asarray(self.levels)
        return float(arr[int(np.argmin(np.abs(arr - sigma)))])


def make_ladder(sigma_min: float, sigma_max: float, alpha: float) -> Ladder:
    """Grid from sigma_min up to sigma_max in steps of alpha.

    The top level is included only when it lands on the grid; steps that
    overshoot stop below it. Levels are rounded to 12 decimals so they
    survive any JSON round trip unchanged.
    """
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if not (sigma_max > sigma_min >= 0.0):
        raise ConfigError(f"need sigma_max > sigma_min >= 0, got [{sigma_min}, {sigma_max}]")
    levels = []
    i = 0
    while True:
        lvl = round(sigma_min + i * alpha, 12)
        if lvl > sigma_max + 1e-12:
            break
        levels.append(lvl)
        i += 1
    return Ladder(sigma_min, sigma_max, alpha, tuple(levels))


@dataclass
class CorruptedEvalSet:
    """Noise-corrupted copies of an evaluation set at several severities."""

    base: Dataset
    family: str
    severities: tuple[float, ...]
    corrupted: dict[float, np.ndarray]
    seed: int

    def at(self, severity: float) -> np.ndarray:
        return self.corrupted[severity]


def corrupt_eval_set(
    data: Dataset, family: str, severities, seed: int
) -> CorruptedEvalSet:
    """Materialize corrupted instances; a pure function of (data, family, severities, seed).

    Draws are keyed per (severity index, example index), so results do not
    depend on evaluation order. Severity 0 reproduces the clean set exactly.
    """
    severities = tuple(float(s) for s in severities)
    if not severities:
        raise ConfigError("severities must be non-empty")
    root = Rng(seed).substream("corrupt-eval")
    corrupted: dict[float, np.ndarray] = {}
    for si, sev in enumerate(severities):
        out = np.empty_like(data.x)
        for i in range(data.n):
            out[i] = data.x[i] + sev * noise_block(root.substream(si, i), data.d, family)
        if data.is_image:
            out = np.clip(out, 0.0, 1.0)
        corrupted[sev] = out
    return CorruptedEvalSet(data, family, severities, corrupted, seed)
