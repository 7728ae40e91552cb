"""Deterministic randomness and standard-normal helpers shared by all modules.

Every stochastic operation in this package draws from :class:`Rng`, a
counter-based Philox stream addressed by an explicit derivation path.
Substreams are derived by hashing (seed, path), not by consuming draws, so
per-example or per-round streams can be created in any order and still
yield bit-identical results across runs and platforms.

Gaussian variates are produced by applying the inverse standard-normal CDF
to uniform draws. This transform is fixed here once: it makes a draw at
level ``sigma`` exactly equal ``sigma`` times the matching unit draw, a
property several callers rely on.
"""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np
from scipy.special import ndtri

_SQRT2 = math.sqrt(2.0)

# Smallest uniform value fed to the inverse CDF; numpy's random() can return
# exactly 0.0, which ndtri would map to -inf.
_U_FLOOR = 2.0 ** -53


class DomainError(ValueError):
    """Input lies outside an operation's documented domain."""


def _derive_key(seed: int, path: tuple) -> int:
    """Hash (seed, path) into a 128-bit Philox key."""
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
    for item in path:
        if isinstance(item, (int, np.integer)):
            h.update(b"i" + struct.pack("<q", int(item)))
        elif isinstance(item, str):
            raw = item.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            raise TypeError(f"substream keys must be int or str, got {type(item).__name__}")
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Seeded, splittable random stream.

    ``substream(*keys)`` derives an independent child stream from the parent's
    (seed, path) plus the given keys without consuming any state. Keys may be
    ints (example indices, round numbers) or short strings naming a purpose.
    """

    __slots__ = ("seed", "path", "_generator")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self._generator: np.random.Generator | None = None

    def substream(self, *keys) -> "Rng":
        for k in keys:
            if not isinstance(k, (int, np.integer, str)) or isinstance(k, bool):
                raise TypeError(f"substream keys must be int or str, got {type(k).__name__}")
        return Rng(self.seed, self.path + keys)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            key = _derive_key(self.seed, self.path)
            self._generator = np.random.Generator(np.random.Philox(key=key))
        return self._generator

    def uniform(self, shape) -> np.ndarray:
        """Uniform float64 draws in [0, 1)."""
        return self.generator.random(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard-normal draws via the inverse-CDF transform."""
        u = np.maximum(self.uniform(shape), _U_FLOOR)
        return ndtri(u)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice_without_replacement(self, values, size: int) -> np.ndarray:
        return self.generator.choice(np.asarray(values), size=size, replace=False, shuffle=False)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed}, path={self.path!r})"


def as_vector(x, d: int | None = None) -> np.ndarray:
    """Validate and return a finite 1-D float64 feature vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DomainError(f"expected a 1-D vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise DomainError(f"expected length {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector entries must be finite")
    return v


def gaussian_vector(rng: Rng, d: int, sigma: float) -> np.ndarray:
    """Draw d independent N(0, sigma^2) values from ``rng``.

    ``sigma = 0`` yields the zero vector. Because draws are built as
    ``sigma * z`` with z the unit draw, scaling sigma scales the output
    bit-exactly for a shared substream.
    """
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    if not (sigma >= 0.0 and math.isfinite(sigma)):
        raise DomainError(f"sigma must be finite and >= 0, got {sigma}")
    return sigma * rng.normal(d)


def std_normal_cdf(z: float) -> float:
    """Standard-normal CDF, accurate in both tails (erfc-based)."""
    if not math.isfinite(z):
        raise DomainError(f"z must be finite, got {z}")
    return 0.5 * math.erfc(-z / _SQRT2)


def std_normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF for p in the open interval (0, 1)."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must be in (0, 1), got {p}")
    return float(ndtri(p))
