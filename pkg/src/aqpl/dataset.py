"""Datasets, per-example level bookkeeping, generators, and checkpointing.

Holds the clean training set, the synthetic blob generator used for
desk-scale experiments, the IDX image reader, the triplet records that
attach a perturbation level to every example, and the JSON checkpoint
format for resumable query sessions.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import DomainError, Rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class FormatError(ValueError):
    """An input file violates its declared binary format."""


class CheckpointError(ValueError):
    """A checkpoint file cannot be parsed."""


@dataclass
class Dataset:
    """Feature matrix plus integer labels in {0..n_classes-1}."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2:
            raise DomainError(f"x must be (n, d), got shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise DomainError("instances and labels must have the same length")
        if not np.all(np.isfinite(self.x)):
            raise DomainError("features must be finite")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DomainError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def is_image(self) -> bool:
        return self.image_shape is not None


def _class_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if c < extra else 0) for c in range(k)]


def _margin_profile(margin_range, n_classes: int):
    """Normalize a margin profile.

    Accepted forms:
      (lo, hi)                      one band shared by every class
      [(lo, hi), ...]               one band per class
      [(lo, hi, frac), ...]         shared multi-band profile; each class puts
                                    ``frac`` of its points in that band
    Returns (per-class bands, shared) where bands is a list of
    (lo, hi, frac) lists.
    """
    items = list(margin_range)
    if len(items) == 2 and not hasattr(items[0], "__len__"):
        per_class = [[(float(items[0]), float(items[1]), 1.0)]] * n_classes
    elif all(hasattr(p, "__len__") and len(p) == 3 for p in items):
        total = sum(float(p[2]) for p in items)
        if not abs(total - 1.0) <= 1e-9:
            raise DomainError(f"band fractions must sum to 1, got {total}")
        bands = [(float(p[0]), float(p[1]), float(p[2])) for p in items]
        per_class = [bands] * n_classes
    elif all(hasattr(p, "__len__") and len(p) == 2 for p in items):
        if len(items) != n_classes:
            raise DomainError(
                f"margin profile needs one (lo, hi) per class, got {len(items)} for {n_classes}"
            )
        per_class = [[(float(p[0]), float(p[1]), 1.0)] for p in items]
    else:
        raise DomainError(f"unrecognized margin profile {margin_range!r}")
    for bands in per_class:
        for lo, hi, frac in bands:
            if not (0.0 < lo <= hi):
                raise DomainError("margin bounds must satisfy 0 < lo <= hi")
            if not (0.0 < frac <= 1.0):
                raise DomainError("band fractions must lie in (0, 1]")
    return per_class


def _band_margins(bands, count: int) -> np.ndarray:
    """Evenly spaced margins across bands, band sizes proportional to frac."""
    sizes = [int(round(frac * count)) for _, _, frac in bands]
    sizes[-1] += count - sum(sizes)
    out = []
    for (lo, hi, _), size in zip(bands, sizes):
        if size <= 0:
            continue
        out.append(np.linspace(lo, hi, size) if size > 1 else np.array([lo]))
    return np.concatenate(out) if out else np.array([bands[0][0]])


def _class_directions(k: int, d: int) -> np.ndarray:
    """Unit direction per class in the first two feature dimensions."""
    dirs = np.zeros((k, d))
    if k == 2:
        dirs[0, 0] = -1.0
        dirs[1, 0] = 1.0
    else:
        angles = 2.0 * math.pi * np.arange(k) / k
        dirs[:, 0] = np.cos(angles)
        dirs[:, 1] = np.sin(angles)
    return dirs


def gen_blobs(
    rng: Rng,
    n: int,
    n_classes: int,
    d: int,
    spread: float = 0.5,
    margin_range=(0.05, 2.0),
    stagger: float = 0.0,
) -> Dataset:
    """Synthetic point clouds whose distances to the class boundary are controlled.

    Each class places its points at margins evenly spanning the margin
    profile from the decision boundary of the generating rule (sign of the
    first coordinate for two classes, angular sectors otherwise), so
    examples vary widely in how much noise they tolerate. The profile is
    one (lo, hi) pair shared by every class, or one pair per class when
    classes should differ in intrinsic robustness. Jitter in the remaining
    dimensions is keyed per rank, which for two classes with a shared
    profile makes the clouds exact mirror images.

    ``stagger`` offsets class c by c * stagger along the second feature
    dimension, so classes face each other's empty flanks across the
    boundary instead of mirroring exactly (zero keeps the symmetric
    layout).
    """
    if n_classes < 2 or n < n_classes or d < 2:
        raise DomainError("need n >= n_classes >= 2 and d >= 2")
    profile = _margin_profile(margin_range, n_classes)

    dirs = _class_directions(n_classes, d)
    sizes = _class_sizes(n, n_classes)
    margins = {c: _band_margins(profile[c], sizes[c]) for c in range(n_classes)}
    # Radius that puts a point at margin m from the nearest sector boundary.
    scale = 1.0 if n_classes == 2 else 1.0 / math.sin(math.pi / n_classes)
    jitter_dims = list(range(1, d)) if n_classes == 2 else list(range(2, d))

    xs = np.zeros((n, d))
    ys = np.zeros(n, dtype=np.int64)
    i = 0
    for rank in range(max(sizes)):
        jitter = None
        if jitter_dims:
            jitter = spread * rng.substream("jitter", rank).normal(len(jitter_dims))
        for c in range(n_classes):
            if rank >= sizes[c]:
                continue
            p = dirs[c] * (margins[c][rank] * scale)
            if jitter is not None:
                p = p.copy()
                p[jitter_dims] += jitter
            if stagger != 0.0:
                p = p.copy()
                p[1] += c * stagger
            xs[i] = p
            ys[i] = c
            i += 1
    return Dataset(xs, ys, n_classes)


def blob_boundary(d: int) -> tuple[np.ndarray, float]:
    """Generating hyperplane of the two-class blob task: w = e1, b = 0."""
    w = np.zeros(d)
    w[0] = 1.0
    return w, 0.0


def blob_labeler(n_classes: int, d: int):
    """Ground-truth label function of the blob generator (argmax class direction)."""
    dirs = _class_directions(n_classes, d)

    def label(x: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.argmax(a @ dirs.T, axis=1)
        return out if np.asarray(x).ndim == 2 else int(out[0])

    return label


def _read_exact(f, count: int, path: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated payload (wanted {count} bytes, got {len(data)})")
    return data


def load_idx_images(images_path: str, labels_path: str, limit: int | None = None) -> Dataset:
    """Read big-endian IDX image/label files into a [0, 1]-scaled Dataset."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x}")
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, images_path), dtype=np.uint8)
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)
    if count != label_count:
        raise FormatError(
            f"{labels_path}: label count {label_count} does not match image count {count}"
        )
    if limit is not None:
        if limit <= 0:
            raise FormatError(f"{images_path}: limit={limit} leaves an empty dataset")
        count = min(count, limit)
    if count == 0:
        raise FormatError(f"{images_path}: file contains no images")
    x = pixels.reshape(-1, rows * cols)[:count].astype(np.float64) / 255.0
    y = labels[:count].astype(np.int64)
    return Dataset(x, y, n_classes=10, image_shape=(rows, cols))


@dataclass
class Triplet:
    """One training example with its current perturbation level."""

    index: int
    x: np.ndarray
    y: int
    sigma: float
    annotated: bool = False
    sigma_history: list[tuple[int, float]] = field(default_factory=list)


class TripletDataset:
    """Ordered triplets over a base dataset; levels mutate between rounds."""

    def __init__(self, data: Dataset, triplets: list[Triplet]):
        if [t.index for t in triplets] != list(range(len(triplets))):
            raise DomainError("triplet indices must be unique and contiguous")
        self.data = data
        self.triplets = triplets
        self.n_classes = data.n_classes

    def __len__(self) -> int:
        return len(self.triplets)

    def __getitem__(self, i: int) -> Triplet:
        return self.triplets[i]

    def sigmas(self) -> np.ndarray:
        return np.array([t.sigma for t in self.triplets])

    def mean_sigma(self) -> float:
        return float(self.sigmas().mean())

    def eligible_indices(self) -> list[int]:
        return [t.index for t in self.triplets if not t.annotated]

    def apply_annotation(self, index: int, sigma: float, round_index: int) -> None:
        """Record an oracle answer: set the level, mark final, append history."""
        t = self.triplets[index]
        if sigma < 0.0:
            raise DomainError(f"sigma must be >= 0, got {sigma}")
        if t.sigma_history and round_index < t.sigma_history[-1][0]:
            raise DomainError("annotation rounds must be non-decreasing")
        t.sigma = float(sigma)
        t.annotated = True
        t.sigma_history.append((round_index, float(sigma)))


def init_triplets(data: Dataset, sigma_init: float = 0.23) -> TripletDataset:
    """Assign every example the same starting perturbation level."""
    if sigma_init < 0.0:
        raise DomainError(f"sigma_init must be >= 0, got {sigma_init}")
    triplets = [
        Triplet(i, data.x[i], int(data.y[i]), float(sigma_init)) for i in range(data.n)
    ]
    return TripletDataset(data, triplets)


@dataclass
class CheckpointState:
    round_index: int
    triplets: TripletDataset
    weights: dict
    query_log: list[dict]


def save_state(
    path: str,
    triplets: TripletDataset,
    weights: dict,
    query_log: list[dict],
    round_index: int,
    include_features: bool = True,
    features_ref: str | None = None,
) -> None:
    """Write one atomic JSON checkpoint (temp file + rename).

    Floats pass through ``json`` unmodified; its shortest-round-trip encoding
    restores every finite value bit-exactly on load.
    """
    doc = {
        "round": round_index,
        "n_classes": triplets.n_classes,
        "image_shape": list(triplets.data.image_shape) if triplets.data.image_shape else None,
        "features_ref": features_ref,
        "triplets": [
            {
                "index": t.index,
                **({"x": t.x.tolist()} if include_features else {}),
                "y": t.y,
                "sigma": t.sigma,
                "annotated": t.annotated,
                "sigma_history": [[r, s] for r, s in t.sigma_history],
            }
            for t in triplets.triplets
        ],
        "weights": weights,
        "query_log": query_log,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")
    os.replace(tmp, path)


def load_state(path: str, features_from: Dataset | None = None) -> CheckpointState:
    """Inverse of :func:`save_state`; never mutates anything on failure."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: invalid checkpoint at byte {e.pos}: {e.msg}") from e

    rows = doc["triplets"]
    n_classes = int(doc["n_classes"])
    image_shape = tuple(doc["image_shape"]) if doc.get("image_shape") else None
    if rows and "x" in rows[0]:
        x = np.array([row["x"] for row in rows], dtype=np.float64)
    elif features_from is not None:
        x = features_from.x
    else:
        raise CheckpointError(
            f"{path}: checkpoint stores features by reference; pass the source dataset"
        )
    y = np.array([row["y"] for row in rows], dtype=np.int64)
    data = Dataset(x, y, n_classes, image_shape=image_shape)
    triplets = [
        Triplet(
            int(row["index"]),
            data.x[i],
            int(row["y"]),
            float(row["sigma"]),
            bool(row["annotated"]),
            [(int(r), float(s)) for r, s in row["sigma_history"]],
        )
        for i, row in enumerate(rows)
    ]
    return CheckpointState(
        round_index=int(doc["round"]),
        triplets=TripletDataset(data, triplets),
        weights=doc["weights"],
        query_log=list(doc["query_log"]),
    )
