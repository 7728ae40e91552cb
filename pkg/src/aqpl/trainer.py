"""Training loops, the active query loop, and evaluation.

Two objectives are implemented: noise training at one shared level (the
fixed-level baseline) and noise training where every example carries its
own level. Both perturb only a configurable fraction of each batch so
clean accuracy is preserved, and both key their noise, masks, and shuffles
identically per (epoch, example), which makes the instance-wise loop
reproduce the fixed-level loop bit-for-bit whenever all levels are equal.

The query loop alternates conformity estimation, selection, oracle
annotation, and fine-tuning, recording metrics after every round.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .conformity import conformity_reports
from .dataset import Dataset, TripletDataset, save_state
from .model import Classifier, TrainingError, init_classifier, loss_and_grad, sgd_step
from .numerics import DomainError, Rng
from .oracle import UnidentifiableExampleError
from .perturb import CorruptedEvalSet, Ladder, make_ladder, noise_block
from .select import (
    select_aqpl,
    select_clean_uncertainty,
    select_noise_uncertainty,
    select_random,
)

STRATEGIES = ("aqpl", "random", "clean_uncertainty", "noise_uncertainty")


@dataclass
class TrainConfig:
    """Knobs for pretraining, fine-tuning, and the query loop."""

    arch: str = "mlp"
    hidden: int = 16
    epochs_per_round: int = 5
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    perturbed_fraction: float = 0.5
    conformity_samples: int = 50
    query_batch: int = 10
    rounds: int = 10
    seed: int = 0
    sigma_init: float = 0.23
    noise_family: str = "gaussian"
    agreement_target: float = 0.9973
    sigma_min: float = 0.0
    sigma_max: float = 0.9
    ladder_step: float = 0.01
    pretrain_epochs: int = 30
    retrain_from_scratch: bool = False
    stop_clean_acc: float | None = None
    stop_corrupted_acc: float | None = None
    eval_severities: tuple[float, ...] = (0.1, 0.23, 0.4)

    def __post_init__(self):
        if not (0.0 <= self.perturbed_fraction <= 1.0):
            raise DomainError(
                f"perturbed_fraction must be in [0, 1], got {self.perturbed_fraction}"
            )

    def ladder(self) -> Ladder:
        return make_ladder(self.sigma_min, self.sigma_max, self.ladder_step)


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    queries: int
    clean_acc: float
    corrupted_acc: dict[float, float]
    corrupted_mean: float
    mean_sigma: float


def accuracy(clf, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.asarray(clf.predict(x)) == y))


def evaluate(
    clf,
    clean: Dataset,
    corrupted: CorruptedEvalSet,
    round_index: int = 0,
    queries: int = 0,
    mean_sigma: float = 0.0,
) -> RoundMetrics:
    """Exact accuracy on the clean set and on every corrupted severity."""
    per_sev = {
        sev: accuracy(clf, corrupted.at(sev), corrupted.base.y)
        for sev in corrupted.severities
    }
    return RoundMetrics(
        round_index=round_index,
        queries=queries,
        clean_acc=accuracy(clf, clean.x, clean.y),
        corrupted_acc=per_sev,
        corrupted_mean=float(np.mean(list(per_sev.values()))),
        mean_sigma=mean_sigma,
    )


def _epoch_blocks(rng: Rng, epoch: int, n: int, d: int, fraction: float, family: str):
    """Noise, perturbation mask, and shuffle for one epoch, keyed per example.

    Row i of the noise block always belongs to example i regardless of the
    shuffle, so results do not depend on iteration order.
    """
    ep = rng.substream("epoch", epoch)
    z = noise_block(ep.substream("noise"), (n, d), family)
    mask = ep.substream("mask").uniform(n) < fraction
    order = ep.substream("shuffle").permutation(n)
    return z, mask, order


def _run_epochs(clf, x, y, sigmas, cfg, rng, epochs, clip):
    n, d = x.shape
    velocity = None
    for epoch in range(epochs):
        z, mask, order = _epoch_blocks(rng, epoch, n, d, cfg.perturbed_fraction, cfg.noise_family)
        noisy = x + np.where(mask[:, None], sigmas[:, None] * z, 0.0)
        if clip:
            noisy = np.clip(noisy, 0.0, 1.0)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(clf, noisy[batch], y[batch])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            velocity = sgd_step(clf, grad, cfg.lr, cfg.momentum, velocity)
    return clf


def train_noise_fixed(
    data: Dataset,
    sigma: float,
    cfg: TrainConfig,
    rng: Rng,
    clf: Classifier | None = None,
    epochs: int | None = None,
) -> Classifier:
    """Noise training at one shared level for every perturbed example."""
    if sigma < 0.0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if clf is None:
        clf = init_classifier(cfg.arch, data.d, data.n_classes, rng, cfg.hidden)
    sigmas = np.full(data.n, float(sigma))
    epochs = cfg.epochs_per_round if epochs is None else epochs
    return _run_epochs(clf, data.x, data.y, sigmas, cfg, rng, epochs, data.is_image)


def train_noise_instancewise(
    triplets: TripletDataset,
    cfg: TrainConfig,
    rng: Rng,
    clf: Classifier | None = None,
    epochs: int | None = None,
) -> Classifier:
    """Noise training where each perturbed example draws at its own level."""
    data = triplets.data
    if clf is None:
        clf = init_classifier(cfg.arch, data.d, data.n_classes, rng, cfg.hidden)
    sigmas = triplets.sigmas()
    epochs = cfg.epochs_per_round if epochs is None else epochs
    return _run_epochs(clf, data.x, data.y, sigmas, cfg, rng, epochs, data.is_image)


def _select(strategy, clf, triplets, reports, eligible, per_side, cfg, rng, round_index):
    clip = triplets.data.is_image
    if strategy == "aqpl":
        return select_aqpl(reports, per_side, eligible, round_index)
    if strategy == "random":
        return select_random(eligible, 2 * per_side, rng.substream("select", round_index), round_index)
    if strategy == "clean_uncertainty":
        return select_clean_uncertainty(clf, triplets.data, eligible, 2 * per_side, round_index)
    if strategy == "noise_uncertainty":
        return select_noise_uncertainty(
            clf,
            triplets,
            eligible,
            2 * per_side,
            cfg.conformity_samples,
            rng.substream("noise-unc", round_index),
            round_index,
            family=cfg.noise_family,
            clip=clip,
        )
    raise DomainError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def run_aqpl(
    clf: Classifier,
    triplets: TripletDataset,
    oracle,
    strategy: str,
    cfg: TrainConfig,
    clean_eval: Dataset,
    corrupted_eval: CorruptedEvalSet,
    rng: Rng,
    checkpoint_dir: str | None = None,
) -> tuple[Classifier, list[RoundMetrics], list[dict]]:
    """Query loop: estimate conformity, select, annotate, fine-tune, evaluate.

    The pretrained classifier is copied, so callers can reuse it across
    strategies; ``triplets`` is annotated in place. Round 0 metrics record
    the pretrained model before any query.
    """
    clf = clf.copy()
    query_log: list[dict] = []
    queries = 0
    metrics = [
        evaluate(clf, clean_eval, corrupted_eval, 0, 0, triplets.mean_sigma())
    ]
    clip = triplets.data.is_image

    for round_index in range(1, cfg.rounds + 1):
        eligible = triplets.eligible_indices()
        if len(eligible) < 2:
            break
        per_side = min(cfg.query_batch, len(eligible) // 2)
        reports = conformity_reports(
            clf,
            triplets,
            cfg.conformity_samples,
            rng.substream("conformity", round_index),
            eligible,
            family=cfg.noise_family,
            clip=clip,
        )
        entropy_by_index = {r.index: r.entropy for r in reports}
        selection = _select(
            strategy, clf, triplets, reports, eligible, per_side, cfg, rng, round_index
        )

        for side, indices in (("excessive", selection.excessive), ("deficient", selection.deficient)):
            for i in indices:
                t = triplets[i]
                before = t.sigma
                note = ""
                try:
                    sigma_star = oracle.query(i, t.x, t.y, t.sigma, round_index)
                    note = getattr(oracle, "last_note", "")
                except UnidentifiableExampleError:
                    sigma_star = cfg.sigma_min
                    note = "unidentifiable"
                triplets.apply_annotation(i, sigma_star, round_index)
                queries += 1
                query_log.append(
                    {
                        "round": round_index,
                        "strategy": strategy,
                        "index": i,
                        "side": side,
                        "entropy": entropy_by_index[i],
                        "sigma_before": before,
                        "sigma_after": sigma_star,
                        "note": note,
                    }
                )

        if cfg.retrain_from_scratch:
            clf = train_noise_instancewise(
                triplets, cfg, rng.substream("retrain", round_index), epochs=cfg.pretrain_epochs
            )
        else:
            train_noise_instancewise(
                triplets, cfg, rng.substream("round", round_index), clf=clf
            )

        m = evaluate(
            clf, clean_eval, corrupted_eval, round_index, queries, triplets.mean_sigma()
        )
        metrics.append(m)
        if checkpoint_dir is not None:
            save_state(
                os.path.join(checkpoint_dir, f"round_{round_index:03d}.json"),
                triplets,
                clf.to_dict(),
                query_log,
                round_index,
            )
        if (
            cfg.stop_clean_acc is not None
            and m.clean_acc >= cfg.stop_clean_acc
            and (cfg.stop_corrupted_acc is None or m.corrupted_mean >= cfg.stop_corrupted_acc)
        ):
            break
    return clf, metrics, query_log


def metrics_csv_header(severities) -> str:
    cols = ["round", "queries", "clean_acc", "corrupted_acc_mean"]
    cols += [f"corrupted_acc@{s}" for s in severities]
    cols.append("mean_sigma")
    return ",".join(cols)


def metrics_to_csv(metrics: list[RoundMetrics], path: str) -> None:
    """Deterministic CSV; floats use their shortest round-trip form."""
    if not metrics:
        raise DomainError("no metrics to write")
    severities = list(metrics[0].corrupted_acc)
    lines = [metrics_csv_header(severities)]
    for m in metrics:
        row = [str(m.round_index), str(m.queries), repr(m.clean_acc), repr(m.corrupted_mean)]
        row += [repr(m.corrupted_acc[s]) for s in severities]
        row.append(repr(m.mean_sigma))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
