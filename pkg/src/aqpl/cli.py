"""Command-line entry point: experiments, strategy comparisons, theory checks.

Commands:
  run      pretrain, query rounds, evaluation sweep; CSV + checkpoint + summary
  compare  all selection strategies on paired seeds; combined curve CSV
  theory   closed-form monotonicity and rank-correlation checks, PASS/FAIL
  serve    annotation service plus trainer in human-oracle mode

Configuration is an INI file; ``--set section.key=value`` overrides any
entry. The AQPL_OUT_DIR environment variable overrides the output
directory. Exit codes: 0 ok, 1 check failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.stats import spearmanr

from .annotate import HumanOracle, TaskStore, create_app
from .conformity import closed_form_entropy_linear
from .dataset import Dataset, blob_boundary, blob_labeler, gen_blobs, init_triplets, load_idx_images, save_state
from .model import Classifier, LinearBinary
from .numerics import Rng
from .oracle import ConceptOracle, LinearOracle, sigma_opt_linear
from .perturb import corrupt_eval_set
from .trainer import (
    STRATEGIES,
    TrainConfig,
    metrics_to_csv,
    run_aqpl,
    train_noise_fixed,
)


class ConfigError(ValueError):
    """Bad experiment configuration."""


@dataclass
class ExperimentConfig:
    dataset_kind: str = "blobs"
    n: int = 1000
    n_classes: int = 2
    dim: int = 2
    spread: float = 0.5
    margin_lo: float = 0.05
    margin_hi: float = 2.0
    margin_bands: tuple | None = None
    stagger: float = 0.0
    test_n: int = 1000
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0
    oracle_kind: str = "linear"
    probe_samples: int = 10_000
    strategies: tuple[str, ...] = ("aqpl", "random")
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.dataset_kind not in ("blobs", "idx"):
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.dataset_kind == "idx":
            for path in (self.images, self.labels):
                if not path or not os.path.exists(path):
                    raise ConfigError(f"dataset path does not exist: {path!r}")
            for path in (self.test_images, self.test_labels):
                if path and not os.path.exists(path):
                    raise ConfigError(f"dataset path does not exist: {path!r}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if self.oracle_kind not in ("linear", "concept", "human"):
            raise ConfigError(f"unknown oracle kind {self.oracle_kind!r}")
        if self.oracle_kind == "linear" and not (
            self.dataset_kind == "blobs" and self.n_classes == 2
        ):
            raise ConfigError("the linear oracle requires the two-class blobs dataset")
        if self.oracle_kind == "concept" and self.dataset_kind != "blobs":
            raise ConfigError("the concept oracle requires the blobs dataset")


_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(raw: str, target):
    raw = raw.strip()
    if target is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if target is int:
        return int(raw)
    if target is float:
        return float(raw)
    if target is tuple:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    return raw


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """INI file plus ``section.key=value`` overrides; flags win over the file."""
    cfg = ExperimentConfig()
    train_kwargs: dict = {}

    def apply(section: str, key: str, raw: str) -> None:
        if section == "dataset":
            mapping = {
                "kind": ("dataset_kind", str), "n": ("n", int), "classes": ("n_classes", int),
                "dim": ("dim", int), "spread": ("spread", float),
                "margin_lo": ("margin_lo", float), "margin_hi": ("margin_hi", float),
                "stagger": ("stagger", float),
                "test_n": ("test_n", int), "images": ("images", str), "labels": ("labels", str),
                "test_images": ("test_images", str), "test_labels": ("test_labels", str),
                "limit": ("limit", int),
            }
            if key == "margin_bands":
                # lo:hi:frac triples, comma separated
                bands = tuple(
                    tuple(float(v) for v in part.split(":"))
                    for part in raw.split(",") if part.strip()
                )
                cfg.margin_bands = bands
            elif key not in mapping:
                raise ConfigError(f"unknown dataset option {key!r}")
            else:
                name, typ = mapping[key]
                setattr(cfg, name, _parse_value(raw, typ))
        elif section == "model":
            if key == "arch":
                train_kwargs["arch"] = raw.strip()
            elif key == "hidden":
                train_kwargs["hidden"] = int(raw)
            else:
                raise ConfigError(f"unknown model option {key!r}")
        elif section == "train":
            if key == "eval_severities":
                train_kwargs["eval_severities"] = _parse_value(raw, tuple)
            elif key in _TRAIN_FIELDS:
                current = getattr(TrainConfig(), key)
                typ = type(current) if current is not None else float
                train_kwargs[key] = _parse_value(raw, typ)
            else:
                raise ConfigError(f"unknown train option {key!r}")
        elif section == "oracle":
            if key == "kind":
                cfg.oracle_kind = raw.strip()
            elif key == "probe_samples":
                cfg.probe_samples = int(raw)
            elif key == "agreement_target":
                train_kwargs["agreement_target"] = float(raw)
            else:
                raise ConfigError(f"unknown oracle option {key!r}")
        elif section == "run":
            if key == "strategies":
                cfg.strategies = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif key == "seeds":
                cfg.seeds = tuple(int(s) for s in raw.split(",") if s.strip())
            elif key == "out_dir":
                cfg.out_dir = raw.strip()
            else:
                raise ConfigError(f"unknown run option {key!r}")
        else:
            raise ConfigError(f"unknown config section {section!r}")

    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path!r}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.read(path)
        for section in parser.sections():
            for key, raw in parser.items(section):
                apply(section, key, raw)

    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        apply(section.strip(), key.strip(), raw)

    if os.environ.get("AQPL_OUT_DIR"):
        cfg.out_dir = os.environ["AQPL_OUT_DIR"]
    cfg.train = replace(cfg.train, **train_kwargs)
    cfg.validate()
    return cfg


def build_data(ecfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Training set and a held-out evaluation set for one seed."""
    if ecfg.dataset_kind == "blobs":
        margin = ecfg.margin_bands if ecfg.margin_bands else (ecfg.margin_lo, ecfg.margin_hi)
        train = gen_blobs(
            Rng(seed).substream("train-data"), ecfg.n, ecfg.n_classes, ecfg.dim,
            ecfg.spread, margin, ecfg.stagger,
        )
        test = gen_blobs(
            Rng(seed).substream("test-data"), ecfg.test_n, ecfg.n_classes, ecfg.dim,
            ecfg.spread, margin, ecfg.stagger,
        )
        return train, test
    limit = ecfg.limit or None
    train = load_idx_images(ecfg.images, ecfg.labels, limit)
    if ecfg.test_images:
        test = load_idx_images(ecfg.test_images, ecfg.test_labels, limit)
    else:
        test = train
    return train, test


def build_oracle(ecfg: ExperimentConfig, cfg: TrainConfig, seed: int):
    ladder = cfg.ladder()
    if ecfg.oracle_kind == "linear":
        w, b = blob_boundary(ecfg.dim)
        return LinearOracle(w, b, cfg.agreement_target, ladder)
    if ecfg.oracle_kind == "concept":
        concept = blob_labeler(ecfg.n_classes, ecfg.dim)
        return ConceptOracle(
            concept, ladder, cfg.agreement_target, ecfg.probe_samples, seed,
            family=cfg.noise_family,
        )
    raise ConfigError("the human oracle is only available through the serve command")


def run_single(
    ecfg: ExperimentConfig,
    strategy: str,
    seed: int,
    oracle=None,
    pretrained: Classifier | None = None,
):
    """One (strategy, seed) experiment; returns (metrics, query_log, clf, triplets)."""
    cfg = replace(ecfg.train, seed=seed)
    train, test = build_data(ecfg, seed)
    corrupted = corrupt_eval_set(test, cfg.noise_family, cfg.eval_severities, seed)
    if pretrained is None:
        pretrained = train_noise_fixed(
            train, cfg.sigma_init, cfg, Rng(seed).substream("pretrain"),
            epochs=cfg.pretrain_epochs,
        )
    triplets = init_triplets(train, cfg.sigma_init)
    if oracle is None:
        oracle = build_oracle(ecfg, cfg, seed)
    clf, metrics, qlog = run_aqpl(
        pretrained, triplets, oracle, strategy, cfg, test, corrupted,
        Rng(seed).substream("loop"),
    )
    return metrics, qlog, clf, triplets


def run_comparison(ecfg: ExperimentConfig, strategies, seeds):
    """Paired-seed comparison: shared data, pretraining, and stream keys per seed."""
    results: dict[str, dict[int, list]] = {s: {} for s in strategies}
    for seed in seeds:
        cfg = replace(ecfg.train, seed=seed)
        train, test = build_data(ecfg, seed)
        corrupted = corrupt_eval_set(test, cfg.noise_family, cfg.eval_severities, seed)
        pretrained = train_noise_fixed(
            train, cfg.sigma_init, cfg, Rng(seed).substream("pretrain"),
            epochs=cfg.pretrain_epochs,
        )
        oracle = build_oracle(ecfg, cfg, seed)
        for strategy in strategies:
            triplets = init_triplets(train, cfg.sigma_init)
            _, metrics, _ = run_aqpl(
                pretrained, triplets, oracle, strategy, cfg, test, corrupted,
                Rng(seed).substream("loop"),
            )
            results[strategy][seed] = metrics
    return results


def _write_summary(path: str, results) -> None:
    summary: dict = {}
    for strategy, by_seed in results.items():
        finals_corrupted = [m[-1].corrupted_mean for m in by_seed.values()]
        finals_clean = [m[-1].clean_acc for m in by_seed.values()]
        summary[strategy] = {
            "final_corrupted_mean": {
                "mean": float(np.mean(finals_corrupted)),
                "std": float(np.std(finals_corrupted)),
            },
            "final_clean_acc": {
                "mean": float(np.mean(finals_clean)),
                "std": float(np.std(finals_clean)),
            },
            "per_seed": {
                str(seed): {
                    "corrupted_mean": m[-1].corrupted_mean,
                    "clean_acc": m[-1].clean_acc,
                    "queries": m[-1].queries,
                }
                for seed, m in sorted(by_seed.items())
            },
        }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_run(args) -> int:
    ecfg = load_config(args.config, args.set)
    out_dir = args.out or ecfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    results: dict[str, dict[int, list]] = {s: {} for s in ecfg.strategies}
    for strategy in ecfg.strategies:
        for seed in ecfg.seeds:
            metrics, qlog, clf, triplets = run_single(ecfg, strategy, seed)
            results[strategy][seed] = metrics
            metrics_to_csv(metrics, os.path.join(out_dir, f"metrics_{strategy}_seed{seed}.csv"))
            save_state(
                os.path.join(out_dir, f"checkpoint_{strategy}_seed{seed}.json"),
                triplets, clf.to_dict(), qlog, metrics[-1].round_index,
            )
    _write_summary(os.path.join(out_dir, "summary.json"), results)
    print(f"wrote {sum(len(v) for v in results.values())} runs to {out_dir}")
    return 0


def cmd_compare(args) -> int:
    ecfg = load_config(args.config, args.set)
    strategies = STRATEGIES
    out_dir = args.out or ecfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    results = run_comparison(ecfg, strategies, ecfg.seeds)
    lines = ["strategy,round,queries,corrupted_acc_mean,corrupted_acc_std"]
    for strategy in strategies:
        by_seed = results[strategy]
        n_rounds = min(len(m) for m in by_seed.values())
        for r in range(n_rounds):
            vals = [by_seed[seed][r].corrupted_mean for seed in ecfg.seeds]
            queries = by_seed[ecfg.seeds[0]][r].queries
            lines.append(
                f"{strategy},{r},{queries},{float(np.mean(vals))!r},{float(np.std(vals))!r}"
            )
    path = os.path.join(out_dir, "compare.csv")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
    _write_summary(os.path.join(out_dir, "summary.json"), results)
    print(f"wrote {path}")
    return 0


# --- closed-form property checks ----------------------------------------


def _random_linear_case(rng: Rng, d: int, margin_lo: float, margin_hi: float):
    """Random (w, b, x) with the point at a controlled distance from the plane."""
    w = rng.substream("w").normal(d)
    if float(np.linalg.norm(w)) == 0.0:  # pragma: no cover
        w = np.ones(d)
    b = float(0.5 * rng.substream("b").normal(1)[0])
    raw = rng.substream("x").normal(d)
    norm = float(np.linalg.norm(w))
    on_plane = raw - ((raw @ w + b) / norm**2) * w
    margin = margin_lo + (margin_hi - margin_lo) * float(rng.substream("m").uniform(1)[0])
    side = 1.0 if float(rng.substream("side").uniform(1)[0]) < 0.5 else -1.0
    x = on_plane + side * margin * w / norm
    return w, b, x, margin


def parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as e:
        raise ConfigError(f"grid must look like lo:hi:step, got {text!r}") from e
    if step <= 0 or hi <= lo:
        raise ConfigError(f"bad grid {text!r}")
    count = int(round((hi - lo) / step))
    return lo + step * np.arange(count + 1)


def theory_checks(
    sigma_grid: np.ndarray,
    n_cases: int = 20,
    n_points: int = 200,
    seed: int = 0,
    fixed_sigma: float = 0.3,
    agreement_target: float = 0.9973,
) -> list[dict]:
    """The three closed-form checks behind the selection rule.

    1. Prediction entropy rises strictly with the noise level.
    2. With the model equal to the ground truth, entropy falls strictly as
       the optimal level rises (rank correlation at or below -0.99).
    3. The conformity gap (current minus optimal level) ranks examples the
       same way entropy does (rank correlation at or above 0.99).
    """
    root = Rng(seed).substream("theory")
    checks = []

    violations = 0
    for case in range(n_cases):
        w, b, x, _ = _random_linear_case(root.substream("mono", case), 3, 0.05, 1.5)
        clf = LinearBinary(w, b)
        ents = [closed_form_entropy_linear(clf, x, s) for s in sigma_grid]
        violations += sum(1 for a, e in zip(ents, ents[1:]) if not e > a)
    checks.append(
        {
            "name": "entropy-rises-with-level",
            "passed": violations == 0,
            "detail": f"{violations} violations over {n_cases} cases x {len(sigma_grid)} levels",
        }
    )

    case_rng = root.substream("aligned")
    w = case_rng.substream("w").normal(4)
    b = float(0.5 * case_rng.substream("b").normal(1)[0])
    clf = LinearBinary(w, b)
    norm = clf.w_norm
    margins = 0.05 + 1.45 * case_rng.substream("margins").uniform(n_points)
    raws = case_rng.substream("points").normal((n_points, 4))
    sigma_opts = np.empty(n_points)
    entropies = np.empty(n_points)
    for j in range(n_points):
        on_plane = raws[j] - ((raws[j] @ w + b) / norm**2) * w
        x = on_plane + margins[j] * w / norm
        sigma_opts[j] = sigma_opt_linear(w, b, x, agreement_target)
        entropies[j] = closed_form_entropy_linear(clf, x, fixed_sigma)
    rho_opt = float(spearmanr(sigma_opts, entropies).statistic)
    by_opt = np.argsort(sigma_opts)
    strictly_down = all(
        entropies[a] > entropies[bidx]
        for a, bidx in zip(by_opt, by_opt[1:])
    )
    checks.append(
        {
            "name": "entropy-falls-with-optimal-level",
            "passed": rho_opt <= -0.99 and strictly_down,
            "detail": f"spearman={rho_opt:.6f}, strict posture={strictly_down}",
        }
    )

    gaps = fixed_sigma - sigma_opts
    rho_gap = float(spearmanr(gaps, entropies).statistic)
    checks.append(
        {
            "name": "conformity-gap-tracks-entropy",
            "passed": rho_gap >= 0.99,
            "detail": f"spearman={rho_gap:.6f} over {n_points} points",
        }
    )
    return checks


def misaligned_spot_check(seed: int = 0, n_points: int = 200, fixed_sigma: float = 0.3) -> dict:
    """Report-only: model differs from the ground truth (non-orthogonal)."""
    rng = Rng(seed).substream("misaligned")
    w_true = rng.substream("wtrue").normal(4)
    w_model = w_true + 0.7 * rng.substream("wmodel").normal(4)
    if abs(float(w_model @ w_true)) < 1e-9:  # pragma: no cover
        w_model = w_true.copy()
    clf = LinearBinary(w_model, 0.0)
    sigma_opts, entropies = [], []
    raws = rng.substream("points").normal((n_points, 4))
    for j in range(n_points):
        x = raws[j]
        if clf.decision(x) == 0.0 or float(w_true @ x) == 0.0:  # pragma: no cover
            continue
        sigma_opts.append(sigma_opt_linear(w_true, 0.0, x))
        entropies.append(closed_form_entropy_linear(clf, x, fixed_sigma))
    rho = float(spearmanr(sigma_opts, entropies).statistic)
    return {
        "name": "misaligned-spot-check",
        "passed": True,
        "detail": f"spearman={rho:.4f} (report only)",
    }


def cmd_theory(args) -> int:
    grid = parse_grid(args.sigma_grid)
    checks = theory_checks(grid, n_cases=args.cases, n_points=args.points, seed=args.seed)
    if args.misaligned:
        checks.append(misaligned_spot_check(seed=args.seed))
    failed = 0
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        failed += 0 if c["passed"] else 1
        print(f"{status} {c['name']}: {c['detail']}")
    return 1 if failed else 0


def cmd_serve(args) -> int:
    import threading

    import uvicorn

    ecfg = load_config(args.config, args.set)
    host, _, port = args.serve_addr.partition(":")
    store = TaskStore()
    app = create_app(store)
    server = uvicorn.Server(
        uvicorn.Config(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()

    seed = ecfg.seeds[0]
    cfg = replace(ecfg.train, seed=seed)
    train, _ = build_data(ecfg, seed)
    fallback = None
    if args.fallback_simulated:
        sim = replace(ecfg, oracle_kind="linear" if ecfg.n_classes == 2 else "concept")
        fallback = build_oracle(sim, cfg, seed)
    oracle = HumanOracle(
        store,
        cfg.ladder(),
        seed,
        timeout_secs=args.oracle_timeout_secs,
        fallback=fallback,
        image_shape=train.image_shape,
    )
    out_dir = args.out or ecfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        strategy = ecfg.strategies[0]
        metrics, qlog, clf, triplets = run_single(ecfg, strategy, seed, oracle=oracle)
        metrics_to_csv(metrics, os.path.join(out_dir, f"metrics_{strategy}_seed{seed}.csv"))
        save_state(
            os.path.join(out_dir, f"checkpoint_{strategy}_seed{seed}.json"),
            triplets, clf.to_dict(), qlog, metrics[-1].round_index,
        )
    finally:
        server.should_exit = True
        thread.join(timeout=5)
    print(f"wrote results to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqpl",
        description="Noise-robust training with actively queried perturbation levels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry")
        p.add_argument("--out", default=None, help="output directory")

    p_run = sub.add_parser("run", help="run the query loop for each strategy and seed")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare all selection strategies on paired seeds")
    common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_th = sub.add_parser("theory", help="closed-form property checks")
    p_th.add_argument("--sigma-grid", default="0.05:3.0:0.05")
    p_th.add_argument("--cases", type=int, default=20)
    p_th.add_argument("--points", type=int, default=200)
    p_th.add_argument("--seed", type=int, default=0)
    p_th.add_argument("--misaligned", action="store_true",
                      help="also report the model-vs-truth mismatch spot check")
    p_th.set_defaults(func=cmd_theory)

    p_srv = sub.add_parser("serve", help="annotation service + trainer, human oracle")
    common(p_srv)
    p_srv.add_argument("--serve-addr", default="127.0.0.1:8000")
    p_srv.add_argument("--human-oracle", action="store_true", default=True)
    p_srv.add_argument("--oracle-timeout-secs", type=float, default=None)
    p_srv.add_argument("--fallback-simulated", action="store_true",
                       help="answer with the simulated oracle when a query times out")
    p_srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
