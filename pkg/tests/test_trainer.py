import os

import numpy as np
import pytest

from aqpl.dataset import blob_boundary, gen_blobs, init_triplets, load_state
from aqpl.model import LinearBinary
from aqpl.numerics import DomainError, Rng
from aqpl.oracle import LinearOracle, UnidentifiableExampleError
from aqpl.perturb import corrupt_eval_set
from aqpl.trainer import (
    RoundMetrics,
    TrainConfig,
    evaluate,
    metrics_to_csv,
    run_aqpl,
    train_noise_fixed,
    train_noise_instancewise,
)


def small_setup(seed=0, n=120, sigma_init=0.23, **cfg_kwargs):
    cfg_kwargs.setdefault("arch", "mlp")
    cfg_kwargs.setdefault("hidden", 8)
    cfg_kwargs.setdefault("query_batch", 3)
    cfg_kwargs.setdefault("rounds", 2)
    cfg_kwargs.setdefault("pretrain_epochs", 5)
    cfg_kwargs.setdefault("epochs_per_round", 2)
    cfg_kwargs.setdefault("sigma_init", sigma_init)
    cfg = TrainConfig(seed=seed, **cfg_kwargs)
    train = gen_blobs(Rng(seed).substream("train-data"), n, 2, 2)
    test = gen_blobs(Rng(seed).substream("test-data"), n, 2, 2)
    corrupted = corrupt_eval_set(test, "gaussian", cfg.eval_severities, seed)
    return cfg, train, test, corrupted


class TestTrainingEquivalence:
    def test_constant_levels_reproduce_fixed_training_bit_exactly(self):
        cfg, train, _, _ = small_setup()
        fixed = train_noise_fixed(train, 0.23, cfg, Rng(5).substream("t"), epochs=10)
        triplets = init_triplets(train, 0.23)
        inst = train_noise_instancewise(triplets, cfg, Rng(5).substream("t"), epochs=10)
        assert np.array_equal(fixed.theta, inst.theta)

    def test_zero_level_equals_clean_training(self):
        cfg, train, _, _ = small_setup()
        noisy = train_noise_fixed(train, 0.0, cfg, Rng(6).substream("t"), epochs=4)
        triplets = init_triplets(train, 0.0)
        inst = train_noise_instancewise(triplets, cfg, Rng(6).substream("t"), epochs=4)
        assert np.array_equal(noisy.theta, inst.theta)

    def test_same_seed_reproducible(self):
        cfg, train, _, _ = small_setup()
        a = train_noise_fixed(train, 0.3, cfg, Rng(7).substream("t"), epochs=3)
        b = train_noise_fixed(train, 0.3, cfg, Rng(7).substream("t"), epochs=3)
        assert np.array_equal(a.theta, b.theta)

    def test_negative_sigma_rejected(self):
        cfg, train, _, _ = small_setup()
        with pytest.raises(DomainError):
            train_noise_fixed(train, -0.1, cfg, Rng(0))

    def test_uniform_family_trains_deterministically(self):
        cfg, train, _, _ = small_setup(noise_family="uniform")
        a = train_noise_fixed(train, 0.3, cfg, Rng(8).substream("t"), epochs=3)
        b = train_noise_fixed(train, 0.3, cfg, Rng(8).substream("t"), epochs=3)
        gauss = train_noise_fixed(
            train, 0.3, TrainConfig(seed=0, arch="mlp", hidden=8),
            Rng(8).substream("t"), epochs=3,
        )
        assert np.array_equal(a.theta, b.theta)
        assert not np.array_equal(a.theta, gauss.theta)


class TestTrainingQuality:
    def test_reaches_clean_accuracy_floor(self):
        cfg, train, test, _ = small_setup(n=1000, hidden=16)
        clf = train_noise_fixed(train, 0.23, cfg, Rng(1).substream("t"), epochs=30)
        acc = float(np.mean(clf.predict(test.x) == test.y))
        assert acc >= 0.95

    def test_huge_noise_on_everything_collapses_accuracy(self):
        cfg, train, test, _ = small_setup(n=400, perturbed_fraction=1.0)
        clf = train_noise_fixed(train, 50.0, cfg, Rng(2).substream("t"), epochs=20)
        acc = float(np.mean(clf.predict(test.x) == test.y))
        assert acc <= 0.75  # toward coin-flip once noise drowns the features


class TestEvaluate:
    def test_constant_classifier_scores_half(self):
        _, train, test, corrupted = small_setup(n=200)
        clf = LinearBinary(np.array([0.0, 1e-9]), 10.0)  # always class 1
        m = evaluate(clf, test, corrupted)
        assert m.clean_acc == 0.5

    def test_severity_zero_matches_clean(self):
        cfg, train, test, _ = small_setup(n=200)
        corrupted = corrupt_eval_set(test, "gaussian", [0.0, 0.23], 3)
        clf = LinearBinary(*blob_boundary(2))
        m = evaluate(clf, test, corrupted)
        assert m.corrupted_acc[0.0] == m.clean_acc

    def test_true_rule_matches_dataset_figures(self):
        _, train, test, corrupted = small_setup(n=500)
        clf = LinearBinary(*blob_boundary(2))
        m = evaluate(clf, test, corrupted)
        assert m.clean_acc == 1.0
        assert all(0.0 <= v <= 1.0 for v in m.corrupted_acc.values())


class TestRunAqpl:
    def _oracle(self, cfg):
        w, b = blob_boundary(2)
        return LinearOracle(w, b, cfg.agreement_target, cfg.ladder())

    def test_zero_rounds_returns_pretrained_metrics(self):
        cfg, train, test, corrupted = small_setup(rounds=0)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(0).substream("pre"),
                                epochs=cfg.pretrain_epochs)
        triplets = init_triplets(train, cfg.sigma_init)
        clf, metrics, qlog = run_aqpl(
            pre, triplets, self._oracle(cfg), "aqpl", cfg, test, corrupted,
            Rng(0).substream("loop"),
        )
        assert len(metrics) == 1
        assert metrics[0].queries == 0
        assert qlog == []
        assert np.array_equal(clf.theta, pre.theta)
        baseline = evaluate(pre, test, corrupted, 0, 0, triplets.mean_sigma())
        assert metrics[0] == baseline

    def test_one_round_logs_two_rows_per_side_unit(self):
        cfg, train, test, corrupted = small_setup(rounds=1, query_batch=1)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(0).substream("pre"),
                                epochs=cfg.pretrain_epochs)
        triplets = init_triplets(train, cfg.sigma_init)
        _, metrics, qlog = run_aqpl(
            pre, triplets, self._oracle(cfg), "aqpl", cfg, test, corrupted,
            Rng(0).substream("loop"),
        )
        assert len(qlog) == 2
        sides = {row["side"] for row in qlog}
        assert sides == {"excessive", "deficient"}
        assert metrics[-1].queries == 2

    @pytest.mark.parametrize("strategy", ["aqpl", "random", "clean_uncertainty", "noise_uncertainty"])
    def test_annotated_levels_match_oracle_exactly(self, strategy):
        cfg, train, test, corrupted = small_setup(rounds=2, query_batch=2)
        oracle = self._oracle(cfg)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(1).substream("pre"),
                                epochs=cfg.pretrain_epochs)
        triplets = init_triplets(train, cfg.sigma_init)
        run_aqpl(pre, triplets, oracle, strategy, cfg, test, corrupted, Rng(1).substream("loop"))
        annotated = [t for t in triplets.triplets if t.annotated]
        assert len(annotated) == 8
        for t in annotated:
            assert t.sigma == oracle.query(t.index, t.x, t.y, t.sigma, 0)
            assert len(t.sigma_history) == 1
        untouched = [t for t in triplets.triplets if not t.annotated]
        assert all(t.sigma == cfg.sigma_init for t in untouched)

    def test_unidentifiable_examples_fall_back_to_minimum(self):
        class NeverOracle:
            def query(self, index, x, y, current_sigma, round_index):
                raise UnidentifiableExampleError("nope")

        cfg, train, test, corrupted = small_setup(rounds=1, query_batch=1)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(2).substream("pre"),
                                epochs=cfg.pretrain_epochs)
        triplets = init_triplets(train, cfg.sigma_init)
        _, _, qlog = run_aqpl(
            pre, triplets, NeverOracle(), "aqpl", cfg, test, corrupted,
            Rng(2).substream("loop"),
        )
        assert all(row["sigma_after"] == cfg.sigma_min for row in qlog)
        assert all(row["note"] == "unidentifiable" for row in qlog)

    def test_determinism_end_to_end(self):
        results = []
        for _ in range(2):
            cfg, train, test, corrupted = small_setup(rounds=2)
            pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(3).substream("pre"),
                                    epochs=cfg.pretrain_epochs)
            triplets = init_triplets(train, cfg.sigma_init)
            clf, metrics, qlog = run_aqpl(
                pre, triplets, self._oracle(cfg), "aqpl", cfg, test, corrupted,
                Rng(3).substream("loop"),
            )
            results.append((clf.theta.copy(), metrics, qlog))
        assert np.array_equal(results[0][0], results[1][0])
        assert results[0][1] == results[1][1]
        assert results[0][2] == results[1][2]

    def test_checkpoints_written_per_round(self, tmp_path):
        cfg, train, test, corrupted = small_setup(rounds=2)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(4).substream("pre"),
                                epochs=cfg.pretrain_epochs)
        triplets = init_triplets(train, cfg.sigma_init)
        run_aqpl(pre, triplets, self._oracle(cfg), "aqpl", cfg, test, corrupted,
                 Rng(4).substream("loop"), checkpoint_dir=str(tmp_path))
        files = sorted(os.listdir(tmp_path))
        assert files == ["round_001.json", "round_002.json"]
        state = load_state(str(tmp_path / "round_002.json"))
        assert state.round_index == 2
        assert len(state.query_log) == 2 * cfg.query_batch * 2

    def test_pool_shrinks_gracefully(self):
        # 8 examples, 2 per side, 3 rounds: the last round has only 0 left
        cfg, train, test, corrupted = small_setup(n=8, rounds=3, query_batch=2)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(5).substream("pre"),
                                epochs=2)
        triplets = init_triplets(train, cfg.sigma_init)
        _, metrics, qlog = run_aqpl(
            pre, triplets, self._oracle(cfg), "aqpl", cfg, test, corrupted,
            Rng(5).substream("loop"),
        )
        assert len(qlog) == 8
        assert metrics[-1].queries == 8

    def test_queries_monotone_in_round(self):
        cfg, train, test, corrupted = small_setup(rounds=3)
        pre = train_noise_fixed(train, cfg.sigma_init, cfg, Rng(6).substream("pre"),
                                epochs=2)
        triplets = init_triplets(train, cfg.sigma_init)
        _, metrics, _ = run_aqpl(
            pre, triplets, self._oracle(cfg), "random", cfg, test, corrupted,
            Rng(6).substream("loop"),
        )
        qs = [m.queries for m in metrics]
        assert qs == sorted(qs)
        assert qs == [2 * cfg.query_batch * r for r in range(len(metrics))]


class TestMetricsCsv:
    def test_schema_and_determinism(self, tmp_path):
        metrics = [
            RoundMetrics(0, 0, 0.9, {0.1: 0.8, 0.23: 0.7}, 0.75, 0.23),
            RoundMetrics(1, 20, 0.91, {0.1: 0.81, 0.23: 0.72}, 0.765, 0.21),
        ]
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        metrics_to_csv(metrics, str(p1))
        metrics_to_csv(metrics, str(p2))
        text = p1.read_text()
        assert text == p2.read_text()
        lines = text.strip().splitlines()
        assert lines[0] == (
            "round,queries,clean_acc,corrupted_acc_mean,"
            "corrupted_acc@0.1,corrupted_acc@0.23,mean_sigma"
        )
        assert len(lines) == 3
        assert lines[1].startswith("0,0,0.9,0.75,")
