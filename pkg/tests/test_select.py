import numpy as np
import pytest

from aqpl.conformity import ConformityReport, conformity_reports
from aqpl.dataset import gen_blobs, init_triplets
from aqpl.model import init_classifier
from aqpl.numerics import Rng
from aqpl.select import (
    PoolExhaustedError,
    select_aqpl,
    select_clean_uncertainty,
    select_noise_uncertainty,
    select_random,
)


def reports_from(entropies, sigma=0.23):
    return [ConformityReport(i, (1, 1), h, sigma) for i, h in enumerate(entropies)]


class TestSelectAqpl:
    def test_extremes(self):
        sel = select_aqpl(reports_from([0.1, 2.0, 0.5, 0.01]), 1, range(4))
        assert sel.excessive == (1,)
        assert sel.deficient == (3,)

    def test_all_equal_tie_breaks_by_index(self):
        sel = select_aqpl(reports_from([0.3, 0.3, 0.3, 0.3]), 1, range(4))
        assert sel.excessive == (0,)
        assert sel.deficient == (1,)

    def test_full_partition_when_pool_is_tight(self):
        sel = select_aqpl(reports_from([0.4, 0.1, 0.9, 0.6]), 2, range(4))
        assert sorted(sel.excessive + sel.deficient) == [0, 1, 2, 3]
        assert set(sel.excessive) == {2, 3}
        assert set(sel.deficient) == {0, 1}

    def test_sides_disjoint(self):
        rng = Rng(0).substream("h")
        ents = rng.uniform(40).tolist()
        sel = select_aqpl(reports_from(ents), 10, range(40))
        assert not set(sel.excessive) & set(sel.deficient)

    def test_order_invariance(self):
        reports = reports_from([0.5, 0.2, 0.8, 0.3, 0.9, 0.1])
        a = select_aqpl(reports, 2, range(6))
        b = select_aqpl(list(reversed(reports)), 2, range(6))
        assert a.excessive == b.excessive
        assert a.deficient == b.deficient

    def test_respects_eligible(self):
        sel = select_aqpl(reports_from([0.9, 0.8, 0.7, 0.1]), 1, [1, 2])
        assert sel.excessive == (1,)
        assert sel.deficient == (2,)

    def test_pool_exhausted(self):
        with pytest.raises(PoolExhaustedError):
            select_aqpl(reports_from([0.1, 0.2, 0.3]), 2, range(3))


class TestSelectRandom:
    def test_sizes_and_disjoint(self):
        sel = select_random(range(20), 8, Rng(1).substream("s"))
        assert len(sel.excessive) == 4 and len(sel.deficient) == 4
        picked = sel.excessive + sel.deficient
        assert len(set(picked)) == 8
        assert set(picked) <= set(range(20))

    def test_deterministic_under_seed(self):
        a = select_random(range(20), 6, Rng(2).substream("s"))
        b = select_random(range(20), 6, Rng(2).substream("s"))
        assert a == b

    def test_pool_exhausted(self):
        with pytest.raises(PoolExhaustedError):
            select_random(range(3), 4, Rng(0).substream("s"))


class TestSelectCleanUncertainty:
    def _setup(self):
        data = gen_blobs(Rng(3), 30, 2, 2, margin_range=(0.05, 2.0))
        clf = init_classifier("linear", 2, 2, Rng(4))
        return data, clf

    def test_picks_least_confident(self):
        data, clf = self._setup()
        sel = select_clean_uncertainty(clf, data, range(30), 6)
        from aqpl.conformity import entropy_of

        ents = [entropy_of(clf.forward(data.x[i])) for i in range(30)]
        expected = sorted(range(30), key=lambda i: (-ents[i], i))[:6]
        assert sorted(sel.excessive + sel.deficient) == sorted(expected)

    def test_uniform_model_falls_back_to_index_order(self):
        from aqpl.model import Classifier

        data, _ = self._setup()
        clf = Classifier("linear", 2, 2, 0, np.zeros(6))
        sel = select_clean_uncertainty(clf, data, range(30), 4)
        assert sorted(sel.excessive + sel.deficient) == [0, 1, 2, 3]

    def test_ignores_levels_entirely(self):
        data, clf = self._setup()
        a = select_clean_uncertainty(clf, data, range(30), 6)
        b = select_clean_uncertainty(clf, data, range(30), 6)
        assert a == b


class TestSelectNoiseUncertainty:
    def _setup(self, sigma):
        data = gen_blobs(Rng(5), 24, 2, 2)
        triplets = init_triplets(data, sigma)
        clf = init_classifier("mlp", 2, 2, Rng(6), hidden=4)
        return data, triplets, clf

    def test_zero_levels_reduce_to_clean_ranking(self):
        data, triplets, clf = self._setup(0.0)
        noisy = select_noise_uncertainty(clf, triplets, range(24), 6, 16, Rng(7).substream("n"))
        clean = select_clean_uncertainty(clf, data, range(24), 6)
        assert sorted(noisy.all_indices) == sorted(clean.all_indices)

    def test_deterministic_under_seed(self):
        _, triplets, clf = self._setup(0.3)
        a = select_noise_uncertainty(clf, triplets, range(24), 6, 8, Rng(8).substream("n"))
        b = select_noise_uncertainty(clf, triplets, range(24), 6, 8, Rng(8).substream("n"))
        assert a == b

    def test_single_draw_allowed(self):
        _, triplets, clf = self._setup(0.3)
        sel = select_noise_uncertainty(clf, triplets, range(24), 4, 1, Rng(9).substream("n"))
        assert len(sel.all_indices) == 4


class TestStrategyContract:
    def test_selection_counts_and_membership(self):
        data = gen_blobs(Rng(10), 40, 2, 2)
        triplets = init_triplets(data, 0.23)
        clf = init_classifier("linear", 2, 2, Rng(11))
        eligible = list(range(0, 40, 2))
        reports = conformity_reports(clf, triplets, 10, Rng(12).substream("c"), eligible)
        for sel in (
            select_aqpl(reports, 5, eligible),
            select_random(eligible, 10, Rng(13).substream("s")),
            select_clean_uncertainty(clf, data, eligible, 10),
            select_noise_uncertainty(clf, triplets, eligible, 10, 5, Rng(14).substream("n")),
        ):
            assert len(sel.excessive) + len(sel.deficient) == 10
            assert set(sel.all_indices) <= set(eligible)
            assert len(set(sel.all_indices)) == 10
