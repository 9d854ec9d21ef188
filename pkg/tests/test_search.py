import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacur.errors import ConfigError, ValidationError
from adacur.index import CurIndex
from adacur.metrics import exact_topk, topk_recall
from adacur.scorer import (CallLedger, ExactRetriever, MatrixScorer, RandomRetriever,
                           SyntheticCorpusSpec, make_synthetic, query_rng, uniform_sample)
from adacur.search import (AnchorState, SearchConfig, adacur_search, anncur_search,
                           approximate_all_scores, budget_split_sweep, oracle_search,
                           oracle_select_anchors, rerank_retrieve, sample_items, split_grid)


def anchors_of(ids, scores):
    a = AnchorState()
    a.add(ids, scores, 1)
    return a


class TestSampleItems:
    def test_topk_example(self):
        got = sample_items("topk", 2, {0}, np.array([9.0, 5, 7, 1]), np.random.default_rng(0))
        assert got.tolist() == [2, 1]

    def test_short_count(self):
        mask = np.ones(5, dtype=bool)
        mask[3] = False
        for strat in ("topk", "softmax", "random"):
            got = sample_items(strat, 3, mask, np.zeros(5), np.random.default_rng(0))
            assert got.tolist() == [3]

    def test_softmax_frequencies(self):
        scores = np.log([1.0, 2.0, 3.0])
        rng = np.random.default_rng(12345)
        counts = np.zeros(3)
        n = 100_000
        for _ in range(n):
            counts[sample_items("softmax", 1, set(), scores, rng)[0]] += 1
        np.testing.assert_allclose(counts / n, [1 / 6, 2 / 6, 3 / 6], atol=0.01)

    def test_softmax_second_draw_renormalizes(self):
        # P(second = 2 | first = 0) = 3/5 after renormalizing over {1, 2}.
        scores = np.log([1.0, 2.0, 3.0])
        rng = np.random.default_rng(1)
        hits = total = 0
        for _ in range(60_000):
            a, b = sample_items("softmax", 2, set(), scores, rng)
            if a == 0:
                total += 1
                hits += b == 2
        assert abs(hits / total - 0.6) < 0.02

    def test_softmax_zero_probability_items_come_last(self):
        scores = np.array([0.0, -2000.0, 1.0, -3000.0])
        got = sample_items("softmax", 3, set(), scores, np.random.default_rng(0))
        assert set(got[:2].tolist()) == {0, 2}
        assert got[2] in (1, 3)

    def test_random_is_uniform_over_unmasked(self):
        rng = np.random.default_rng(3)
        counts = np.zeros(6)
        for _ in range(6000):
            counts[sample_items("random", 1, {0, 1}, np.arange(6.0), rng)] += 1
        assert counts[:2].sum() == 0
        np.testing.assert_allclose(counts[2:] / 6000, 0.25, atol=0.03)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=40), st.integers(1, 10),
           st.sampled_from(["topk", "softmax", "random"]), st.integers(0, 2**16))
    def test_never_returns_masked_or_duplicates(self, scores, k_s, strat, seed):
        s = np.array(scores)
        mask = np.random.default_rng(seed).random(s.size) < 0.4
        got = sample_items(strat, k_s, mask, s, np.random.default_rng(seed))
        assert len(set(got.tolist())) == got.size
        assert not mask[got].any()
        assert got.size == min(k_s, int((~mask).sum()))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=30), st.integers(1, 8))
    def test_topk_matches_masked_softmax_selection(self, scores, k_s):
        s = np.array(scores)
        mask = np.zeros(s.size, dtype=bool)
        mask[::3] = True
        e = np.exp(s - s.max())
        p = e / e.sum()
        p[mask] = 0.0
        free = int((~mask).sum())
        oracle = sorted(range(s.size), key=lambda i: (-p[i], i))[:min(k_s, free)]
        got = sample_items("topk", k_s, mask, s, np.random.default_rng(0))
        assert sorted(got.tolist()) == sorted(oracle) or np.allclose(
            np.sort(p[got]), np.sort(p[oracle]))


class TestApproximateAllScores:
    def test_all_anchors_reproduce_row(self):
        rng = np.random.default_rng(0)
        r = rng.standard_normal((6, 10))
        idx = CurIndex(r, range(6), range(10))
        row = rng.standard_normal(6) @ r
        approx = approximate_all_scores(anchors_of(range(10), row), idx)
        assert np.abs(approx - row).max() < 1e-8

    def test_single_anchor_closed_form(self):
        rng = np.random.default_rng(1)
        r = rng.standard_normal((4, 9))
        idx = CurIndex(r, range(4), range(9))
        c, s = r[:, 5], 1.7
        expected = (s / (c @ c)) * (c @ r)
        np.testing.assert_allclose(approximate_all_scores(anchors_of([5], [s]), idx), expected,
                                   atol=1e-12)

    def test_anchor_exactness_full_column_rank(self):
        rng = np.random.default_rng(2)
        r = rng.standard_normal((20, 50))
        idx = CurIndex(r, range(20), range(50))
        ids = [3, 17, 8, 40, 22]
        c = rng.standard_normal(5)
        approx = approximate_all_scores(anchors_of(ids, c), idx)
        assert np.abs(approx[ids] - c).max() < 1e-8

    def test_empty_anchor_set(self, small_index):
        idx, _ = small_index
        with pytest.raises(ValidationError):
            approximate_all_scores(AnchorState(), idx)

    def test_anchor_lookup_by_id_not_position(self):
        r = np.random.default_rng(4).standard_normal((3, 5))
        ids = [50, 40, 30, 20, 10]
        idx = CurIndex(r, range(3), ids)
        a = approximate_all_scores(anchors_of([30], [1.0]), idx)
        c = r[:, 2]
        np.testing.assert_allclose(a, (c @ r) / (c @ c))


class TestSearchConfig:
    def test_round_sizes(self):
        assert SearchConfig(100, 5).round_sizes() == [20] * 5
        assert SearchConfig(103, 5).round_sizes() == [23, 20, 20, 20, 20]

    @pytest.mark.parametrize("kw", [dict(budget=4, rounds=5), dict(budget=10, rounds=0),
                                    dict(budget=10, k=11), dict(budget=10, strategy="x"),
                                    dict(budget=10, candidate_pool=5), dict(budget=10, init=3)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SearchConfig(**kw).validate()


class TestAdacur:
    def test_exhaustive_budget(self, small_index, small_matrix):
        idx, scorer = small_index
        q = 5
        res = adacur_search(q, idx, scorer, SearchConfig(20, 4, k=5))
        assert sorted(res.scored_ids) == list(range(20))
        assert res.top_ids == exact_topk(small_matrix[q], 5)
        assert res.calls_used == 20

    def test_single_round_is_random_rerank(self, lowrank):
        scorer, m, idx = lowrank
        for q in (40, 45):
            a = adacur_search(q, idx, scorer, SearchConfig(30, 1, k=5, seed=7))
            b = rerank_retrieve(q, scorer, RandomRetriever(300, seed=7), 30, 5)
            assert a.scored_ids == b.scored_ids
            assert a.top_k == b.top_k

    def test_exact_recovery_after_spanning_round(self, lowrank):
        scorer, m, idx = lowrank
        hits = 0
        for seed in range(10):
            q = 40 + seed
            res = adacur_search(q, idx, scorer, SearchConfig(16, 2, k=8, seed=seed))
            first = [i for i, r in zip(res.anchors.anchor_ids, res.anchors.rounds) if r == 1]
            if np.linalg.matrix_rank(m[:40][:, first]) < 4:
                continue
            hits += 1
            assert np.abs(res.approx_scores - m[q]).max() < 1e-6
            assert topk_recall(res.top_ids, exact_topk(m[q], 8)) == 1.0
        assert hits >= 5

    def test_round_provenance(self, lowrank):
        scorer, _, idx = lowrank
        res = adacur_search(41, idx, scorer, SearchConfig(100, 5, k=3))
        rounds = res.anchors.rounds
        assert rounds == sorted(rounds)
        assert [rounds.count(j) for j in range(1, 6)] == [20] * 5
        assert len(set(res.anchors.anchor_ids)) == 100

    def test_top_k_sorted_and_subset(self, lowrank):
        scorer, m, idx = lowrank
        res = adacur_search(42, idx, scorer, SearchConfig(50, 5, k=10))
        scores = [s for _, s in res.top_k]
        assert scores == sorted(scores, reverse=True)
        assert set(res.top_ids) <= set(res.scored_ids)
        for i, s in res.top_k:
            assert s == m[42, i]

    def test_deterministic(self, lowrank):
        scorer, _, idx = lowrank
        cfg = SearchConfig(60, 3, "softmax", k=4, seed=11)
        a = adacur_search(43, idx, scorer, cfg)
        b = adacur_search(43, idx, scorer, cfg)
        assert a.anchors.anchor_ids == b.anchors.anchor_ids
        assert a.top_k == b.top_k
        np.testing.assert_array_equal(a.approx_scores, b.approx_scores)

    def test_pool_smaller_than_budget_stops_early(self, lowrank):
        scorer, m, idx = lowrank
        ret = ExactRetriever(m)
        cfg = SearchConfig(50, 5, init=ret, candidate_pool=30, k=3)
        res = adacur_search(44, idx, scorer, cfg)
        assert res.calls_used == 30
        assert set(res.scored_ids) == set(ret.retrieve(44, 30))
        assert np.isnan(res.approx_scores).sum() == 270

    def test_retriever_init_uses_top_items(self, lowrank):
        scorer, m, idx = lowrank
        ret = ExactRetriever(m)
        res = adacur_search(45, idx, scorer, SearchConfig(20, 2, init=ret, k=1))
        first = [i for i, r in zip(res.anchors.anchor_ids, res.anchors.rounds) if r == 1]
        assert first == ret.retrieve(45, 10)

    def test_shared_ledger_cache(self, lowrank):
        scorer, _, idx = lowrank
        ledger = CallLedger()
        cfg = SearchConfig(40, 4)
        adacur_search(46, idx, scorer, cfg, ledger)
        res = adacur_search(46, idx, scorer, cfg, ledger)
        assert res.calls_used == 0
        assert ledger.total == 40

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 400), st.integers(1, 12), st.sampled_from(["topk", "softmax", "random"]),
           st.one_of(st.none(), st.integers(1, 300)), st.integers(0, 1000))
    def test_budget_invariant(self, lowrank, budget, rounds, strat, pool, seed):
        scorer, m, idx = lowrank
        rounds = min(rounds, budget)
        kw = dict(candidate_pool=pool, pool_retriever=ExactRetriever(m)) if pool else {}
        cfg = SearchConfig(budget, rounds, strat, seed=seed, **kw)
        ledger = CallLedger()
        res = adacur_search(40 + seed % 10, idx, scorer, cfg, ledger)
        reachable = min(pool or 300, 300)
        assert ledger.total == res.calls_used == min(budget, reachable)


class TestAnncur:
    def test_calls_exact(self, lowrank):
        scorer, _, idx = lowrank
        res = anncur_search(40, idx, scorer, 30, 100, k=5)
        assert res.calls_used == 100
        assert len(set(res.scored_ids)) == 100

    def test_exhaustive_any_split(self, small_index, small_matrix):
        idx, scorer = small_index
        for ki in (1, 7, 19):
            res = anncur_search(4, idx, scorer, ki, 20, k=3)
            assert res.top_ids == exact_topk(small_matrix[4], 3)

    def test_exact_on_spanning_anchors(self, lowrank):
        scorer, m, idx = lowrank
        res = anncur_search(47, idx, scorer, 10, 30, k=20, seed=3)
        anchors = res.anchors.anchor_ids[:10]
        assert np.linalg.matrix_rank(m[:40][:, anchors]) == 4
        assert np.abs(res.approx_scores - m[47]).max() < 1e-6
        assert topk_recall(res.top_ids, exact_topk(m[47], 20)) == 1.0

    def test_bad_split(self, small_index):
        idx, scorer = small_index
        with pytest.raises(ConfigError):
            anncur_search(0, idx, scorer, 10, 10)

    def test_split_grid(self):
        assert split_grid(100) == [10, 20, 30, 40, 50, 60, 70, 80, 90]
        with pytest.raises(ConfigError):
            split_grid(9)

    def test_sweep_exhaustive_ties_pick_smallest(self):
        m = np.random.default_rng(5).standard_normal((8, 20))
        idx = CurIndex(m[:4], range(4), range(20))
        sw = budget_split_sweep([4, 5, 6], idx, MatrixScorer(m), 20, 1, m)
        assert sw.splits == [2, 4, 6, 8, 10, 12, 14, 16, 18]
        assert all(r == 1.0 for r in sw.mean_recall.values())
        assert sw.best_k_i == 2

    def test_sweep_is_brute_force_and_reproducible(self, lowrank):
        scorer, m, idx = lowrank
        qs = list(range(40, 50))
        a = budget_split_sweep(qs, idx, scorer, 20, 3, m)
        b = budget_split_sweep(qs, idx, scorer, 20, 3, m)
        assert a.mean_recall == b.mean_recall
        brute = {ki: np.mean([topk_recall(anncur_search(q, idx, scorer, ki, 20, k=3).top_ids,
                                          exact_topk(m[q], 3)) for q in qs]) for ki in a.splits}
        assert a.mean_recall == pytest.approx(brute)
        assert a.best_k_i == max(brute, key=lambda ki: (brute[ki], -ki))


class TestOracle:
    scores = np.array([9.0, 8, 7, 1, 0])

    def test_greedy(self):
        got = oracle_select_anchors("topk", 0, 0.0, 3, self.scores, np.random.default_rng(0))
        assert got.tolist() == [0, 1, 2]

    def test_masked_greedy(self):
        got = oracle_select_anchors("topk", 2, 0.0, 2, self.scores, np.random.default_rng(0))
        assert got.tolist() == [2, 3]

    def test_eps_rounding_counts(self):
        s = np.arange(200.0)[::-1]
        got = oracle_select_anchors("topk", 0, 0.75, 50, s, np.random.default_rng(0))
        assert got[:12].tolist() == list(range(12))
        assert len(set(got.tolist())) == 50
        assert not set(got[12:].tolist()) & set(range(12))
        assert math.floor((1 - 0.75) * 50) == 12

    def test_softmax_mode_excludes_mask(self):
        s = np.linspace(5, 0, 30)
        for seed in range(20):
            got = oracle_select_anchors("softmax", 5, 0.2, 10, s, np.random.default_rng(seed))
            assert len(set(got.tolist())) == 10
            assert not set(got.tolist()) & set(range(5))

    @pytest.mark.parametrize("args", [("topk", 4, 0.0, 2), ("topk", 0, 1.5, 2), ("bad", 0, 0, 1),
                                      ("topk", 0, 0.0, 0)])
    def test_infeasible(self, args):
        with pytest.raises(ValidationError):
            oracle_select_anchors(*args, self.scores, np.random.default_rng(0))

    def test_oracle_search_flagged_and_budgeted(self, lowrank):
        scorer, m, idx = lowrank
        res = oracle_search(40, idx, scorer, m[40], "topk", 0, 0.0, 10, 25, k=1)
        assert res.oracle and res.method == "oracle_topk"
        assert res.calls_used == 25
        assert res.top_ids == exact_topk(m[40], 1)


class TestRerank:
    def test_perfect_and_adversarial(self, lowrank):
        scorer, m, _ = lowrank
        for q in (40, 41):
            good = rerank_retrieve(q, scorer, ExactRetriever(m), 20, 5)
            bad = rerank_retrieve(q, scorer, ExactRetriever(m, reverse=True), 20, 5)
            assert topk_recall(good.top_ids, exact_topk(m[q], 5)) == 1.0
            assert topk_recall(bad.top_ids, exact_topk(m[q], 5)) == 0.0

    def test_uniform_random_expected_recall(self):
        n, budget, trials = 200, 30, 1000
        m = np.random.default_rng(0).standard_normal((1, n))
        scorer = MatrixScorer(m)
        truth = exact_topk(m[0], 1)
        hits = sum(topk_recall(rerank_retrieve(0, scorer, RandomRetriever(n, seed=s), budget,
                                               1).top_ids, truth) for s in range(trials))
        p = budget / n
        sigma = math.sqrt(trials * p * (1 - p))
        assert abs(hits - trials * p) < 3 * sigma

    def test_k_over_budget(self, lowrank):
        scorer, m, _ = lowrank
        with pytest.raises(ConfigError):
            rerank_retrieve(40, scorer, ExactRetriever(m), 3, 4)


def test_uniform_sample_shared_stream():
    rng_a, rng_b = query_rng(3, 9), query_rng(3, 9)
    assert uniform_sample(rng_a, np.arange(50), 7).tolist() == \
        RandomRetriever(50, seed=3).retrieve(9, 7)
    assert uniform_sample(rng_b, np.arange(50), 7).tolist() == \
        uniform_sample(query_rng(3, 9), np.arange(50), 7).tolist()
