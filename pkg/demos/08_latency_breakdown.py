"""
Where the time goes
===================

With a slow scorer (7 ms per pair) the linear algebra is noise. More
rounds mean more pseudo-inverses, so the overhead grows with them.
"""

from adacur import MatrixScorer, SearchConfig, adacur_search, make_benchmark_corpus, timing_breakdown

corpus = make_benchmark_corpus("noisy-lowrank", {"num_items": 2000, "num_test_queries": 1}, seed=0)
idx = corpus.index()
q = corpus.test_queries[0]

for latency in (0.0, 7.0):
    scorer = MatrixScorer(corpus.scores, latency_ms=latency)
    for rounds in (5, 100):
        tb = timing_breakdown([adacur_search(q, idx, scorer, SearchConfig(500, rounds))])
        t = tb["timing"]
        print(f"latency {latency:3.0f} ms, {rounds:3d} rounds: total {t.total_ms:7.1f} ms, "
              f"scorer {100 * tb['fractions']['scorer_ms']:5.1f}%, "
              f"pinv+matmul {100 * tb['overhead']:5.1f}%")
