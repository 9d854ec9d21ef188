"""
What makes a good anchor set?
=============================

Analysis-only selectors that peek at the exact scores. Hiding the true
top items from the anchors hurts; mixing some random items into a greedy
anchor set helps the estimate away from the very top.
"""

import numpy as np

from adacur import exact_topk, make_benchmark_corpus, oracle_search, topk_recall

corpus = make_benchmark_corpus("clustered", {"num_test_queries": 100}, seed=2)
idx, s = corpus.index(), corpus.scores


def mean_recall(k_m, eps, k):
    return np.mean([topk_recall(oracle_search(q, idx, corpus.scorer, s[q], "topk", k_m, eps,
                                              50, 100, k).top_ids, exact_topk(s[q], k))
                    for q in corpus.test_queries])


for k in (1, 10):
    print(f"k={k:3d}: greedy anchors {mean_recall(0, 0.0, k):.3f}, "
          f"top-{k} hidden {mean_recall(k, 0.0, k):.3f}")
for eps in (0.0, 0.25, 0.5, 0.75):
    print(f"eps={eps:.2f}: recall@100 {mean_recall(0, eps, 100):.3f}")
