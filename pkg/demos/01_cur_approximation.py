"""
Approximating a score row from a few of its entries
===================================================

Score a handful of "anchor" items exactly, then extend those scores to
every item through the anchor-query matrix.
"""

import numpy as np

from adacur import AnchorState, CurIndex, SyntheticCorpusSpec, approximate_all_scores, make_synthetic

# A noiseless rank-8 corpus: 64 anchor queries, 16 test queries, 2000 items.
spec = SyntheticCorpusSpec(num_items=2000, num_queries=64, latent_rank=8, num_test_queries=16)
scorer, scores = make_synthetic(spec)
idx = CurIndex(scores[:64], range(64), range(2000))

# Score 12 random items for one test query.
q = scorer.test_queries[0]
rng = np.random.default_rng(0)
anchor_ids = rng.choice(2000, 12, replace=False)
anchors = AnchorState()
anchors.add(anchor_ids, scorer.score_batch(q, anchor_ids), round_no=1)

# 12 columns of a rank-8 matrix span its column space, so the estimate is exact.
approx = approximate_all_scores(anchors, idx)
print("max error, 12 anchors:", np.abs(approx - scores[q]).max())

# With fewer anchors than the rank the estimate is only a projection.
small = AnchorState()
small.add(anchor_ids[:4], scorer.score_batch(q, anchor_ids[:4]), round_no=1)
approx4 = approximate_all_scores(small, idx)
print("max error, 4 anchors: ", np.abs(approx4 - scores[q]).max())
print("error on the anchors: ", np.abs(approx4[anchor_ids[:4]] - small.exact_scores).max())
