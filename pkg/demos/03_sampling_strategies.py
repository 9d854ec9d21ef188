"""
Choosing the next items to score
================================

Three ways to pick k_s unscored items from the current estimate.
"""

import numpy as np

from adacur import sample_items

scores = np.array([9.0, 5.0, 7.0, 1.0])
rng = np.random.default_rng(0)

# Greedy: item 0 is already scored (masked), so the two best remaining are 2 and 1.
print("topk   :", sample_items("topk", 2, {0}, scores, rng))
print("random :", sample_items("random", 2, {0}, scores, rng))
print("softmax:", sample_items("softmax", 2, {0}, scores, rng))

# Softmax draws follow exp(score): with scores ln 1, ln 2, ln 3 the first draw
# lands on each item with probability 1/6, 2/6 and 3/6.
logs = np.log([1.0, 2.0, 3.0])
counts = np.bincount([sample_items("softmax", 1, set(), logs, rng)[0] for _ in range(20000)],
                     minlength=3)
print("empirical:", counts / counts.sum(), " expected:", np.array([1, 2, 3]) / 6)

# Asking for more items than remain returns what is left.
print("short pool:", sample_items("topk", 3, {0, 1, 2}, scores, rng))
