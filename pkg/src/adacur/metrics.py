"""Retrieval quality metrics."""

import numpy as np

from .errors import ValidationError
from .linalg import top_k_indices


def topk_recall(retrieved, exact_topk):
    """Fraction of ``exact_topk`` present in ``retrieved``."""
    exact = list(exact_topk)
    if not exact:
        raise ValidationError("exact_topk must be nonempty")
    if len(set(exact)) != len(exact):
        raise ValidationError("exact_topk has duplicates")
    got = set(int(i) for i in retrieved)
    return sum(1 for i in exact if int(i) in got) / len(exact)


def exact_topk(full_scores, k, item_ids=None):
    """Top-``k`` items by exact score, ties broken by ascending id.

    ``item_ids`` maps positions in ``full_scores`` to ids; when omitted the
    positions are the ids.
    """
    s = np.asarray(full_scores, dtype=np.float64)
    if item_ids is None:
        return top_k_indices(s, k).tolist()
    ids = np.asarray(item_ids, dtype=np.int64)
    order = np.lexsort((ids, -s))
    return ids[order[:k]].tolist()


def approximation_error(approx, exact, subset=None):
    """Mean absolute difference between approximate and exact scores.

    ``subset`` restricts the mean to the given positions.
    """
    a = np.asarray(approx, dtype=np.float64)
    e = np.asarray(exact, dtype=np.float64)
    if a.shape != e.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {e.shape}")
    if subset is not None:
        idx = np.fromiter((int(i) for i in subset), dtype=np.int64)
        if idx.size == 0:
            raise ValidationError("empty subset")
        a, e = a[idx], e[idx]
    return float(np.mean(np.abs(a - e)))
