"""k-NN search under a budget of exact scorer calls.

All methods here answer one test query at a time against an immutable
:class:`~adacur.index.CurIndex`. Exact scores are obtained only through
:func:`~adacur.scorer.score_batch`, so every call is counted in a
per-search :class:`~adacur.scorer.CallLedger`.

The approximate score of a test query against every item is the CUR
estimate ``C_test @ pinv(R_anc[:, anchors]) @ R_anc``, where ``C_test`` are
the exact scores of the anchor items.
"""

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .linalg import DEFAULT_RCOND, pseudo_inverse, softmax, top_k_indices
from .metrics import exact_topk, topk_recall
from .scorer import (CallLedger, FirstStageRetriever, query_rng, score_batch,
                     uniform_sample)

STRATEGIES = ("topk", "softmax", "random")
ORACLE_MODES = ("topk", "softmax")


@dataclass
class SearchConfig:
    """Parameters of one :func:`adacur_search` invocation.

    ``init`` is ``"random"`` or a :class:`FirstStageRetriever` supplying the
    first round. ``candidate_pool`` restricts the whole search to the top
    ``candidate_pool`` items of ``pool_retriever`` (defaulting to ``init``
    when that is a retriever).
    """

    budget: int
    rounds: int = 5
    strategy: str = "topk"
    init: object = "random"
    k: int = 1
    candidate_pool: int = None
    pool_retriever: FirstStageRetriever = None
    seed: int = 0
    rcond: float = DEFAULT_RCOND

    def validate(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.budget < self.rounds:
            raise ConfigError(f"budget ({self.budget}) must be >= rounds ({self.rounds})")
        if not 1 <= self.k <= self.budget:
            raise ConfigError(f"k must be in [1, budget], got {self.k}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.init != "random" and not isinstance(self.init, FirstStageRetriever):
            raise ConfigError("init must be 'random' or a FirstStageRetriever")
        if self.candidate_pool is not None:
            if self.candidate_pool < 1:
                raise ConfigError("candidate_pool must be >= 1")
            if self.pool_source() is None:
                raise ConfigError("candidate_pool needs a pool_retriever or a retriever init")
        if not self.rcond > 0:
            raise ConfigError("rcond must be positive")
        return self

    def pool_source(self):
        if self.pool_retriever is not None:
            return self.pool_retriever
        return self.init if isinstance(self.init, FirstStageRetriever) else None

    def round_sizes(self):
        """Items scored per round; the remainder of ``budget / rounds`` goes to round 1."""
        ks, rem = divmod(self.budget, self.rounds)
        return [ks + rem] + [ks] * (self.rounds - 1)


@dataclass
class TimingBreakdown:
    scorer_ms: float = 0.0
    pinv_ms: float = 0.0
    matmul_ms: float = 0.0
    other_ms: float = 0.0

    @property
    def total_ms(self):
        return self.scorer_ms + self.pinv_ms + self.matmul_ms + self.other_ms

    @property
    def overhead_ms(self):
        return self.pinv_ms + self.matmul_ms

    def __add__(self, other):
        return TimingBreakdown(self.scorer_ms + other.scorer_ms, self.pinv_ms + other.pinv_ms,
                               self.matmul_ms + other.matmul_ms, self.other_ms + other.other_ms)


class _Clock:
    def __init__(self):
        self.timing = TimingBreakdown()
        self._t0 = time.perf_counter()

    @contextmanager
    def phase(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            attr = name + "_ms"
            setattr(self.timing, attr, getattr(self.timing, attr) + 1e3 * (time.perf_counter() - t))

    def finish(self):
        total = 1e3 * (time.perf_counter() - self._t0)
        self.timing.other_ms = max(0.0, total - self.timing.scorer_ms
                                   - self.timing.pinv_ms - self.timing.matmul_ms)
        return self.timing


@dataclass
class AnchorState:
    """Anchor items scored so far, their exact scores and the round that added each."""

    anchor_ids: list = field(default_factory=list)
    exact_scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    rounds: list = field(default_factory=list)

    def add(self, ids, scores, round_no):
        ids = [int(i) for i in ids]
        if set(ids) & set(self.anchor_ids) or len(set(ids)) != len(ids):
            raise ValidationError("anchor ids must be unique")
        self.anchor_ids.extend(ids)
        self.exact_scores = np.concatenate([self.exact_scores, np.asarray(scores, dtype=np.float64)])
        self.rounds.extend([round_no] * len(ids))

    def __len__(self):
        return len(self.anchor_ids)


@dataclass
class SearchResult:
    """Outcome of one search.

    ``approx_scores`` is aligned to ``idx.item_ids``; entries outside a
    candidate pool are NaN, and it is None for methods with no score model.
    """

    top_k: list
    approx_scores: np.ndarray
    anchors: AnchorState
    calls_used: int
    timing: TimingBreakdown
    method: str = "adacur"
    pool: np.ndarray = None
    oracle: bool = False

    @property
    def top_ids(self):
        return [i for i, _ in self.top_k]

    @property
    def scored_ids(self):
        return list(self.anchors.anchor_ids)


def _rank_exact(ids, scores, k):
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[o]), float(scores[o])) for o in order]


def _cur_scores(c_test, r_sub, r_pool, rcond, clock):
    with clock.phase("pinv"):
        u = pseudo_inverse(r_sub, rcond)
    with clock.phase("matmul"):
        return (c_test @ u) @ r_pool


def approximate_all_scores(anchors, idx, rcond=DEFAULT_RCOND):
    """CUR approximation of the test query's scores against every indexed item."""
    if len(anchors) == 0:
        raise ValidationError("at least one anchor is needed")
    u = pseudo_inverse(idx.columns(anchors.anchor_ids), rcond)
    return (anchors.exact_scores @ u) @ idx.r_anc


def _as_mask(mask, n):
    if isinstance(mask, np.ndarray) and mask.dtype == bool:
        if mask.shape != (n,):
            raise ValidationError("boolean mask length does not match scores")
        return mask
    m = np.zeros(n, dtype=bool)
    m[np.fromiter((int(i) for i in mask), dtype=np.int64)] = True
    return m


def sample_items(strategy, k_s, mask, scores, rng):
    """Choose up to ``k_s`` unmasked positions of ``scores``.

    * ``topk``: the ``k_s`` highest-probability unmasked items. Softmax is
      strictly monotone, so ranking the raw scores gives the same order
      without the ties that underflowed probabilities would create.
    * ``softmax``: ``k_s`` draws without replacement in proportion to the
      softmax probabilities, renormalized after each draw (Gumbel-top-k).
      Items whose probability is exactly zero are drawn last, uniformly.
    * ``random``: ``k_s`` uniform draws from the unmasked items.

    Fewer than ``k_s`` unmasked items: all of them are returned.
    """
    s = np.asarray(scores, dtype=np.float64)
    masked = _as_mask(mask, s.size)
    free = np.flatnonzero(~masked)
    k_s = int(k_s)
    if free.size <= k_s:
        return free
    if strategy == "topk":
        keyed = np.where(masked, -np.inf, s)
        return top_k_indices(keyed, k_s)
    if strategy == "random":
        return uniform_sample(rng, free, k_s)
    if strategy != "softmax":
        raise ConfigError(f"unknown strategy {strategy!r}")
    p = softmax(s)
    p[masked] = 0.0
    live = free[p[free] > 0]
    take = min(k_s, live.size)
    keys = np.log(p[live]) + rng.gumbel(size=live.size)
    chosen = live[top_k_indices(keys, take)]
    if take < k_s:
        dead = np.setdiff1d(free, live)
        chosen = np.concatenate([chosen, uniform_sample(rng, dead, k_s - take)])
    return chosen


def _pool_positions(idx, retriever, query, n):
    ids = retriever.retrieve(query, min(int(n), idx.num_items))
    return idx.positions(ids)


def _retriever_first(idx, retriever, query, n, allowed=None):
    """Local positions of the retriever's top-``n`` items (inside ``allowed`` when given)."""
    if allowed is None:
        return idx.positions(retriever.retrieve(query, min(n, idx.num_items)))
    local = {int(p): j for j, p in enumerate(allowed)}
    out = []
    for p in idx.positions(retriever.retrieve(query, idx.num_items)):
        if int(p) in local:
            out.append(local[int(p)])
            if len(out) == n:
                break
    return np.asarray(out, dtype=np.int64)


def adacur_search(query, idx, scorer, cfg, ledger=None):
    """Adaptive multi-round CUR search.

    Round 1 scores ``round_sizes()[0]`` items chosen by ``cfg.init``. Each
    later round fits the CUR approximation on every item scored so far,
    masks those items, and scores the next batch picked by
    :func:`sample_items`. The returned top-k are the scored items with the
    highest exact scores, so ranking them costs no further calls.
    """
    cfg.validate()
    if idx.num_items == 0 or idx.num_queries == 0:
        raise ValidationError("empty index")
    clock = _Clock()
    ledger = ledger if ledger is not None else CallLedger()
    start_calls = ledger.total
    rng = query_rng(cfg.seed, query)

    if cfg.candidate_pool is not None:
        pool = _pool_positions(idx, cfg.pool_source(), query, cfg.candidate_pool)
        r_pool = idx.r_anc[:, pool]
    else:
        pool = None
        r_pool = idx.r_anc
    n = r_pool.shape[1]
    pool_ids = np.asarray(idx.item_ids, dtype=np.int64)
    if pool is not None:
        pool_ids = pool_ids[pool]

    sizes = cfg.round_sizes()
    if cfg.init == "random":
        first = uniform_sample(rng, np.arange(n), sizes[0])
    else:
        first = _retriever_first(idx, cfg.init, query, sizes[0], allowed=pool)

    anchors = AnchorState()
    local = []
    mask = np.zeros(n, dtype=bool)

    def _take(sel, round_no):
        ids = pool_ids[sel]
        with clock.phase("scorer"):
            s = score_batch(scorer, ledger, query, ids)
        anchors.add(ids, s, round_no)
        local.extend(int(j) for j in sel)
        mask[sel] = True

    _take(first, 1)
    for j in range(2, cfg.rounds + 1):
        if mask.all():
            break
        approx = _cur_scores(anchors.exact_scores, r_pool[:, local], r_pool, cfg.rcond, clock)
        sel = sample_items(cfg.strategy, sizes[j - 1], mask, approx, rng)
        if sel.size == 0:
            break
        _take(sel, j)
    approx = _cur_scores(anchors.exact_scores, r_pool[:, local], r_pool, cfg.rcond, clock)

    full = approx
    if pool is not None:
        full = np.full(idx.num_items, np.nan)
        full[pool] = approx
    return SearchResult(
        top_k=_rank_exact(anchors.anchor_ids, anchors.exact_scores, cfg.k),
        approx_scores=full, anchors=anchors, calls_used=ledger.total - start_calls,
        timing=clock.finish(), method="adacur", pool=pool)


def _anchor_then_rerank(query, idx, scorer, anchor_pos, budget, k, rcond, method,
                        ledger=None, clock=None, oracle=False):
    """Score the anchors, rank the rest by CUR estimate and spend what is left of the budget.

    Items already scored are skipped while walking down the approximate
    ranking, so the budget is used up exactly whenever enough items exist.
    """
    clock = clock or _Clock()
    ledger = ledger if ledger is not None else CallLedger()
    start_calls = ledger.total
    item_ids = np.asarray(idx.item_ids, dtype=np.int64)
    anchor_pos = np.asarray(anchor_pos, dtype=np.int64)
    anchors = AnchorState()
    with clock.phase("scorer"):
        s = score_batch(scorer, ledger, query, item_ids[anchor_pos])
    anchors.add(item_ids[anchor_pos], s, 1)

    approx = _cur_scores(anchors.exact_scores, idx.r_anc[:, anchor_pos], idx.r_anc, rcond, clock)
    remaining = budget - (ledger.total - start_calls)
    if remaining > 0:
        keyed = approx.copy()
        keyed[anchor_pos] = -np.inf
        n_free = idx.num_items - anchor_pos.size
        picks = top_k_indices(keyed, min(remaining, n_free))
        if picks.size:
            with clock.phase("scorer"):
                s = score_batch(scorer, ledger, query, item_ids[picks])
            anchors.add(item_ids[picks], s, 2)
    return SearchResult(
        top_k=_rank_exact(anchors.anchor_ids, anchors.exact_scores, k),
        approx_scores=approx, anchors=anchors, calls_used=ledger.total - start_calls,
        timing=clock.finish(), method=method, oracle=oracle)


def anncur_search(query, idx, scorer, k_i, budget, anchor_source="random", k=1, seed=0,
                  rcond=DEFAULT_RCOND, ledger=None):
    """One-shot CUR baseline: ``k_i`` anchors, then ``budget - k_i`` calls on the best-estimated items."""
    if not 1 <= k_i < budget:
        raise ConfigError(f"need 1 <= k_i < budget, got k_i={k_i}, budget={budget}")
    if not 1 <= k <= budget:
        raise ConfigError(f"k must be in [1, budget], got {k}")
    clock = _Clock()
    n_anchor = min(k_i, idx.num_items)
    if anchor_source == "random":
        anchor_pos = uniform_sample(query_rng(seed, query), np.arange(idx.num_items), n_anchor)
    elif isinstance(anchor_source, FirstStageRetriever):
        anchor_pos = _retriever_first(idx, anchor_source, query, n_anchor)
    else:
        raise ConfigError("anchor_source must be 'random' or a FirstStageRetriever")
    return _anchor_then_rerank(query, idx, scorer, anchor_pos, budget, k, rcond, "anncur",
                               ledger=ledger, clock=clock)


def split_grid(budget):
    """The nine anchor budgets ``i * budget / 10`` for ``i = 1..9`` (floored, deduplicated)."""
    if budget < 10:
        raise ConfigError("budget split sweep needs budget >= 10")
    return sorted({i * budget // 10 for i in range(1, 10)})


@dataclass
class SplitSweep:
    """Mean recall per anchor budget, with the post-hoc best split."""

    budget: int
    k: int
    splits: list
    mean_recall: dict
    per_query: dict

    @property
    def best_k_i(self):
        best = max(self.mean_recall.values())
        return min(ki for ki, r in self.mean_recall.items() if r == best)

    @property
    def best_recall(self):
        return self.mean_recall[self.best_k_i]


def budget_split_sweep(queries, idx, scorer, budget, k, exact_scores, anchor_source="random",
                       seed=0, rcond=DEFAULT_RCOND):
    """Run :func:`anncur_search` at each split of :func:`split_grid`.

    ``exact_scores(q)`` (or ``exact_scores[q]``) must give the full exact
    score vector of query ``q`` aligned with ``idx.item_ids``; it is used
    only for the ground-truth top-k and never charged.
    """
    lookup = exact_scores if callable(exact_scores) else exact_scores.__getitem__
    truth = {q: exact_topk(lookup(q), k, idx.item_ids) for q in queries}
    splits = split_grid(budget)
    per_query = {}
    for ki in splits:
        per_query[ki] = [
            topk_recall(anncur_search(q, idx, scorer, ki, budget, anchor_source, k, seed,
                                      rcond).top_ids, truth[q])
            for q in queries]
    mean = {ki: float(np.mean(v)) for ki, v in per_query.items()}
    return SplitSweep(budget, k, splits, mean, per_query)


def oracle_select_anchors(mode, k_m, eps, k_i, exact_scores, rng):
    """Anchor positions chosen with full knowledge of the exact scores.

    The top ``k_m`` items are excluded. ``floor((1 - eps) * k_i)`` anchors
    are then taken greedily from rank ``k_m + 1`` on (``mode="topk"``) or
    sampled by softmax over the remaining exact scores (``mode="softmax"``);
    the rest are uniform draws from the items not yet excluded or chosen.
    """
    s = np.asarray(exact_scores, dtype=np.float64)
    n = s.size
    if mode not in ORACLE_MODES:
        raise ValidationError(f"unknown oracle mode {mode!r}")
    if k_m < 0 or k_i < 1 or k_m + k_i > n:
        raise ValidationError(f"infeasible counts k_m={k_m}, k_i={k_i} for {n} items")
    if not 0.0 <= eps <= 1.0:
        raise ValidationError(f"eps must be in [0, 1], got {eps}")
    n_main = int(math.floor((1.0 - eps) * k_i + 1e-9))
    excluded = np.zeros(n, dtype=bool)
    excluded[top_k_indices(s, k_m)] = True
    if mode == "topk":
        order = top_k_indices(s, k_m + n_main)
        main = order[k_m:]
    else:
        main = sample_items("softmax", n_main, excluded, s, rng)
    excluded[main] = True
    rest = uniform_sample(rng, np.flatnonzero(~excluded), k_i - n_main)
    return np.concatenate([main, rest]).astype(np.int64)


def oracle_search(query, idx, scorer, exact_scores, mode, k_m, eps, k_i, budget, k=1, seed=0,
                  rcond=DEFAULT_RCOND, ledger=None):
    """CUR search whose ``k_i`` anchors are chosen by :func:`oracle_select_anchors`.

    Analysis only: anchor choice peeks at every exact score, which is not
    charged to the ledger. The result is flagged ``oracle=True``.
    """
    if not 1 <= k_i < budget:
        raise ConfigError(f"need 1 <= k_i < budget, got k_i={k_i}, budget={budget}")
    clock = _Clock()
    anchor_pos = oracle_select_anchors(mode, k_m, eps, k_i, exact_scores, query_rng(seed, query))
    return _anchor_then_rerank(query, idx, scorer, anchor_pos, budget, k, rcond,
                               f"oracle_{mode}", ledger=ledger, clock=clock, oracle=True)


def rerank_retrieve(query, scorer, retriever, budget, k, ledger=None):
    """Score the first-stage retriever's top ``budget`` items and return their exact top-k."""
    if not 1 <= k <= budget:
        raise ConfigError(f"need 1 <= k <= budget, got k={k}, budget={budget}")
    clock = _Clock()
    ledger = ledger if ledger is not None else CallLedger()
    start_calls = ledger.total
    ids = retriever.retrieve(query, budget)
    anchors = AnchorState()
    if ids:
        with clock.phase("scorer"):
            s = score_batch(scorer, ledger, query, ids)
        anchors.add(ids, s, 1)
    return SearchResult(
        top_k=_rank_exact(anchors.anchor_ids, anchors.exact_scores, k), approx_scores=None,
        anchors=anchors, calls_used=ledger.total - start_calls, timing=clock.finish(),
        method="rerank")
