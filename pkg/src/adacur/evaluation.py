"""Evaluation harness: benchmark corpora, experiment plans and reports.

A plan names a corpus, a list of methods each with a parameter grid, the
k values to score and the test queries. :func:`run_benchmark` runs every
grid point on every test query and produces a :class:`BenchReport` with one
CSV row per (query, method, grid point, k) plus JSON aggregates.
"""

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .errors import ConfigError
from .index import CurIndex, load_index
from .metrics import approximation_error, exact_topk, topk_recall
from .scorer import (EmbeddingRetriever, MatrixScorer, RandomRetriever,
                     RemoteScorer, SyntheticCorpusSpec, make_synthetic)
from .search import (SearchConfig, TimingBreakdown, adacur_search, anncur_search,
                     oracle_search, rerank_retrieve, split_grid)

__all__ = [
    "BenchReport", "BenchmarkCorpus", "ExperimentPlan", "SignTest", "approximation_error",
    "exact_topk", "make_benchmark_corpus", "run_benchmark", "sign_test", "timing_breakdown",
    "topk_recall",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "query_id", "method", "budget", "rounds", "strategy", "init", "split_ki", "k", "recall",
    "approx_err_all", "approx_err_topk", "calls_used", "scorer_ms", "pinv_ms", "matmul_ms",
    "other_ms",
]
TIMING_COLUMNS = ("scorer_ms", "pinv_ms", "matmul_ms", "other_ms")


@dataclass
class BenchmarkCorpus:
    """Full score matrix plus the pieces a benchmark needs around it.

    ``scores`` rows are queries (train queries first, then test queries),
    columns are items. ``retriever`` is a noisy dot-product first stage
    standing in for a dual encoder.
    """

    kind: str
    scores: np.ndarray
    train_queries: list
    test_queries: list
    scorer: MatrixScorer
    retriever: EmbeddingRetriever = None
    params: dict = field(default_factory=dict)

    @property
    def num_items(self):
        return self.scores.shape[1]

    def index(self):
        return CurIndex(self.scores[self.train_queries], self.train_queries,
                        range(self.num_items), {"scorer": self.scorer.fingerprint(),
                                                "corpus": self.kind})

    def exact_scores(self, query_id):
        return self.scores[query_id]


CLUSTERED_DEFAULTS = dict(
    num_items=10000, num_queries=500, num_test_queries=200, clusters=100, dim=16,
    spread=0.5, sharpness=3.0, scale=10.0, noise_std=0.2, retriever_noise=1.0,
)
LOWRANK_DEFAULTS = dict(num_items=1000, num_queries=64, num_test_queries=64, latent_rank=8,
                        noise_std=0.0, retriever_noise=0.5)


def _clustered(p, seed):
    rng = np.random.default_rng(seed)
    nq = p["num_queries"] + p["num_test_queries"]
    centers = rng.standard_normal((p["clusters"], p["dim"]))
    item_c = rng.integers(p["clusters"], size=p["num_items"])
    query_c = rng.integers(p["clusters"], size=nq)
    y = centers[item_c] + p["spread"] * rng.standard_normal((p["num_items"], p["dim"]))
    x = centers[query_c] + p["spread"] * rng.standard_normal((nq, p["dim"]))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    # Sharpened cosine similarity: high rank, and steep near each query's
    # cluster, so a handful of random anchors cannot pin down the top items.
    scores = p["scale"] * np.exp(p["sharpness"] * (x @ y.T - 1.0))
    if p["noise_std"] > 0:
        scores += rng.normal(0.0, p["noise_std"], size=scores.shape)
    return scores, x, y, rng


def _noisy_retriever(x, y, noise, rng):
    xe = x + noise * rng.standard_normal(x.shape) / np.sqrt(x.shape[1])
    ye = y + noise * rng.standard_normal(y.shape) / np.sqrt(y.shape[1])
    return EmbeddingRetriever(xe, ye)


def make_benchmark_corpus(kind, params=None, seed=0):
    """Build a synthetic benchmark corpus.

    ``kind`` is ``"noiseless-lowrank"``, ``"noisy-lowrank"`` or
    ``"clustered"``; ``params`` overrides the matching ``*_DEFAULTS`` dict.
    """
    params = dict(params or {})
    if kind == "clustered":
        p = {**CLUSTERED_DEFAULTS, **params}
        _check_keys(params, CLUSTERED_DEFAULTS, kind)
        scores, x, y, rng = _clustered(p, seed)
        retriever = _noisy_retriever(x, y, p["retriever_noise"], rng)
    elif kind in ("noiseless-lowrank", "noisy-lowrank"):
        defaults = dict(LOWRANK_DEFAULTS, noise_std=0.0 if kind == "noiseless-lowrank" else 0.1)
        _check_keys(params, defaults, kind)
        p = {**defaults, **params}
        if kind == "noiseless-lowrank" and p["noise_std"] != 0:
            raise ConfigError("noiseless-lowrank corpus cannot have noise_std != 0")
        spec = SyntheticCorpusSpec(p["num_items"], p["num_queries"], p["latent_rank"],
                                   p["noise_std"], seed, p["num_test_queries"])
        synth, scores = make_synthetic(spec)
        rng = np.random.default_rng([seed, 1])
        retriever = _noisy_retriever(synth.query_factors, synth.item_factors,
                                     p["retriever_noise"], rng)
    else:
        raise ConfigError(f"unknown corpus kind {kind!r}")
    scores = np.ascontiguousarray(scores)
    n_train = p["num_queries"]
    nq = n_train + p["num_test_queries"]
    return BenchmarkCorpus(kind, scores, list(range(n_train)), list(range(n_train, nq)),
                           MatrixScorer(scores), retriever, {**p, "seed": seed})


def _check_keys(given, allowed, what):
    extra = set(given) - set(allowed)
    if extra:
        raise ConfigError(f"unknown {what} parameter(s): {', '.join(sorted(extra))}")


@dataclass(frozen=True)
class SignTest:
    wins: int
    losses: int
    ties: int
    pvalue: float

    def significant(self, alpha):
        return self.pvalue < alpha

    def favors_first(self, alpha):
        return self.wins > self.losses and self.pvalue < alpha


def sign_test(a, b):
    """Two-sided paired sign test on ``a - b``; ties are dropped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError("paired samples differ in length")
    w = int(np.sum(a > b))
    l = int(np.sum(a < b))
    t = int(a.size - w - l)
    p = binomtest(w, w + l, 0.5).pvalue if w + l else 1.0
    return SignTest(w, l, t, float(p))


def timing_breakdown(results):
    """Sum the per-phase timings of ``results``.

    Returns a dict with the summed :class:`TimingBreakdown`, each phase's
    fraction of the total, and ``overhead`` = (pinv + matmul) / total.
    """
    total = TimingBreakdown()
    for r in results:
        total = total + r.timing
    t = total.total_ms
    fractions = {name: (getattr(total, name) / t if t > 0 else 0.0) for name in TIMING_COLUMNS}
    return {"timing": total, "fractions": fractions,
            "overhead": total.overhead_ms / t if t > 0 else 0.0}


# -- plans -----------------------------------------------------------------

METHODS = {
    "adacur": {"budget", "rounds", "strategy", "init", "pool"},
    "anncur": {"budget", "split_ki", "init"},
    "rerank": {"budget", "retriever"},
    "oracle_topk": {"budget", "split_ki", "k_m", "eps"},
    "oracle_softmax": {"budget", "split_ki", "k_m", "eps"},
}
PLAN_KEYS = {"corpus", "methods", "ks", "test_queries", "seed", "csv", "json", "no_timing"}


@dataclass
class MethodSpec:
    name: str
    grid: dict

    def points(self):
        keys = sorted(self.grid)
        for values in itertools.product(*(self.grid[k] for k in keys)):
            yield dict(zip(keys, values))


@dataclass
class ExperimentPlan:
    """Declarative benchmark description; see :meth:`from_dict` for the schema.

    ``corpus`` is either ``{"kind": ..., "params": {...}, "seed": n}`` for a
    synthetic corpus or ``{"index": path, "scorer": "matrix:<file.npy>" |
    "remote:<url>", "num_items": n}`` for a saved index.
    """

    corpus: dict
    methods: list
    ks: list = field(default_factory=lambda: [1])
    test_queries: object = "all"
    seed: int = 0
    csv: str = None
    json: str = None
    no_timing: bool = False

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("plan must be a JSON object")
        _check_keys(d, PLAN_KEYS, "plan")
        if "corpus" not in d or "methods" not in d:
            raise ConfigError("plan needs 'corpus' and 'methods'")
        methods = []
        for n, m in enumerate(d["methods"]):
            where = f"methods[{n}]"
            if not isinstance(m, dict) or set(m) - {"name", "grid"} or "name" not in m:
                raise ConfigError(f"{where}: expected {{'name': ..., 'grid': {{...}}}}")
            name = m["name"]
            if name not in METHODS:
                raise ConfigError(f"{where}.name: unknown method {name!r}")
            grid = dict(m.get("grid", {}))
            bad = set(grid) - METHODS[name]
            if bad:
                raise ConfigError(f"{where}.grid: unknown key(s) {', '.join(sorted(bad))}")
            if "budget" not in grid:
                raise ConfigError(f"{where}.grid.budget is required")
            grid = {k: v if isinstance(v, list) else [v] for k, v in grid.items()}
            methods.append(MethodSpec(name, grid))
        plan = cls(corpus=d["corpus"], methods=methods, ks=list(d.get("ks", [1])),
                   test_queries=d.get("test_queries", "all"), seed=int(d.get("seed", 0)),
                   csv=d.get("csv"), json=d.get("json"), no_timing=bool(d.get("no_timing", False)))
        plan.validate()
        return plan

    def validate(self):
        if not self.methods:
            raise ConfigError("plan has an empty method list")
        if not self.ks or any(int(k) < 1 for k in self.ks):
            raise ConfigError("ks must be a nonempty list of positive integers")
        if list(self.ks) != sorted(self.ks):
            raise ConfigError("ks must be sorted ascending")
        if not isinstance(self.corpus, dict) or not ({"kind"} <= set(self.corpus)
                                                     or {"index", "scorer"} <= set(self.corpus)):
            raise ConfigError("corpus needs 'kind' or both 'index' and 'scorer'")
        kmax = max(self.ks)
        for m in self.methods:
            for p in m.points():
                _validate_point(m.name, p, kmax)
        return self


def _validate_point(name, p, kmax):
    where = f"{name} {p}"
    b = p["budget"]
    if not isinstance(b, int) or b < 1:
        raise ConfigError(f"{where}: budget must be a positive integer")
    if kmax > b:
        raise ConfigError(f"{where}: largest k ({kmax}) exceeds budget")
    if name == "adacur":
        SearchConfig(b, p.get("rounds", 5), p.get("strategy", "topk"), k=kmax).validate()
        if p.get("init", "random") not in ("random", "retriever"):
            raise ConfigError(f"{where}: init must be 'random' or 'retriever'")
        pool = p.get("pool")
        if pool is not None and (not isinstance(pool, int) or pool < 1):
            raise ConfigError(f"{where}: pool must be a positive integer or null")
    elif name == "anncur" or name.startswith("oracle_"):
        ki = p.get("split_ki", "sweep")
        if ki != "sweep" and not (isinstance(ki, int) and 1 <= ki < b):
            raise ConfigError(f"{where}: split_ki must be 'sweep' or an int in [1, budget)")
        if ki == "sweep":
            split_grid(b)
        if name == "anncur" and p.get("init", "random") not in ("random", "retriever"):
            raise ConfigError(f"{where}: init must be 'random' or 'retriever'")
        if name.startswith("oracle_"):
            km = p.get("k_m", 0)
            if km != "k" and not (isinstance(km, int) and km >= 0):
                raise ConfigError(f"{where}: k_m must be a non-negative int or 'k'")
            if not 0 <= float(p.get("eps", 0.0)) <= 1:
                raise ConfigError(f"{where}: eps must be in [0, 1]")
    elif name == "rerank":
        if p.get("retriever", "random") not in ("random", "retriever", "exact"):
            raise ConfigError(f"{where}: retriever must be 'random', 'retriever' or 'exact'")


def load_corpus(spec):
    """Materialize a plan's corpus entry as ``(index, scorer, queries, truth_fn, retriever)``."""
    if "kind" in spec:
        _check_keys(spec, {"kind", "params", "seed"}, "corpus")
        c = make_benchmark_corpus(spec["kind"], spec.get("params"), spec.get("seed", 0))
        return c.index(), c.scorer, c.test_queries, c.exact_scores, c.retriever
    _check_keys(spec, {"index", "scorer", "test_queries", "num_items"}, "corpus")
    idx = load_index(spec["index"])
    kind, _, arg = spec["scorer"].partition(":")
    if kind == "matrix":
        scorer = MatrixScorer(np.load(arg))
    elif kind == "remote":
        scorer = RemoteScorer(arg, num_items=spec.get("num_items", idx.num_items))
    else:
        raise ConfigError(f"unknown scorer {spec['scorer']!r}")
    queries = spec.get("test_queries")
    if queries is None:
        if not isinstance(scorer, MatrixScorer):
            raise ConfigError("corpus.test_queries is required for a remote scorer")
        train = set(idx.train_query_ids)
        queries = [q for q in range(scorer.num_queries) if q not in train]
    cache = {}

    def truth(q):
        # Offline ground truth: scored straight through the scorer, no ledger.
        if q not in cache:
            cache[q] = scorer.score_batch(q, idx.item_ids)
        return cache[q]

    return idx, scorer, list(queries), truth, None


# -- running ---------------------------------------------------------------

@dataclass
class BenchReport:
    """Rows of per-query results and per-grid-point aggregates."""

    rows: list
    summary: list
    best_splits: list = field(default_factory=list)

    def recalls(self, method, k, **match):
        out = []
        for r in self.rows:
            if r["method"] == method and r["k"] == k and all(r[c] == v for c, v in match.items()):
                out.append(r["recall"])
        return out

    def to_csv(self, no_timing=False):
        cols = [c for c in CSV_COLUMNS if not (no_timing and c in TIMING_COLUMNS)]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: _fmt(r[c]) for c in cols})
        return buf.getvalue()

    def to_json(self, no_timing=False):
        summary = self.summary
        if no_timing:
            summary = [{k: v for k, v in s.items() if not k.startswith("median_")}
                       for s in summary]
        return json.dumps({"summary": summary, "best_splits": self.best_splits,
                           "best_split_selection": "post-hoc on the test queries"},
                          indent=2, sort_keys=True)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _point_runs(name, p, ks, idx, scorer, retriever, seed):
    """Yield ``(labels, k_m_for_k, runner)``; ``runner(q, truth_vec)`` returns a SearchResult."""
    b = p["budget"]
    kmax = max(ks)
    if name == "adacur":
        init = p.get("init", "random")
        pool = p.get("pool")
        if (init == "retriever" or pool is not None) and retriever is None:
            raise ConfigError("adacur init/pool needs a corpus with a first-stage retriever")
        cfg = SearchConfig(b, p.get("rounds", 5), p.get("strategy", "topk"),
                           retriever if init == "retriever" else "random", kmax,
                           candidate_pool=pool, pool_retriever=retriever if pool else None,
                           seed=seed)
        labels = dict(rounds=cfg.rounds, strategy=cfg.strategy,
                      init=init if pool is None else f"{init}|pool={pool}", split_ki=None)
        yield labels, ks, lambda q, truth: adacur_search(q, idx, scorer, cfg)
        return
    if name == "rerank":
        which = p.get("retriever", "random")
        if which == "random":
            r = RandomRetriever(idx.num_items, seed)
        elif which == "exact":
            r = _TruthRetriever()
        else:
            if retriever is None:
                raise ConfigError("rerank retriever='retriever' needs a corpus retriever")
            r = retriever
        labels = dict(rounds=None, strategy=None, init=which, split_ki=None)

        def run_rerank(q, truth):
            if isinstance(r, _TruthRetriever):
                r.truth = truth
            return rerank_retrieve(q, scorer, r, b, kmax)

        yield labels, ks, run_rerank
        return
    splits = p.get("split_ki", "sweep")
    splits = split_grid(b) if splits == "sweep" else [splits]
    if name == "anncur":
        init = p.get("init", "random")
        if init == "retriever" and retriever is None:
            raise ConfigError("anncur init='retriever' needs a corpus retriever")
        source = retriever if init == "retriever" else "random"
        for ki in splits:
            labels = dict(rounds=None, strategy=None, init=init, split_ki=ki)
            yield labels, ks, (lambda ki: lambda q, truth: anncur_search(
                q, idx, scorer, ki, b, source, kmax, seed))(ki)
        return
    mode = name.split("_", 1)[1]
    km = p.get("k_m", 0)
    eps = float(p.get("eps", 0.0))
    for ki in splits:
        # k_m="k" masks exactly the k nearest neighbours, so each k is its own run.
        groups = [[k] for k in ks] if km == "k" else [list(ks)]
        for group in groups:
            m = group[0] if km == "k" else km
            labels = dict(rounds=None, strategy=f"k_m={m};eps={eps:g}", init="oracle",
                          split_ki=ki)
            yield labels, group, (lambda ki, m: lambda q, truth: oracle_search(
                q, idx, scorer, truth, mode, m, eps, ki, b, kmax, seed))(ki, m)


class _TruthRetriever:
    truth = None

    def retrieve(self, query_id, n):
        return exact_topk(self.truth, min(n, len(self.truth)))


def run_benchmark(plan, corpus=None):
    """Execute ``plan`` and return a :class:`BenchReport`.

    ``corpus`` may be a pre-built :class:`BenchmarkCorpus` (skips building the
    plan's corpus entry). Ground truth is computed once per query outside
    any ledger. Writes the CSV/JSON outputs when the plan names paths.
    """
    plan.validate()
    if corpus is not None:
        idx, scorer, queries, truth_fn, retriever = (corpus.index(), corpus.scorer,
                                                     corpus.test_queries, corpus.exact_scores,
                                                     corpus.retriever)
    else:
        idx, scorer, queries, truth_fn, retriever = load_corpus(plan.corpus)
    queries = _select_queries(plan.test_queries, queries)
    if not queries:
        raise ConfigError("no test queries to evaluate")
    item_ids = idx.item_ids
    truth = {}
    for q in queries:
        t = np.asarray(truth_fn(q), dtype=np.float64)
        if t.shape != (idx.num_items,):
            raise ConfigError(f"ground truth for query {q} has shape {t.shape}")
        truth[q] = t
    exact = {q: {k: exact_topk(truth[q], k, item_ids) for k in plan.ks} for q in queries}

    rows = []
    summary = []
    for m in plan.methods:
        for p in m.points():
            for labels, ks, runner in _point_runs(m.name, p, plan.ks, idx, scorer, retriever,
                                                  plan.seed):
                log.info("%s %s %s", m.name, p, labels)
                point_rows = []
                for q in queries:
                    try:
                        res = runner(q, truth[q])
                    except Exception as exc:
                        raise RuntimeError(f"{m.name} {p} {labels} failed on query {q}: {exc}") from exc
                    point_rows.extend(_result_rows(q, m.name, p["budget"], labels, ks, res,
                                                   truth[q], exact[q], idx))
                rows.extend(point_rows)
                summary.extend(_summarize(point_rows, ks))
    report = BenchReport(rows, summary, _best_splits(summary))
    if plan.csv:
        with open(plan.csv, "w", newline="") as f:
            f.write(report.to_csv(plan.no_timing))
    if plan.json:
        with open(plan.json, "w") as f:
            f.write(report.to_json(plan.no_timing))
    return report


def _select_queries(spec, available):
    if spec == "all" or spec is None:
        return list(available)
    if isinstance(spec, int):
        return list(available)[:spec]
    return [int(q) for q in spec]


def _result_rows(q, method, budget, labels, ks, res, truth, exact, idx):
    err_all = None
    approx = res.approx_scores
    if approx is not None:
        sub = np.flatnonzero(~np.isnan(approx))
        err_all = approximation_error(approx[sub], truth[sub])
    out = []
    for k in ks:
        err_top = None
        if approx is not None:
            top_pos = idx.positions(exact[k])
            ok = top_pos[~np.isnan(approx[top_pos])]
            err_top = approximation_error(approx[ok], truth[ok]) if ok.size else None
        row = dict(query_id=q, method=method, budget=budget, k=k,
                   recall=topk_recall(res.top_ids[:k], exact[k]),
                   approx_err_all=err_all, approx_err_topk=err_top, calls_used=res.calls_used,
                   **labels)
        for c in TIMING_COLUMNS:
            row[c] = getattr(res.timing, c)
        out.append(row)
    return out


def _summarize(rows, ks):
    out = []
    for k in ks:
        sel = [r for r in rows if r["k"] == k]
        if not sel:
            continue
        rec = np.array([r["recall"] for r in sel])
        first = sel[0]
        s = {c: first[c] for c in ("method", "budget", "rounds", "strategy", "init", "split_ki")}
        s.update(k=k, count=len(sel), mean_recall=float(rec.mean()), std_recall=float(rec.std()),
                 mean_calls=float(np.mean([r["calls_used"] for r in sel])))
        for c in TIMING_COLUMNS:
            s["median_" + c] = float(np.median([r[c] for r in sel]))
        out.append(s)
    return out


def _best_splits(summary):
    groups = {}
    for s in summary:
        if s["split_ki"] is None:
            continue
        key = (s["method"], s["budget"], s["strategy"], s["init"], s["k"])
        groups.setdefault(key, []).append(s)
    best = []
    for (method, budget, strategy, init, k), ss in sorted(groups.items(), key=lambda kv: str(kv[0])):
        top = max(s["mean_recall"] for s in ss)
        ki = min(s["split_ki"] for s in ss if s["mean_recall"] == top)
        best.append(dict(method=method, budget=budget, strategy=strategy, init=init, k=k,
                         best_split_ki=ki, mean_recall=top,
                         table={str(s["split_ki"]): s["mean_recall"] for s in ss}))
    return best
