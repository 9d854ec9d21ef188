"""Command-line front end.

    adacur index  --corpus SPEC [--scorer ...] --out idx.acur
    adacur search --index idx.acur --corpus SPEC --query Q --budget B [...]
    adacur bench  --plan plan.json [--csv out.csv] [--json out.json] [--no-timing]

Corpus specs are ``kind:key=value,...``:

    synth:r=8,items=1000,queries=64,test=16,noise=0,seed=1
    clustered:items=10000,queries=500,test=200,seed=0       (any clustered parameter)
    npy:scores.npy,queries=64                               (rows = queries, first N are train)

Exit status: 0 on success, 1 on runtime or transport failure, 2 on usage or
configuration errors.
"""

import argparse
import json
import logging
import sys

import numpy as np

from .errors import AdacurError, ConfigError, TransportError, ValidationError
from .evaluation import CLUSTERED_DEFAULTS, ExperimentPlan, make_benchmark_corpus, run_benchmark
from .index import build_index, load_index, save_index
from .scorer import MatrixScorer, RandomRetriever, RemoteScorer, SyntheticCorpusSpec, make_synthetic
from .search import SearchConfig, adacur_search, anncur_search, rerank_retrieve

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(ConfigError):
    pass


class Corpus:
    def __init__(self, scorer, train_queries, items, test_queries, retriever=None):
        self.scorer = scorer
        self.train_queries = train_queries
        self.items = items
        self.test_queries = test_queries
        self.retriever = retriever


_SYNTH_KEYS = {"r": int, "items": int, "queries": int, "test": int, "noise": float, "seed": int}
_CLUSTER_KEYS = {"items": "num_items", "queries": "num_queries", "test": "num_test_queries",
                 "noise": "noise_std"}


def _kv(text):
    out = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"corpus option {part!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def parse_corpus(spec):
    kind, _, rest = spec.partition(":")
    if kind == "synth":
        kv = _kv(rest)
        bad = set(kv) - set(_SYNTH_KEYS)
        if bad:
            raise UsageError(f"unknown synth option(s): {', '.join(sorted(bad))}")
        try:
            v = {k: _SYNTH_KEYS[k](x) for k, x in kv.items()}
        except ValueError as exc:
            raise UsageError(f"bad synth option: {exc}") from None
        s = SyntheticCorpusSpec(v.get("items", 1000), v.get("queries", 64), v.get("r", 8),
                                v.get("noise", 0.0), v.get("seed", 0), v.get("test", 16))
        scorer, _ = make_synthetic(s)
        return Corpus(scorer, scorer.train_queries, list(range(s.num_items)), scorer.test_queries,
                      RandomRetriever(s.num_items, s.seed))
    if kind == "clustered":
        params = {}
        for k, x in _kv(rest).items():
            if k == "seed":
                continue
            name = _CLUSTER_KEYS.get(k, k)
            if name not in CLUSTERED_DEFAULTS:
                raise UsageError(f"unknown clustered option {k!r}")
            try:
                params[name] = type(CLUSTERED_DEFAULTS[name])(x)
            except ValueError:
                raise UsageError(f"bad value for {k}: {x!r}") from None
        seed = int(_kv(rest).get("seed", 0))
        c = make_benchmark_corpus("clustered", params, seed)
        return Corpus(c.scorer, c.train_queries, list(range(c.num_items)), c.test_queries,
                      c.retriever)
    if kind == "npy":
        path, _, opts = rest.partition(",")
        kv = _kv(opts)
        bad = set(kv) - {"queries"}
        if bad:
            raise UsageError(f"unknown npy option(s): {', '.join(sorted(bad))}")
        m = np.load(path)
        n_train = int(kv.get("queries", m.shape[0]))
        return Corpus(MatrixScorer(m), list(range(n_train)), list(range(m.shape[1])),
                      list(range(n_train, m.shape[0])))
    raise UsageError(f"unknown corpus kind {kind!r} (expected synth, clustered or npy)")


def _scorer(args, corpus):
    choice = args.scorer or "matrix"
    if choice in ("matrix", "synth"):
        if corpus is None:
            raise UsageError(f"--scorer {choice} needs --corpus")
        return corpus.scorer
    if choice.startswith("remote:"):
        n = len(corpus.items) if corpus is not None else args.num_items
        return RemoteScorer(choice[len("remote:"):], num_items=n, timeout=args.timeout,
                            retries=args.retries)
    raise UsageError(f"unknown scorer {choice!r}")


def _positive(name):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return v
    return conv


def _add_scorer_flags(p):
    p.add_argument("--corpus", help="corpus spec, e.g. synth:r=8,items=1000,queries=64,seed=1")
    p.add_argument("--scorer", help="matrix | synth | remote:URL (default: matrix)")
    p.add_argument("--timeout", type=float, default=10.0, help="remote scorer timeout (s)")
    p.add_argument("--retries", type=int, default=2, help="remote scorer retry count")


def cmd_index(args):
    corpus = parse_corpus(args.corpus) if args.corpus else None
    if corpus is None and not (args.num_queries and args.num_items):
        raise UsageError("index needs --corpus, or --num-queries and --num-items with a remote scorer")
    scorer = _scorer(args, corpus)
    queries = corpus.train_queries if corpus else list(range(args.num_queries))
    items = corpus.items if corpus else list(range(args.num_items))
    idx = build_index(scorer, queries, items, workers=args.workers)
    save_index(idx, args.out)
    print(json.dumps({"k_q": idx.num_queries, "num_items": idx.num_items,
                      "build_seconds": idx.metadata["build_seconds"],
                      "calls": idx.metadata["calls"], "out": args.out}))
    return EXIT_OK


def cmd_search(args):
    if args.budget < args.rounds:
        raise UsageError(f"--budget ({args.budget}) must be >= --rounds ({args.rounds})")
    if args.k > args.budget:
        raise UsageError("--k must not exceed --budget")
    if args.method == "anncur" and args.split is not None and not 1 <= args.split < args.budget:
        raise UsageError("--split must be in [1, budget)")
    corpus = parse_corpus(args.corpus) if args.corpus else None
    idx = load_index(args.index)
    scorer = _scorer(args, corpus)
    retriever = corpus.retriever if corpus else None
    if (args.init == "retriever" or args.pool) and retriever is None:
        raise UsageError("--init retriever / --pool need a corpus with a first-stage retriever")
    if args.method == "adacur":
        cfg = SearchConfig(args.budget, args.rounds, args.strategy,
                           retriever if args.init == "retriever" else "random", args.k,
                           candidate_pool=args.pool, pool_retriever=retriever if args.pool else None,
                           seed=args.seed)
        cfg.validate()
        res = adacur_search(args.query, idx, scorer, cfg)
    elif args.method == "anncur":
        split = args.split if args.split is not None else args.budget // 2
        source = retriever if args.init == "retriever" else "random"
        res = anncur_search(args.query, idx, scorer, split, args.budget, source, args.k, args.seed)
    else:
        r = retriever if args.init == "retriever" else RandomRetriever(idx.num_items, args.seed)
        res = rerank_retrieve(args.query, scorer, r, args.budget, args.k)
    out = {"query": args.query, "method": args.method,
           "top_k": [[i, s] for i, s in res.top_k], "calls_used": res.calls_used}
    if not args.no_timing:
        t = res.timing
        out["timing"] = {"scorer_ms": t.scorer_ms, "pinv_ms": t.pinv_ms,
                         "matmul_ms": t.matmul_ms, "other_ms": t.other_ms}
    print(json.dumps(out))
    return EXIT_OK


def load_plan(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise UsageError(f"cannot read plan {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return ExperimentPlan.from_dict(data)
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_bench(args):
    plan = load_plan(args.plan)
    if args.csv:
        plan.csv = args.csv
    if args.json:
        plan.json = args.json
    if args.no_timing:
        plan.no_timing = True
    report = run_benchmark(plan)
    print(json.dumps({"rows": len(report.rows), "grid_points": len(report.summary),
                      "csv": plan.csv, "json": plan.json}))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="adacur", description="Budgeted k-NN search with CUR score approximation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("index", help="build and save an anchor-query score index")
    _add_scorer_flags(pi)
    pi.add_argument("--out", required=True)
    pi.add_argument("--num-queries", type=_positive("--num-queries"))
    pi.add_argument("--num-items", type=_positive("--num-items"))
    pi.add_argument("--workers", type=_positive("--workers"), default=1)
    pi.set_defaults(func=cmd_index)

    ps = sub.add_parser("search", help="run one budgeted search")
    _add_scorer_flags(ps)
    ps.add_argument("--index", required=True)
    ps.add_argument("--query", type=int, required=True)
    ps.add_argument("--method", choices=("adacur", "anncur", "rerank"), default="adacur")
    ps.add_argument("--budget", type=_positive("--budget"), required=True)
    ps.add_argument("--rounds", type=_positive("--rounds"), default=5)
    ps.add_argument("--strategy", choices=("topk", "softmax", "random"), default="topk")
    ps.add_argument("--init", choices=("random", "retriever"), default="random")
    ps.add_argument("--k", type=_positive("--k"), default=10)
    ps.add_argument("--pool", type=_positive("--pool"))
    ps.add_argument("--split", type=_positive("--split"), help="anchor calls for --method anncur")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--no-timing", action="store_true")
    ps.set_defaults(func=cmd_search)

    pb = sub.add_parser("bench", help="execute an experiment plan file")
    pb.add_argument("--plan", required=True)
    pb.add_argument("--csv")
    pb.add_argument("--json")
    pb.add_argument("--no-timing", action="store_true")
    pb.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValidationError) as exc:
        print(f"adacur: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, AdacurError, OSError, RuntimeError) as exc:
        print(f"adacur: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
