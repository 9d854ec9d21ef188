"""Black-box query/item scoring oracles and call accounting.

A :class:`Scorer` wraps an expensive similarity function. Search code never
calls it directly; it goes through :func:`score_batch`, which charges a
:class:`CallLedger` exactly once per distinct (query, item) pair.

Query and item ids are non-negative integers throughout the Python API.
They are sent as decimal strings on the wire to a remote scorer.
"""

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, TransportError, ValidationError
from .linalg import as_matrix, top_k_indices


class Scorer:
    """Abstract scoring oracle ``f(query, item) -> float``.

    Subclasses implement :meth:`_score_batch`. ``latency_ms`` adds a
    simulated per-pair cost (slept once per chunk of ``batch_size`` pairs),
    used to reproduce latency breakdowns with a cheap oracle.
    """

    def __init__(self, latency_ms=0.0, batch_size=50):
        if latency_ms < 0:
            raise ValidationError("latency_ms must be >= 0")
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        self.latency_ms = float(latency_ms)
        self.batch_size = int(batch_size)
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def num_items(self):
        raise NotImplementedError

    def fingerprint(self):
        return type(self).__name__

    def score(self, query_id, item_id):
        return float(self.score_batch(query_id, [item_id])[0])

    def score_batch(self, query_id, item_ids):
        """Raw scores for ``item_ids`` in order. Not ledger-charged."""
        items = np.asarray(item_ids, dtype=np.int64).reshape(-1)
        out = np.asarray(self._score_batch(int(query_id), items), dtype=np.float64)
        if out.shape != items.shape:
            raise ValidationError(f"scorer returned {out.shape} scores for {items.size} items")
        with self._lock:
            self.calls += items.size
        if self.latency_ms > 0:
            for start in range(0, items.size, self.batch_size):
                n = min(self.batch_size, items.size - start)
                time.sleep(self.latency_ms * n / 1000.0)
        return out

    def _score_batch(self, query_id, items):
        raise NotImplementedError


class MatrixScorer(Scorer):
    """Oracle that reads scores from a stored (queries x items) matrix."""

    def __init__(self, matrix, latency_ms=0.0, batch_size=50):
        super().__init__(latency_ms=latency_ms, batch_size=batch_size)
        self.matrix = as_matrix(matrix, "score matrix")
        self.matrix.setflags(write=False)

    @property
    def num_queries(self):
        return self.matrix.shape[0]

    @property
    def num_items(self):
        return self.matrix.shape[1]

    def fingerprint(self):
        import zlib

        crc = zlib.crc32(np.ascontiguousarray(self.matrix).tobytes())
        return f"matrix:{self.matrix.shape[0]}x{self.matrix.shape[1]}:{crc:08x}"

    def _score_batch(self, query_id, items):
        if not 0 <= query_id < self.matrix.shape[0]:
            raise ValidationError(f"unknown query id {query_id}")
        if items.size and (items.min() < 0 or items.max() >= self.matrix.shape[1]):
            bad = items[(items < 0) | (items >= self.matrix.shape[1])][0]
            raise ValidationError(f"unknown item id {bad}")
        return self.matrix[query_id, items]

    def full_row(self, query_id):
        return np.array(self.matrix[query_id])


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_items: int
    num_queries: int
    latent_rank: int
    noise_std: float = 0.0
    seed: int = 0
    num_test_queries: int = 0

    def validate(self):
        if self.num_items < 1 or self.num_queries < 1 or self.num_test_queries < 0:
            raise ValidationError("corpus needs at least one item and one query")
        if self.latent_rank < 1:
            raise ValidationError("latent_rank must be >= 1")
        if self.latent_rank > min(self.num_items, self.num_queries + self.num_test_queries):
            raise ValidationError("latent_rank exceeds min(num_items, total queries)")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")


class SyntheticScorer(MatrixScorer):
    """Low-rank (+ noise) oracle; keeps its factor tables for inspection.

    Query ids ``0 .. num_queries-1`` are the train/anchor queries and the
    following ``num_test_queries`` ids are held-out test queries.
    """

    def __init__(self, spec, query_factors, item_factors, matrix, **kw):
        super().__init__(matrix, **kw)
        self.spec = spec
        self.query_factors = query_factors
        self.item_factors = item_factors

    @property
    def train_queries(self):
        return list(range(self.spec.num_queries))

    @property
    def test_queries(self):
        n = self.spec.num_queries
        return list(range(n, n + self.spec.num_test_queries))


def make_synthetic(spec, latency_ms=0.0, batch_size=50):
    """Generate a low-rank synthetic corpus.

    Scores are ``<u_q, v_i> + eps`` with ``u, v ~ N(0, 1) / sqrt(r)`` and
    ``eps ~ N(0, noise_std**2)``. Returns ``(scorer, full_matrix)``; the same
    spec always produces bit-identical output.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    nq = spec.num_queries + spec.num_test_queries
    r = spec.latent_rank
    u = rng.standard_normal((nq, r)) / np.sqrt(r)
    v = rng.standard_normal((spec.num_items, r)) / np.sqrt(r)
    matrix = u @ v.T
    if spec.noise_std > 0:
        matrix = matrix + rng.normal(0.0, spec.noise_std, size=matrix.shape)
    scorer = SyntheticScorer(spec, u, v, matrix, latency_ms=latency_ms, batch_size=batch_size)
    return scorer, scorer.matrix


class RemoteScorer(Scorer):
    """Client for a JSON-over-HTTP scoring service.

    Protocol: ``POST {base_url}/score`` with body
    ``{"query_id": "<id>", "item_ids": ["<id>", ...]}``, answered by
    ``{"scores": [float, ...]}``. Non-200 responses and connection failures
    are retried ``retries`` times before a :class:`TransportError`.
    """

    def __init__(self, base_url, num_items=None, timeout=10.0, retries=2, backoff=0.05,
                 latency_ms=0.0, batch_size=50):
        super().__init__(latency_ms=latency_ms, batch_size=batch_size)
        self.url = base_url.rstrip("/") + "/score"
        self._num_items = num_items
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    @property
    def num_items(self):
        if self._num_items is None:
            raise ValidationError("remote scorer was created without num_items")
        return self._num_items

    def fingerprint(self):
        return f"remote:{self.url}"

    def _score_batch(self, query_id, items):
        if self._num_items is not None and items.size and (
                items.min() < 0 or items.max() >= self._num_items):
            raise ValidationError("unknown item id in remote request")
        body = json.dumps({"query_id": str(query_id),
                           "item_ids": [str(int(i)) for i in items]}).encode()
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=body, method="POST",
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read())
                scores = payload["scores"]
                if len(scores) != items.size:
                    raise TransportError(f"expected {items.size} scores, got {len(scores)}")
                return np.asarray(scores, dtype=np.float64)
            except urllib.error.HTTPError as exc:
                last = TransportError(f"{self.url} returned HTTP {exc.code}")
            except (urllib.error.URLError, OSError, ValueError, KeyError) as exc:
                last = exc if isinstance(exc, TransportError) else TransportError(
                    f"{self.url} unreachable: {exc}")
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise last


class CallLedger:
    """Per-search record of exact scores already paid for.

    A pair is charged once; asking for it again returns the cached score.
    ``limit`` optionally turns overspending into a hard error.
    """

    def __init__(self, limit=None):
        self.limit = limit
        self.total = 0
        self._scores = {}

    def cached(self, query_id):
        return self._scores.get(query_id, {})

    def __contains__(self, pair):
        q, i = pair
        return i in self._scores.get(q, ())

    def charge(self, query_id, item_ids, scores):
        row = self._scores.setdefault(query_id, {})
        for i, s in zip(item_ids, scores):
            row[int(i)] = float(s)
        self.total += len(item_ids)


def score_batch(scorer, ledger, query_id, item_ids):
    """Exact scores of ``item_ids`` for ``query_id`` with ledger accounting.

    Only pairs not already in ``ledger`` reach the scorer (duplicates within
    the request are scored once, too). Scores come back in input order.
    """
    items = [int(i) for i in item_ids]
    if not items:
        raise ValidationError("score_batch needs at least one item")
    known = ledger.cached(query_id)
    fresh = list(dict.fromkeys(i for i in items if i not in known))
    if fresh:
        if ledger.limit is not None and ledger.total + len(fresh) > ledger.limit:
            raise BudgetExceededError(
                f"charging {len(fresh)} calls would exceed the limit of {ledger.limit}")
        ledger.charge(query_id, fresh, scorer.score_batch(query_id, fresh))
        known = ledger.cached(query_id)
    return np.array([known[i] for i in items], dtype=np.float64)


class FirstStageRetriever:
    """Cheap retriever proposing candidate items for a query."""

    def retrieve(self, query_id, n):
        raise NotImplementedError


def retrieve_first_stage(retriever, query_id, n):
    if n < 1:
        raise ValidationError("n must be >= 1")
    return retriever.retrieve(query_id, n)


class EmbeddingRetriever(FirstStageRetriever):
    """Dot-product retrieval over stored query and item embedding tables."""

    def __init__(self, query_embeddings, item_embeddings):
        self.query_embeddings = as_matrix(query_embeddings, "query embeddings")
        self.item_embeddings = as_matrix(item_embeddings, "item embeddings")
        if self.query_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ValidationError("query and item embeddings differ in dimension")

    def scores(self, query_id):
        return self.item_embeddings @ self.query_embeddings[query_id]

    def retrieve(self, query_id, n):
        s = self.scores(query_id)
        return top_k_indices(s, min(int(n), s.size)).tolist()


class TfidfRetriever(FirstStageRetriever):
    """TF-IDF retrieval with lowercase whitespace tokenization.

    Uses the smoothed idf ``ln((1 + N) / (1 + df)) + 1`` and L2-normalized
    vectors; ranking is by dot product of query and item vectors.
    """

    def __init__(self, item_texts, query_texts):
        from sklearn.feature_extraction.text import TfidfVectorizer

        self.vectorizer = TfidfVectorizer(lowercase=True, tokenizer=str.split,
                                          token_pattern=None, smooth_idf=True, norm="l2")
        self.item_matrix = self.vectorizer.fit_transform(item_texts)
        self.query_texts = list(query_texts)

    def scores(self, query_id):
        q = self.vectorizer.transform([self.query_texts[query_id]])
        return np.asarray((self.item_matrix @ q.T).todense()).ravel()

    def retrieve(self, query_id, n):
        s = self.scores(query_id)
        return top_k_indices(s, min(int(n), s.size)).tolist()


def uniform_sample(rng, population, n):
    """``n`` distinct elements of ``population`` drawn uniformly, in draw order."""
    population = np.asarray(population)
    n = min(int(n), population.size)
    return population[rng.permutation(population.size)[:n]]


def query_rng(seed, query_id):
    """Per-query generator derived from a global seed."""
    return np.random.default_rng([int(seed), int(query_id)])


class RandomRetriever(FirstStageRetriever):
    """Uniform-random candidates; deterministic per ``(seed, query)``."""

    def __init__(self, num_items, seed=0):
        self.num_items = int(num_items)
        self.seed = seed

    def retrieve(self, query_id, n):
        rng = query_rng(self.seed, query_id)
        return uniform_sample(rng, np.arange(self.num_items), n).tolist()


class ExactRetriever(FirstStageRetriever):
    """Ranks items by a stored exact score matrix (a perfect first stage)."""

    def __init__(self, matrix, reverse=False):
        self.matrix = as_matrix(matrix)
        self.reverse = reverse

    def retrieve(self, query_id, n):
        s = self.matrix[query_id]
        s = -s if self.reverse else s
        return top_k_indices(s, min(int(n), s.size)).tolist()
