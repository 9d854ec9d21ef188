"""Budgeted k-nearest-neighbour search for expensive black-box scorers.

Adaptive multi-round CUR search (ADACUR), the one-shot ANNCUR baseline,
retrieve-and-rerank, and an evaluation harness measuring Top-k-Recall under
a fixed number of scorer calls.
"""

from .errors import (AdacurError, BudgetExceededError, ConfigError, FactorizationError,
                     IndexBuildError, IndexFormatError, IndexVersionError, TransportError,
                     ValidationError)
from .evaluation import (BenchReport, BenchmarkCorpus, ExperimentPlan, make_benchmark_corpus,
                         run_benchmark, sign_test, timing_breakdown)
from .index import CurIndex, build_index, load_index, save_index
from .linalg import matmul, pseudo_inverse, softmax, top_k_indices
from .metrics import approximation_error, exact_topk, topk_recall
from .scorer import (CallLedger, EmbeddingRetriever, ExactRetriever, FirstStageRetriever,
                     MatrixScorer, RandomRetriever, RemoteScorer, Scorer, SyntheticCorpusSpec,
                     TfidfRetriever, make_synthetic, retrieve_first_stage, score_batch)
from .search import (AnchorState, SearchConfig, SearchResult, TimingBreakdown, adacur_search,
                     anncur_search, approximate_all_scores, budget_split_sweep,
                     oracle_search, oracle_select_anchors, rerank_retrieve, sample_items)

__version__ = "0.1.0"
