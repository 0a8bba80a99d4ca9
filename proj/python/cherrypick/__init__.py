"""Difficulty-based selection of instruction-tuning data.

Thin Python facade over the compiled ``_core`` extension.  Everything here
is a direct re-export; the heavy lifting (tokenisation, n-gram scoring,
clustering, the pipeline) lives in C++.
"""

from ._core import (  # noqa: F401
    CherryError,
    ComparisonOutcome,
    HashedBagEmbedder,
    NGramScorer,
    OrderResult,
    PromptTemplate,
    RenderedPair,
    Sample,
    ScoreRecord,
    ScoreStats,
    TokenLogProbs,
    __version__,
    adjudicate,
    build_judge_prompt,
    builtin_template,
    compute_stats,
    conditioned_answer_score,
    direct_answer_score,
    filter_misaligned,
    ifd_ratio,
    kmeans,
    load_dataset,
    majority_outcome,
    parse_judge_reply,
    pca_project,
    per_order_result,
    render,
    run_pipeline,
    save_dataset,
    score_dataset,
    select,
    tally_majority,
    tokenize,
    winning_score,
)

__all__ = [
    "CherryError",
    "ComparisonOutcome",
    "HashedBagEmbedder",
    "NGramScorer",
    "OrderResult",
    "PromptTemplate",
    "RenderedPair",
    "Sample",
    "ScoreRecord",
    "ScoreStats",
    "TokenLogProbs",
    "__version__",
    "adjudicate",
    "build_judge_prompt",
    "builtin_template",
    "compute_stats",
    "conditioned_answer_score",
    "direct_answer_score",
    "filter_misaligned",
    "ifd_ratio",
    "kmeans",
    "load_dataset",
    "majority_outcome",
    "parse_judge_reply",
    "pca_project",
    "per_order_result",
    "render",
    "run_pipeline",
    "save_dataset",
    "score_dataset",
    "select",
    "tally_majority",
    "tokenize",
    "winning_score",
]
