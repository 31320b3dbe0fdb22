"""Place new concept mentions into candidate subsumption edges of an ontology.

The pipeline has three stages: edge search (lexical, fixed-embedding, or
edge bi-encoder), edge formation and enrichment over the ontology structure,
and edge selection (cross-encoder scoring or LLM prompting). A curation
service and CLI wire the stages together.
"""

from .candidates import (
    CandidateSlate,
    EdgeScorer,
    ScoredEdge,
    apply_leaf_rule,
    enrich_edges,
    form_edges,
    generate_candidates,
    score_edge,
)
from .embeddings import (
    ContextualMention,
    EmbeddingStore,
    TripletLossConfig,
    cosine,
    dot_score,
    embed_texts,
    serialize_edge,
    serialize_mention,
    triplet_loss,
)
from .evaluation import (
    BenchmarkConfig,
    EvaluationReport,
    PlacementDataset,
    PredictionRecord,
    inr_all,
    inr_any,
    inr_at_k,
    load_dataset,
    run_benchmark,
)
from .lexical import (
    InvertedIndex,
    Tokenizer,
    build_index,
    idf_similarity,
    search_concepts_lexical,
)
from .ontology import (
    NULL_ID,
    Concept,
    Edge,
    Ontology,
    enumerate_edge_space,
    export_ontology,
    insert_placement,
    load_ontology,
    verbalize,
)
from .selection import (
    ParsedOptions,
    PromptBundle,
    bce_multilabel_loss,
    build_cross_rows,
    build_explanation,
    build_zero_shot_prompt,
    parse_explained_response,
    parse_option_response,
    select_llm,
    select_scored,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "CandidateSlate",
    "Concept",
    "ContextualMention",
    "Edge",
    "EdgeScorer",
    "EmbeddingStore",
    "EvaluationReport",
    "InvertedIndex",
    "NULL_ID",
    "Ontology",
    "ParsedOptions",
    "PlacementDataset",
    "PredictionRecord",
    "PromptBundle",
    "ScoredEdge",
    "Tokenizer",
    "TripletLossConfig",
    "apply_leaf_rule",
    "bce_multilabel_loss",
    "build_cross_rows",
    "build_explanation",
    "build_index",
    "build_zero_shot_prompt",
    "cosine",
    "dot_score",
    "embed_texts",
    "enrich_edges",
    "enumerate_edge_space",
    "export_ontology",
    "form_edges",
    "generate_candidates",
    "idf_similarity",
    "inr_all",
    "inr_any",
    "inr_at_k",
    "insert_placement",
    "load_dataset",
    "load_ontology",
    "parse_explained_response",
    "parse_option_response",
    "run_benchmark",
    "score_edge",
    "search_concepts_lexical",
    "select_llm",
    "select_scored",
    "serialize_edge",
    "serialize_mention",
    "triplet_loss",
    "verbalize",
]
