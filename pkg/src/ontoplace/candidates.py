"""Candidate edge production: formation from seed concepts, enrichment from
seed edges, edge scoring, and the ranked top-k slate pipeline.

The three retrieval methods share one pipeline skeleton: rank seeds, expand
to candidate edges, score, cut to k/2 seeds, enrich one hop outward, re-score
everything, cut to k.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable
from dataclasses import dataclass, replace

from .embeddings import (
    DEFAULT_CONCEPT_BUDGET,
    DEFAULT_CONTEXT_BUDGET,
    ContextualMention,
    EmbeddingStore,
    cosine,
    dot_score,
    embed_texts,
    search_concepts_embedding,
    search_edges_embedding,
    serialize_edge,
    serialize_mention,
)
from .errors import UnknownConceptError
from .lexical import InvertedIndex, Tokenizer, idf_similarity, search_concepts_lexical
from .ontology import Edge, Ontology, enumerate_edge_space, verbalize
from .providers import EmbeddingClient

METHOD_LEXICAL = "lexical"
METHOD_FIXED = "fixed"
METHOD_BIENCODER = "biencoder"
METHODS = (METHOD_LEXICAL, METHOD_FIXED, METHOD_BIENCODER)

KIND_FIXED_COSINE = "fixed-cosine-mean"
KIND_DOT = "dot-product"
KIND_LEXICAL_IDF = "lexical-idf-mean"

ORIGIN_FORMED = "seed-concept-formed"
ORIGIN_SEED_EDGE = "seed-edge"
ORIGIN_ENRICHED = "enriched"
ORIGIN_LEAF_ENRICHED = "leaf-enriched"

#: Leaf-rule boost above the current maximum score; strict priority without
#: assuming anything about score scale.
LEAF_RULE_EPSILON = 1e-6

#: Hard cap on how many ranked seed concepts formation may consume.
SEED_CONCEPT_CAP = 50


@dataclass(frozen=True)
class ScoredEdge:
    edge: Edge
    score: float
    origin: str

    def rank_key(self) -> tuple:
        return (-self.score, *self.edge.sort_key())


@dataclass(frozen=True)
class CandidateSlate:
    """Ordered top-k candidates for one mention. List order is the ranking."""

    mention: ContextualMention
    k: int
    edges: tuple[ScoredEdge, ...]

    def __post_init__(self):
        if len(self.edges) > self.k:
            raise ValueError(f"slate holds {len(self.edges)} edges but k={self.k}")
        plain = [s.edge for s in self.edges]
        if len(set(plain)) != len(plain):
            raise ValueError("slate contains duplicate edges")

    def plain_edges(self) -> list[Edge]:
        return [s.edge for s in self.edges]


def form_edges(onto: Ontology, concept_id: str) -> set[Edge]:
    """All one-hop edges containing the concept, two-hop edges through it,
    and its leaf edge.

    For concept A with direct parents P_i and children C_j this is
    {P_i->A} | {A->C_j} | {P_i->C_j} | {A->NULL}. Self-pairs arising from
    cycles are skipped.
    """
    parents = onto.parents(concept_id)
    children = onto.children(concept_id)
    edges: set[Edge] = set()
    for p in parents:
        edges.add(Edge(p, concept_id))
    for c in children:
        edges.add(Edge(concept_id, c))
    for p in parents:
        for c in children:
            if p != c:
                edges.add(Edge(p, c))
    edges.add(Edge(concept_id, None))
    return edges


def enrich_edges(onto: Ontology, seeds: Iterable[Edge]) -> set[Edge]:
    """One-hop expansion of every seed edge, deduplicated globally.

    A seed P->C expands to ({P} | parents(P)) x ({C} | children(C)); every
    parent-side concept of a non-leaf seed additionally contributes its leaf
    edge. A leaf seed P->NULL expands on the parent side only.
    """
    out: set[Edge] = set()
    for seed in seeds:
        onto.edge_endpoints_exist(seed)
        parent_side = {seed.parent} | set(onto.parents(seed.parent))
        if seed.child is None:
            for p in parent_side:
                out.add(Edge(p, None))
            continue
        child_side = {seed.child} | set(onto.children(seed.child))
        for p in parent_side:
            for c in child_side:
                if p != c:
                    out.add(Edge(p, c))
            out.add(Edge(p, None))
    return out


@dataclass
class EdgeScorer:
    """Scoring backend for one retrieval method.

    ``kind`` picks the formula; the matching backing fields must be set
    (index+tokenizer for lexical, store for the embedding kinds, plus an
    optional client to fill the store on demand).
    """

    kind: str
    ontology: Ontology
    index: InvertedIndex | None = None
    tokenizer: Tokenizer | None = None
    store: EmbeddingStore | None = None
    client: EmbeddingClient | None = None
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    concept_budget: int = DEFAULT_CONCEPT_BUDGET

    def __post_init__(self):
        if self.kind not in (KIND_FIXED_COSINE, KIND_DOT, KIND_LEXICAL_IDF):
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if self.kind == KIND_LEXICAL_IDF and (self.index is None or self.tokenizer is None):
            raise ValueError("lexical scorer requires an index and tokenizer")
        if self.kind in (KIND_FIXED_COSINE, KIND_DOT) and self.store is None:
            self.store = EmbeddingStore()

    # -- store keys -------------------------------------------------------
    def mention_key(self, m: ContextualMention) -> str:
        # Raw mention text for the fixed path; the bi-encoder sees the
        # marker layout with contexts.
        if self.kind == KIND_DOT:
            return serialize_mention(m, self.context_budget, with_context=True)
        return m.mention

    def concept_key(self, concept_id: str) -> str:
        return verbalize(self.ontology.concept(concept_id))

    def edge_key(self, edge: Edge) -> str:
        return serialize_edge(self.ontology, edge, self.concept_budget)

    def ensure_embedded(self, texts: list[str], parallelism: int = 1):
        missing = [t for t in dict.fromkeys(texts) if t not in self.store]
        if not missing:
            return
        if self.client is None:
            raise KeyError(f"embedding store is missing {len(missing)} keys and no client is set")
        embed_texts(self.client, missing, self.store, parallelism=parallelism)

    def concept_similarity(self, m: ContextualMention, concept_id: str) -> float:
        """Mention-to-concept similarity used by Eq.-2-style edge scores."""
        if self.kind == KIND_LEXICAL_IDF:
            return idf_similarity(self.index, self.tokenizer, m.mention, concept_id)
        if self.kind == KIND_FIXED_COSINE:
            self.ensure_embedded([self.mention_key(m), self.concept_key(concept_id)])
            return cosine(
                self.store.get(self.mention_key(m)),
                self.store.get(self.concept_key(concept_id)),
            )
        raise ValueError("concept similarity is undefined for the dot-product kind")


def score_edge(scorer: EdgeScorer, m: ContextualMention, edge: Edge) -> float:
    """Score one edge for one mention.

    The mean-similarity kinds average the mention's similarity to parent and
    child and are undefined for leaf edges (route those through the leaf
    rule); the dot-product kind scores the serialized edge uniformly.
    """
    scorer.ontology.edge_endpoints_exist(edge)
    if scorer.kind == KIND_DOT:
        mention_key = scorer.mention_key(m)
        edge_key = scorer.edge_key(edge)
        scorer.ensure_embedded([mention_key, edge_key])
        return dot_score(scorer.store.get(mention_key), scorer.store.get(edge_key))
    if edge.is_leaf:
        raise ValueError(
            f"{scorer.kind} cannot score the leaf edge {edge.parent}->NULL directly"
        )
    return (
        scorer.concept_similarity(m, edge.parent)
        + scorer.concept_similarity(m, edge.child)
    ) / 2.0


def _score_with_leaf_default(
    scorer: EdgeScorer, m: ContextualMention, edge: Edge
) -> float:
    # Mean-similarity kinds have no child term for leaf edges; treat the
    # missing child as zero similarity so leaf edges stay rankable.
    if edge.is_leaf and scorer.kind != KIND_DOT:
        return scorer.concept_similarity(m, edge.parent) / 2.0
    return score_edge(scorer, m, edge)


def apply_leaf_rule(
    onto: Ontology,
    top_seed_concept: str,
    scored: list[ScoredEdge],
    epsilon: float = LEAF_RULE_EPSILON,
) -> list[ScoredEdge]:
    """Prioritise leaf edges when the top seed concept is itself a leaf.

    Every NULL-child edge gets the current maximum score plus epsilon and
    moves ahead of all non-leaf edges; relative order within each group is
    preserved. Set membership never changes.
    """
    if not scored:
        raise ValueError("scored edge list must be non-empty")
    if not onto.is_leaf(top_seed_concept):
        return list(scored)
    boosted = max(s.score for s in scored) + epsilon
    leaf = [replace(s, score=boosted) for s in scored if s.edge.is_leaf]
    rest = [s for s in scored if not s.edge.is_leaf]
    return leaf + rest


def rank_edges(entries: list[ScoredEdge]) -> list[ScoredEdge]:
    return sorted(entries, key=ScoredEdge.rank_key)


def generate_candidates(
    onto: Ontology,
    m: ContextualMention,
    method: str,
    k: int,
    *,
    index: InvertedIndex | None = None,
    tokenizer: Tokenizer | None = None,
    store: EmbeddingStore | None = None,
    client: EmbeddingClient | None = None,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    concept_budget: int = DEFAULT_CONCEPT_BUDGET,
    edge_prefilter: Callable[[list[Edge]], list[Edge]] | None = None,
) -> CandidateSlate:
    """Run search, formation/enrichment, and ranking; return the top-k slate.

    ``k`` must be even and >= 2: the pipeline enriches from k/2 seed edges.
    """
    if k < 2 or k % 2 != 0:
        raise ValueError("k must be an even number >= 2")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    if method == METHOD_BIENCODER:
        scorer = EdgeScorer(
            kind=KIND_DOT,
            ontology=onto,
            store=store,
            client=client,
            context_budget=context_budget,
            concept_budget=concept_budget,
        )
        return _biencoder_slate(scorer, m, k, edge_prefilter)

    kind = KIND_LEXICAL_IDF if method == METHOD_LEXICAL else KIND_FIXED_COSINE
    scorer = EdgeScorer(
        kind=kind,
        ontology=onto,
        index=index,
        tokenizer=tokenizer,
        store=store,
        client=client,
        context_budget=context_budget,
        concept_budget=concept_budget,
    )
    return _concept_seeded_slate(scorer, m, k)


def _concept_seeded_slate(
    scorer: EdgeScorer, m: ContextualMention, k: int
) -> CandidateSlate:
    onto = scorer.ontology
    if scorer.kind == KIND_LEXICAL_IDF:
        ranked_concepts = search_concepts_lexical(
            scorer.index, scorer.tokenizer, m.mention, SEED_CONCEPT_CAP
        )
    else:
        mention_key = scorer.mention_key(m)
        concept_keys = {cid: scorer.concept_key(cid) for cid in onto.concepts}
        scorer.ensure_embedded([mention_key, *concept_keys.values()])
        ranked_concepts = search_concepts_embedding(
            scorer.store, mention_key, concept_keys, SEED_CONCEPT_CAP
        )
    if not ranked_concepts:
        return CandidateSlate(mention=m, k=k, edges=())
    top_seed_concept = ranked_concepts[0][0]

    # form edges from ranked concepts until k/2 distinct edges exist
    formed: list[Edge] = []
    seen: set[Edge] = set()
    for concept_id, _ in ranked_concepts:
        for edge in sorted(form_edges(onto, concept_id), key=Edge.sort_key):
            if edge not in seen:
                seen.add(edge)
                formed.append(edge)
        if len(formed) >= k // 2:
            break

    if scorer.kind == KIND_FIXED_COSINE:
        scorer.ensure_embedded(
            [scorer.concept_key(c) for e in formed for c in (e.parent, e.child) if c]
        )
    scored = [
        ScoredEdge(e, _score_with_leaf_default(scorer, m, e), ORIGIN_FORMED)
        for e in formed
    ]
    scored = apply_leaf_rule(onto, top_seed_concept, rank_edges(scored))
    seeds = scored[: k // 2]
    seed_edges = {s.edge for s in seeds}

    enriched = enrich_edges(onto, seed_edges)
    if scorer.kind == KIND_FIXED_COSINE:
        scorer.ensure_embedded(
            [scorer.concept_key(c) for e in enriched for c in (e.parent, e.child) if c]
        )
    rescored = [
        ScoredEdge(
            e,
            _score_with_leaf_default(scorer, m, e),
            _origin(e, seed_edges, ORIGIN_FORMED),
        )
        for e in sorted(enriched, key=Edge.sort_key)
    ]
    final = apply_leaf_rule(onto, top_seed_concept, rank_edges(rescored))
    return CandidateSlate(mention=m, k=k, edges=tuple(final[:k]))


def _biencoder_slate(
    scorer: EdgeScorer,
    m: ContextualMention,
    k: int,
    edge_prefilter: Callable[[list[Edge]], list[Edge]] | None,
) -> CandidateSlate:
    onto = scorer.ontology
    edge_space = list(enumerate_edge_space(onto))
    if edge_prefilter is not None:
        edge_space = edge_prefilter(edge_space)
    if not edge_space:
        return CandidateSlate(mention=m, k=k, edges=())
    mention_key = scorer.mention_key(m)
    edge_keys = {e: scorer.edge_key(e) for e in edge_space}
    scorer.ensure_embedded([mention_key, *edge_keys.values()])
    seeds_ranked = search_edges_embedding(scorer.store, mention_key, edge_keys, k // 2)
    seed_edges = {e for e, _ in seeds_ranked}

    enriched = enrich_edges(onto, seed_edges)
    enriched_keys = {e: scorer.edge_key(e) for e in enriched}
    scorer.ensure_embedded(list(enriched_keys.values()))
    reranked = search_edges_embedding(scorer.store, mention_key, enriched_keys, k)
    final = tuple(
        ScoredEdge(e, score, _origin(e, seed_edges, ORIGIN_SEED_EDGE))
        for e, score in reranked
    )
    return CandidateSlate(mention=m, k=k, edges=final)


def _origin(edge: Edge, seed_edges: set[Edge], seed_origin: str) -> str:
    if edge in seed_edges:
        return seed_origin
    return ORIGIN_LEAF_ENRICHED if edge.is_leaf else ORIGIN_ENRICHED


# ---------------------------------------------------------------------------
# Slate file records: one JSON object per mention.
# ---------------------------------------------------------------------------


def slate_to_record(slate: CandidateSlate) -> dict:
    record = {
        "mention": slate.mention.mention,
        "context_left": slate.mention.context_left,
        "context_right": slate.mention.context_right,
        "k": slate.k,
        "edges": [
            [s.edge.parent, s.edge.child_id, s.score, s.origin] for s in slate.edges
        ],
    }
    if slate.mention.gold_edges is not None:
        record["gold_edges"] = [
            [e.parent, e.child_id] for e in slate.mention.gold_edges
        ]
    return record


def slate_from_record(record: dict) -> CandidateSlate:
    gold = None
    if "gold_edges" in record:
        gold = tuple(Edge.from_pair(p, c) for p, c in record["gold_edges"])
    mention = ContextualMention(
        mention=record["mention"],
        context_left=record.get("context_left", ""),
        context_right=record.get("context_right", ""),
        gold_edges=gold,
    )
    edges = tuple(
        ScoredEdge(Edge.from_pair(p, c), float(score), origin)
        for p, c, score, origin in record["edges"]
    )
    return CandidateSlate(mention=mention, k=record["k"], edges=edges)


def write_slates(slates: Iterable[CandidateSlate], path: str):
    with open(path, "w", encoding="utf-8") as handle:
        for slate in slates:
            handle.write(json.dumps(slate_to_record(slate), ensure_ascii=False) + "\n")


def read_slates(path: str) -> list[CandidateSlate]:
    slates = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                slates.append(slate_from_record(json.loads(line)))
    return slates
