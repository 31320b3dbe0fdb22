"""Embedding store, mention/edge text layouts, similarities, and the
contrastive training loss as a pure function.

No model runs in-process: vectors come from an embedding endpoint (see
``providers``) and are cached here keyed by the exact serialized text.
"""

from __future__ import annotations

import math
import threading
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ProviderProtocolError
from .ontology import Edge, Ontology
from .providers import EmbeddingClient

CLS = "[CLS]"
SEP = "[SEP]"
MENTION_START = "[M_s]"
MENTION_END = "[M_e]"
PARENT_TAG = "[P-TAG]"
CHILD_TAG = "[C-TAG]"
NULL_TOKEN = "[NULL]"

DEFAULT_CONTEXT_BUDGET = 32
DEFAULT_CONCEPT_BUDGET = 128


@dataclass(frozen=True)
class ContextualMention:
    """A surface form with its surrounding document text.

    Contexts may be empty; gold edges are present for evaluation data.
    """

    mention: str
    context_left: str = ""
    context_right: str = ""
    gold_edges: tuple[Edge, ...] | None = None

    def __post_init__(self):
        if not self.mention:
            raise ValueError("mention must be non-empty")


@dataclass(frozen=True)
class TripletLossConfig:
    margin: float = 0.2

    def __post_init__(self):
        if not math.isfinite(self.margin) or self.margin < 0:
            raise ValueError("margin must be finite and >= 0")


def serialize_mention(
    m: ContextualMention,
    max_context_subtokens: int = DEFAULT_CONTEXT_BUDGET,
    with_context: bool = True,
) -> str:
    """``[CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP]``, trimmed to budget.

    The budget counts whitespace subtokens over the whole serialization.
    Context words furthest from the mention are dropped first, the left
    context from its left end and the right context from its right end.
    """
    left = m.context_left.split() if with_context else []
    right = m.context_right.split() if with_context else []
    core = [MENTION_START, *m.mention.split(), MENTION_END]
    fixed = len(core) + 2  # [CLS] and [SEP]
    room = max(0, max_context_subtokens - fixed)
    left_quota = room // 2
    right_quota = room - left_quota
    if len(left) < left_quota:
        right_quota += left_quota - len(left)
        left_quota = len(left)
    if len(right) < right_quota:
        left_quota = min(len(left), left_quota + right_quota - len(right))
        right_quota = len(right)
    kept_left = left[len(left) - left_quota :] if left_quota else []
    kept_right = right[:right_quota]
    return " ".join([CLS, *kept_left, *core, *kept_right, SEP])


def serialize_edge(
    onto: Ontology, edge: Edge, max_subtokens: int = DEFAULT_CONCEPT_BUDGET
) -> str:
    """``[CLS] parent [P-TAG] child [C-TAG] [SEP]`` with ``[NULL]`` for leaves."""
    onto.edge_endpoints_exist(edge)
    parent_tokens = onto.label(edge.parent).split()
    child_tokens = [NULL_TOKEN] if edge.is_leaf else onto.label(edge.child).split()
    overflow = len(parent_tokens) + len(child_tokens) + 4 - max_subtokens
    while overflow > 0 and (len(parent_tokens) > 1 or len(child_tokens) > 1):
        # trim the longer side from its tail; parent yields first on ties
        if len(parent_tokens) >= len(child_tokens) and len(parent_tokens) > 1:
            parent_tokens.pop()
        else:
            child_tokens.pop()
        overflow -= 1
    return " ".join([CLS, *parent_tokens, PARENT_TAG, *child_tokens, CHILD_TAG, SEP])


class EmbeddingStore:
    """Thread-safe map from serialized text to a fixed-dimension vector."""

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def get(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise KeyError(f"no embedding cached for key {key!r}") from None

    def put(self, key: str, vector: np.ndarray):
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding vectors must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite embedding for key {key!r}")
        with self._lock:
            if self.dim is None:
                self.dim = arr.shape[0]
            elif arr.shape[0] != self.dim:
                raise ValueError(
                    f"dimension mismatch: store has {self.dim}, vector has {arr.shape[0]}"
                )
            self._entries[key] = arr

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(f"dim={self.dim or 0}\n")
            for key in sorted(self._entries):
                if "\t" in key or "\n" in key:
                    raise ValueError(f"store keys may not contain tabs/newlines: {key!r}")
                values = ",".join(repr(float(v)) for v in self._entries[key])
                handle.write(f"{key}\t{values}\n")

    @classmethod
    def load(cls, path: str) -> "EmbeddingStore":
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().strip()
            if not header.startswith("dim="):
                raise ValueError(f"{path}: missing dim= header")
            dim = int(header[4:])
            store = cls(dim=dim or None)
            for line in handle:
                line = line.rstrip("\n")
                if not line:
                    continue
                key, _, values = line.partition("\t")
                store.put(key, np.array([float(v) for v in values.split(",")]))
        return store


def embed_texts(
    client: EmbeddingClient,
    texts: list[str],
    store: EmbeddingStore | None = None,
    parallelism: int = 1,
    batch_size: int = 64,
) -> list[np.ndarray]:
    """Embed texts in order, serving cached keys from ``store`` and filling it.

    Only cache misses reach the endpoint; batches may be issued concurrently
    up to ``parallelism`` workers.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    if store is None:
        store = EmbeddingStore()
    misses = [t for t in dict.fromkeys(texts) if t not in store]
    if misses:
        batches = [misses[i : i + batch_size] for i in range(0, len(misses), batch_size)]
        if parallelism > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = list(pool.map(client.embed, batches))
        else:
            results = [client.embed(b) for b in batches]
        for batch, vectors in zip(batches, results):
            if len(vectors) != len(batch):
                raise ProviderProtocolError(
                    f"expected {len(batch)} vectors, got {len(vectors)}"
                )
            for text, vector in zip(batch, vectors):
                store.put(text, vector)
    return [store.get(t) for t in texts]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero-norm vectors")
    return float(np.dot(u, v) / (nu * nv))


def dot_score(v_m: np.ndarray, v_e: np.ndarray) -> float:
    v_m = np.asarray(v_m, dtype=np.float64)
    v_e = np.asarray(v_e, dtype=np.float64)
    if v_m.shape != v_e.shape:
        raise ValueError(f"dimension mismatch: {v_m.shape} vs {v_e.shape}")
    return float(np.dot(v_m, v_e))


def triplet_loss(
    v_m: np.ndarray,
    gold: np.ndarray,
    negatives: Iterable[np.ndarray],
    cfg: TripletLossConfig = TripletLossConfig(),
) -> float:
    """Max-margin hinge summed over negatives: sum max(0, a - s_gold + s_neg)."""
    gold_score = dot_score(v_m, gold)
    loss = 0.0
    for neg in negatives:
        loss += max(0.0, cfg.margin - gold_score + dot_score(v_m, neg))
    return loss


def search_concepts_embedding(
    store: EmbeddingStore,
    mention_key: str,
    concept_keys: Mapping[str, str],
    top_n: int,
) -> list[tuple[str, float]]:
    """Rank concept ids by cosine to the mention vector; ties by id."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    mention_vec = store.get(mention_key)
    scored = [
        (cid, cosine(mention_vec, store.get(key))) for cid, key in concept_keys.items()
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_n]


def search_edges_embedding(
    store: EmbeddingStore,
    mention_key: str,
    edge_keys: Mapping[Edge, str],
    top_n: int,
) -> list[tuple[Edge, float]]:
    """Rank edges by dot product to the mention vector; total tie-break."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    mention_vec = store.get(mention_key)
    scored = [
        (edge, dot_score(mention_vec, store.get(key))) for edge, key in edge_keys.items()
    ]
    scored.sort(key=lambda item: (-item[1], item[0].sort_key()))
    return scored[:top_n]
