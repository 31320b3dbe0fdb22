"""Inverted-index concept search scored by inverse document frequency.

Scores sum ln(|D| / df(t)) over the sub-tokens shared between a mention and a
concept verbalization. The log base is natural log, surfaced nowhere as a
knob except here so index-based and from-scratch computations agree.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

from .errors import UnknownConceptError
from .ontology import Concept, verbalize

#: Word-boundary marker used by SentencePiece-style vocabularies.
BOUNDARY_MARKER = "▁"

MODE_WHITESPACE = "whitespace"
MODE_GREEDY = "greedy"


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic text-to-subtoken mapping.

    ``whitespace`` lowercases and splits on whitespace. ``greedy`` segments
    each whitespace word by longest-match against the vocabulary; pieces
    carrying a leading boundary marker only match at word starts, and a
    character with no matching piece becomes its own token.
    """

    vocabulary: tuple[str, ...] = ()
    mode: str = MODE_WHITESPACE

    def __post_init__(self):
        if self.mode not in (MODE_WHITESPACE, MODE_GREEDY):
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        if self.mode == MODE_GREEDY and not self.vocabulary:
            raise ValueError("greedy mode requires a vocabulary")

    def tokenize(self, text: str) -> list[str]:
        words = text.lower().split()
        if self.mode == MODE_WHITESPACE:
            return words
        start_table, cont_table, max_len = self._tables()
        tokens: list[str] = []
        for word in words:
            tokens.extend(_greedy_segment(word, start_table, cont_table, max_len))
        return tokens

    def detokenize(self, tokens: Iterable[str]) -> str:
        if self.mode == MODE_WHITESPACE:
            return " ".join(tokens)
        return "".join(t.lstrip(BOUNDARY_MARKER) if t.startswith(BOUNDARY_MARKER) else t for t in tokens)

    def _tables(self) -> tuple[dict[str, str], dict[str, str], int]:
        has_markers = any(p.startswith(BOUNDARY_MARKER) for p in self.vocabulary)
        start: dict[str, str] = {}
        cont: dict[str, str] = {}
        for piece in self.vocabulary:
            if piece.startswith(BOUNDARY_MARKER):
                text = piece[len(BOUNDARY_MARKER):]
                if text:
                    start.setdefault(text, piece)
            else:
                cont.setdefault(piece, piece)
                if not has_markers:
                    start.setdefault(piece, piece)
        max_len = max((len(t) for t in (*start, *cont)), default=1)
        return start, cont, max_len


def _greedy_segment(
    word: str, start_table: dict[str, str], cont_table: dict[str, str], max_len: int
) -> list[str]:
    tokens: list[str] = []
    pos = 0
    at_start = True
    while pos < len(word):
        table = start_table if at_start else cont_table
        for length in range(min(max_len, len(word) - pos), 0, -1):
            candidate = word[pos : pos + length]
            if candidate in table:
                tokens.append(table[candidate])
                pos += length
                break
        else:
            tokens.append(word[pos])
            pos += 1
        at_start = False
    return tokens


def load_vocabulary(lines: Iterable[str]) -> tuple[str, ...]:
    """One subword piece per line; blank lines ignored."""
    pieces = []
    for line in lines:
        piece = line.rstrip("\n")
        if piece:
            pieces.append(piece)
    return tuple(pieces)


@dataclass(frozen=True)
class InvertedIndex:
    postings: dict[str, frozenset[str]]
    corpus_size: int
    token_sets: dict[str, frozenset[str]]
    tokenizer: Tokenizer = field(default_factory=Tokenizer)


def build_index(concepts: Iterable[Concept], tok: Tokenizer) -> InvertedIndex:
    """Index every concept's verbalization under its sub-tokens."""
    token_sets: dict[str, frozenset[str]] = {}
    postings: dict[str, set[str]] = {}
    for concept in concepts:
        tokens = frozenset(tok.tokenize(verbalize(concept)))
        token_sets[concept.id] = tokens
        for token in tokens:
            postings.setdefault(token, set()).add(concept.id)
    if not token_sets:
        raise ValueError("cannot index an empty concept list")
    return InvertedIndex(
        postings={t: frozenset(v) for t, v in postings.items()},
        corpus_size=len(token_sets),
        token_sets=token_sets,
        tokenizer=tok,
    )


def idf_similarity(
    idx: InvertedIndex, tok: Tokenizer, mention_text: str, concept_id: str
) -> float:
    """Sum of ln(|D| / df(t)) over tokens shared by mention and concept."""
    if concept_id not in idx.token_sets:
        raise UnknownConceptError(f"concept {concept_id} is not indexed")
    mention_tokens = set(tok.tokenize(mention_text))
    score = 0.0
    for token in idx.token_sets[concept_id] & mention_tokens:
        score += math.log(idx.corpus_size / len(idx.postings[token]))
    return score


def search_concepts_lexical(
    idx: InvertedIndex, tok: Tokenizer, mention_text: str, top_n: int
) -> list[tuple[str, float]]:
    """Concepts with positive idf score, best first; ties broken by id."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scores: dict[str, float] = {}
    for token in set(tok.tokenize(mention_text)):
        matched = idx.postings.get(token)
        if not matched:
            continue
        idf = math.log(idx.corpus_size / len(matched))
        if idf <= 0.0:
            continue
        for concept_id in matched:
            scores[concept_id] = scores.get(concept_id, 0.0) + idf
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:top_n]


def save_index(idx: InvertedIndex, path: str):
    payload = {
        "corpus_size": idx.corpus_size,
        "tokenizer": {"mode": idx.tokenizer.mode, "vocabulary": list(idx.tokenizer.vocabulary)},
        "token_sets": {cid: sorted(tokens) for cid, tokens in sorted(idx.token_sets.items())},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def load_index(path: str) -> InvertedIndex:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    tok = Tokenizer(
        vocabulary=tuple(payload["tokenizer"]["vocabulary"]),
        mode=payload["tokenizer"]["mode"],
    )
    token_sets = {cid: frozenset(tokens) for cid, tokens in payload["token_sets"].items()}
    postings: dict[str, set[str]] = {}
    for cid, tokens in token_sets.items():
        for token in tokens:
            postings.setdefault(token, set()).add(cid)
    return InvertedIndex(
        postings={t: frozenset(v) for t, v in postings.items()},
        corpus_size=payload["corpus_size"],
        token_sets=token_sets,
        tokenizer=tok,
    )
