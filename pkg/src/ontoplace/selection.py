"""Slate re-ranking: cross-encoder scoring rows, zero-shot LLM prompting,
explanation templating for instruction tuning, and answer parsing.

Option numbering is owned by the slate: row index i, prompt option i, and
slate position i always refer to the same candidate edge.
"""

from __future__ import annotations

import json
import math
import re
from collections.abc import Iterable
from dataclasses import dataclass, replace

from .candidates import CandidateSlate, ScoredEdge, rank_edges
from .embeddings import (
    DEFAULT_CONCEPT_BUDGET,
    DEFAULT_CONTEXT_BUDGET,
    CLS,
    ContextualMention,
    serialize_edge,
    serialize_mention,
)
from .errors import PromptBudgetError, ProviderProtocolError
from .lexical import Tokenizer
from .ontology import Edge, Ontology
from .providers import CompletionClient, LlmEndpoint, ScorerClient

OPTION_ARROW = " → "  # " → "

INSTRUCTION = (
    "Can you identify the correct ontological edges for the given mention "
    "(marked with *) based on the context? The ontological edge consists of a "
    "pair where the left concept represents the parent of the mention, and the "
    "right concept represents the child of the mention. If the mention is a "
    "leaf node, the right side of the edges will be NULL. If the context is "
    "not relevant to the options, make your decision solely based on the "
    "mention itself. There may be multiple correct options. Please answer "
    "briefly using option numbers, separated by commas. If none of the options "
    "is correct, please answer None."
)

RESPONSE_HEADER = "### Response:"
EXPLANATION_HEADER = "### Explanation:"
FINAL_ANSWERS_PHRASE = "the final answers are"

#: Fraction of the endpoint token budget kept free: our whitespace token
#: count only approximates the vendor tokenizer.
BUDGET_SAFETY_MARGIN = 0.05


@dataclass(frozen=True)
class CrossInputRow:
    text: str
    candidate_index: int


def build_cross_rows(
    m: ContextualMention,
    slate: CandidateSlate,
    onto: Ontology,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    concept_budget: int = DEFAULT_CONCEPT_BUDGET,
) -> list[CrossInputRow]:
    """One mention-edge concatenation row per slate entry, index-aligned."""
    if not slate.edges:
        raise ValueError("slate must be non-empty")
    mention_part = serialize_mention(m, context_budget, with_context=True)
    rows = []
    for i, scored in enumerate(slate.edges):
        edge_part = serialize_edge(onto, scored.edge, concept_budget)
        if edge_part.startswith(CLS + " "):
            edge_part = edge_part[len(CLS) + 1 :]
        rows.append(CrossInputRow(text=f"{mention_part} {edge_part}", candidate_index=i))
    return rows


def bce_multilabel_loss(scores: list[float], labels: list[int]) -> float:
    """Binary cross-entropy after a sigmoid, summed over candidates.

    Uses the log-sum-exp form max(s,0) - s*y + log(1+exp(-|s|)), which stays
    finite for scores far outside the sigmoid's linear range.
    """
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    if not scores:
        raise ValueError("scores must be non-empty")
    total = 0.0
    for s, y in zip(scores, labels):
        if y not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {y!r}")
        total += max(s, 0.0) - s * y + math.log1p(math.exp(-abs(s)))
    return total


def select_scored(
    client: ScorerClient, slate: CandidateSlate, rows: list[CrossInputRow]
) -> CandidateSlate:
    """Re-rank the slate by the scorer's multi-label scores."""
    if not rows:
        raise ValueError("rows must be non-empty")
    if len(rows) != len(slate.edges):
        raise ValueError(f"{len(rows)} rows for a slate of {len(slate.edges)}")
    scores = client.score([r.text for r in rows])
    if len(scores) != len(rows):
        raise ProviderProtocolError(f"expected {len(rows)} scores, got {len(scores)}")
    rescored = [
        replace(slate.edges[row.candidate_index], score=score)
        for row, score in zip(rows, scores)
    ]
    return replace(slate, edges=tuple(rank_edges(rescored)))


# ---------------------------------------------------------------------------
# Prompting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    """The textual pieces of one option-selection prompt.

    ``options`` is index-aligned with the slate that produced it; leaf
    children render as the literal NULL.
    """

    input_section: str
    options: tuple[str, ...]
    gold_option_indices: frozenset[int] | None = None
    explanation: str | None = None
    response: str | None = None


def render_option(onto: Ontology, edge: Edge) -> str:
    return f"{onto.label(edge.parent)}{OPTION_ARROW}{onto.label(edge.child_id)}"


def mention_in_context(m: ContextualMention) -> str:
    return f"{m.context_left}*{m.mention}*{m.context_right}"


def build_zero_shot_prompt(
    onto: Ontology, m: ContextualMention, slate: CandidateSlate
) -> PromptBundle:
    """Compose the option-selection prompt for one slate.

    The input section carries the fixed instruction, the mention wrapped in
    asterisks inside its contexts, and the numbered option list; identical
    inputs produce byte-identical text.
    """
    if not slate.edges:
        raise ValueError("slate must be non-empty")
    options = tuple(render_option(onto, s.edge) for s in slate.edges)
    option_lines = "\n".join(f"{i}.{text}" for i, text in enumerate(options))
    input_section = (
        "### Input:\n"
        f"{INSTRUCTION}\n"
        "\n"
        "mention in context:\n"
        f"{mention_in_context(m)}\n"
        "\n"
        "options:\n"
        f"{option_lines}"
    )
    return PromptBundle(input_section=input_section, options=options)


def zero_shot_prompt_text(bundle: PromptBundle) -> str:
    return f"{bundle.input_section}\n\n{RESPONSE_HEADER}\n"


def prompt_token_count(text: str, tok: Tokenizer | None = None) -> int:
    """Approximate sub-token count used for budget checks."""
    return len((tok or Tokenizer()).tokenize(text))


def check_prompt_budget(text: str, endpoint: LlmEndpoint, tok: Tokenizer | None = None):
    budget = int(endpoint.max_input_tokens * (1 - BUDGET_SAFETY_MARGIN))
    count = prompt_token_count(text, tok)
    if count > budget:
        raise PromptBudgetError(
            f"prompt needs ~{count} tokens, budget is {budget} "
            f"({endpoint.max_input_tokens} minus safety margin)"
        )


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParsedOptions:
    """Outcome of parsing a model answer against k options.

    ``indices`` keeps the model's first-mention order (it is the ranking);
    a "None" answer yields empty indices without the failure flag.
    """

    indices: tuple[int, ...]
    out_of_range: int = 0
    failed: bool = False


_NONE_WORD = re.compile(r"\bnone\b", re.IGNORECASE)


def parse_option_response(text: str, k: int) -> ParsedOptions:
    """Extract option numbers from the first line that carries an answer."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for line in text.splitlines():
        numbers = re.findall(r"\d+", line)
        if numbers:
            indices: list[int] = []
            out_of_range = 0
            for token in numbers:
                value = int(token)
                if value >= k:
                    out_of_range += 1
                elif value not in indices:
                    indices.append(value)
            return ParsedOptions(tuple(indices), out_of_range=out_of_range)
        if _NONE_WORD.search(line):
            return ParsedOptions(())
    return ParsedOptions((), failed=True)


def parse_explained_response(text: str, k: int) -> ParsedOptions:
    """Parse an explanation-style output.

    Prefers the text after the last response header; falls back to the
    "final answers" clause of the explanation.
    """
    header_at = text.rfind(RESPONSE_HEADER)
    if header_at != -1:
        parsed = parse_option_response(text[header_at + len(RESPONSE_HEADER) :], k)
        if not parsed.failed:
            return parsed
    clause_at = text.lower().rfind(FINAL_ANSWERS_PHRASE)
    if clause_at != -1:
        parsed = parse_option_response(
            text[clause_at + len(FINAL_ANSWERS_PHRASE) :], k
        )
        if not parsed.failed:
            return parsed
    return ParsedOptions((), failed=True)


# ---------------------------------------------------------------------------
# Explanations and the instruction-tuning corpus
# ---------------------------------------------------------------------------


def _render_list(items: list[str]) -> str:
    return ", ".join(items) if items else "None"


def build_explanation(
    onto: Ontology, m: ContextualMention, slate: CandidateSlate, gold: Iterable[Edge]
) -> str:
    """Narrative reasoning trace from candidate options to the gold options.

    Walks the fixed five-step template: candidate parents, correct parents,
    options narrowed by parent, children of those options, correct children,
    final option numbers. Empty steps render as "None".
    """
    if not slate.edges:
        raise ValueError("slate must be non-empty")
    gold = set(gold)
    gold_parents = {e.parent for e in gold}
    gold_children = {e.child_id for e in gold}

    parent_ids = list(dict.fromkeys(s.edge.parent for s in slate.edges))
    correct_parent_ids = [p for p in parent_ids if p in gold_parents]
    narrowed = [
        i for i, s in enumerate(slate.edges) if s.edge.parent in set(correct_parent_ids)
    ]
    child_ids = list(dict.fromkeys(slate.edges[i].edge.child_id for i in narrowed))
    correct_child_ids = [c for c in child_ids if c in gold_children]
    final = [i for i, s in enumerate(slate.edges) if s.edge in gold]

    return (
        f"From the parents in the options above, including "
        f"{_render_list([onto.label(p) for p in parent_ids])}, "
        f"the correct parents of the mention, {m.mention}, include "
        f"{_render_list([onto.label(p) for p in correct_parent_ids])}. "
        f"Thus the options are narrowed down to "
        f"{_render_list([str(i) for i in narrowed])}. "
        f"From the children in the narrowed options, including "
        f"{_render_list([onto.label(c) for c in child_ids])}, "
        f"the correct children of the mention, {m.mention}, include "
        f"{_render_list([onto.label(c) for c in correct_child_ids])}. "
        f"Thus, the final answers are {_render_list([str(i) for i in final])}."
    )


def gold_option_indices(slate: CandidateSlate, gold: Iterable[Edge]) -> list[int]:
    gold = set(gold)
    return [i for i, s in enumerate(slate.edges) if s.edge in gold]


def build_tuning_record(
    onto: Ontology, m: ContextualMention, slate: CandidateSlate, gold: Iterable[Edge]
) -> dict:
    """One instruction-tuning example: input, explanation, response."""
    gold = list(gold)
    bundle = build_zero_shot_prompt(onto, m, slate)
    explanation = build_explanation(onto, m, slate, gold)
    indices = gold_option_indices(slate, gold)
    response = ",".join(str(i) for i in indices) if indices else "None"
    text = (
        f"{bundle.input_section}\n"
        f"\n{EXPLANATION_HEADER}\n{explanation}\n"
        f"\n{RESPONSE_HEADER}\n{response}\n"
    )
    return {
        "mention": m.mention,
        "gold_option_indices": indices,
        "response": response,
        "text": text,
    }


def emit_instruction_tuning_corpus(
    onto: Ontology,
    mentions: Iterable[ContextualMention],
    slates: Iterable[CandidateSlate],
) -> Iterable[dict]:
    """Tuning records for aligned (mention, slate) pairs, in input order."""
    for m, slate in zip(mentions, slates):
        if m.gold_edges is None:
            raise ValueError(f"mention {m.mention!r} has no gold edges")
        yield build_tuning_record(onto, m, slate, m.gold_edges)


def write_tuning_corpus(records: Iterable[dict], path: str):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# LLM selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LlmSelection:
    slate: CandidateSlate
    parsed: ParsedOptions
    prompt: str


def rerank_by_option_indices(
    slate: CandidateSlate, indices: Iterable[int]
) -> CandidateSlate:
    """Selected options first in the given order; the rest keep prior order."""
    chosen = [i for i in indices if 0 <= i < len(slate.edges)]
    chosen_set = set(chosen)
    reordered = [slate.edges[i] for i in chosen]
    reordered.extend(s for i, s in enumerate(slate.edges) if i not in chosen_set)
    return replace(slate, edges=tuple(reordered))


def select_llm(
    client: CompletionClient,
    onto: Ontology,
    m: ContextualMention,
    slate: CandidateSlate,
    tok: Tokenizer | None = None,
    parse: str = "plain",
) -> LlmSelection:
    """Prompt the completion endpoint and reorder the slate by its answer.

    ``parse`` is "plain" for zero-shot answers or "explained" for
    explanation-tuned outputs. Parse failures and "None" answers leave the
    slate unchanged, with the outcome recorded.
    """
    bundle = build_zero_shot_prompt(onto, m, slate)
    prompt = zero_shot_prompt_text(bundle)
    check_prompt_budget(prompt, client.endpoint, tok)
    answer = client.complete(prompt)
    if parse == "explained":
        parsed = parse_explained_response(answer, len(slate.edges))
    else:
        parsed = parse_option_response(answer, len(slate.edges))
    if parsed.failed or not parsed.indices:
        return LlmSelection(slate=slate, parsed=parsed, prompt=prompt)
    return LlmSelection(
        slate=rerank_by_option_indices(slate, parsed.indices),
        parsed=parsed,
        prompt=prompt,
    )
