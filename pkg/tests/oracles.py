"""Independent brute-force transcriptions of the defining set formulas and
metrics.

Everything here works on raw (parent, child) pairs with None as the leaf
marker, and stays deliberately naive (nested loops, no shared code with the
package) so it can serve as an oracle for the real implementations.
"""

import math

Pair = tuple[str, str | None]


def oracle_edge_space(pairs: set[tuple[str, str]], concept_ids: set[str]) -> set[Pair]:
    """Direct pairs, two-hop pairs via any middle node, and leaf-to-NULL."""
    out: set[Pair] = set(pairs)
    for p1, c1 in pairs:
        for p2, c2 in pairs:
            if c1 == p2 and p1 != c2:
                out.add((p1, c2))
    nodes_with_children = {p for p, _ in pairs}
    for cid in concept_ids:
        if cid not in nodes_with_children:
            out.add((cid, None))
    return out


def oracle_form_edges(pairs: set[tuple[str, str]], a: str) -> set[Pair]:
    parents = {p for p, c in pairs if c == a}
    children = {c for p, c in pairs if p == a}
    out: set[Pair] = {(p, a) for p in parents}
    out |= {(a, c) for c in children}
    out |= {(p, c) for p in parents for c in children if p != c}
    out.add((a, None))
    return out


def oracle_enrich_edges(pairs: set[tuple[str, str]], seeds: set[Pair]) -> set[Pair]:
    out: set[Pair] = set()
    for parent, child in seeds:
        parent_side = {parent} | {p for p, c in pairs if c == parent}
        if child is None:
            out |= {(p, None) for p in parent_side}
            continue
        child_side = {child} | {c for p, c in pairs if p == child}
        out |= {(p, c) for p in parent_side for c in child_side if p != c}
        out |= {(p, None) for p in parent_side}
    return out


def oracle_inr_any(records: list[tuple[list[Pair], set[Pair]]]) -> float:
    hits = 0
    for predicted, gold in records:
        if any(p in gold for p in predicted):
            hits += 1
    return hits / len(records)


def oracle_inr_all(records: list[tuple[list[Pair], set[Pair]]]) -> float:
    hits = 0
    for predicted, gold in records:
        if all(g in predicted for g in gold):
            hits += 1
    return hits / len(records)


def oracle_inr_at_k(
    records: list[tuple[list[Pair], set[Pair]]], k: int, subset: str
) -> tuple[float | None, float | None]:
    def is_leaf_mention(gold: set[Pair]) -> bool:
        return bool(gold) and all(c is None for _, c in gold)

    if subset == "leaf":
        chosen = [r for r in records if is_leaf_mention(r[1])]
    elif subset == "nonleaf":
        chosen = [r for r in records if not is_leaf_mention(r[1])]
    else:
        chosen = list(records)
    if not chosen:
        return None, None
    truncated = [(predicted[:k], gold) for predicted, gold in chosen]
    return oracle_inr_any(truncated), oracle_inr_all(truncated)


def oracle_idf_similarity(
    token_sets: dict[str, set[str]], mention_tokens: set[str], concept_id: str
) -> float:
    """From-scratch idf sum over raw token sets, natural log."""
    corpus = len(token_sets)
    score = 0.0
    for token in token_sets[concept_id] & mention_tokens:
        df = sum(1 for tokens in token_sets.values() if token in tokens)
        score += math.log(corpus / df)
    return score
