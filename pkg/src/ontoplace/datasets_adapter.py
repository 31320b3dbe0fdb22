"""Adapter from the published MM-S14 mention release layout to our canonical
dataset records.

The release encodes a mention's target edges as pipe-separated
``parentId-childId`` pairs and uses ``SCTID_NULL`` for leaf placement; ids
themselves never contain ``-`` (SNOMED codes are numeric). Context fields
carry the usual entity-linking names.
"""

from __future__ import annotations

from .errors import FormatError

RELEASE_NULL = "SCTID_NULL"
_EDGE_FIELDS = ("edges_idx", "parents-children_idx", "edges_concept")


def _split_pair(pair: str, line_no: int) -> list[str]:
    left, sep, right = pair.partition("-")
    if not sep or not left or not right:
        raise FormatError(f"cannot parse edge pair {pair!r}", line_no)
    return [left, "NULL" if right == RELEASE_NULL else right]


def adapt_record(record: dict, line_no: int | None = None) -> dict:
    mention = record.get("mention")
    if not mention:
        raise FormatError("record has no mention field", line_no)
    edges_raw = None
    for key in _EDGE_FIELDS:
        if record.get(key):
            edges_raw = record[key]
            break
    if edges_raw is None:
        raise FormatError(
            f"record has none of the edge fields {list(_EDGE_FIELDS)}", line_no
        )
    gold = [_split_pair(p, line_no) for p in str(edges_raw).split("|") if p]
    if not gold:
        raise FormatError("record has an empty edge list", line_no)
    return {
        "mention": mention,
        "context_left": record.get("context_left", ""),
        "context_right": record.get("context_right", ""),
        "gold_edges": gold,
    }
