"""Directed subsumption graph over (possibly complex) concepts.

Concepts are loaded from a line-delimited JSON file, direct subsumptions from a
tab-separated pair file. The graph is immutable after load; placing a new
concept produces a new :class:`Ontology` version.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

from .errors import (
    DanglingEdgeError,
    DuplicateConceptError,
    FormatError,
    UnknownConceptError,
    VerbalizationError,
)

logger = logging.getLogger(__name__)

#: Reserved child id marking leaf placement; never a concept id.
NULL_ID = "NULL"

# Operator trees are JSON values: a bare string is an atomic label, a
# {"some": [role, filler]} node is an existential restriction, and an
# {"and": [part, ...]} node is a conjunction.
OperatorTree = str | dict


@dataclass(frozen=True)
class Concept:
    id: str
    label: str
    complex: bool = False
    verbalization: str | None = None
    operator_tree: OperatorTree | None = None

    def __post_init__(self):
        if not self.id or self.id == NULL_ID:
            raise ValueError(f"invalid concept id: {self.id!r}")
        if not self.label:
            raise ValueError(f"concept {self.id}: empty label")


@dataclass(frozen=True)
class Edge:
    """Candidate insertion slot: new concept goes below ``parent``, above ``child``.

    ``child`` is ``None`` for leaf placement (serialized as the ``NULL`` sentinel).
    """

    parent: str
    child: str | None

    def __post_init__(self):
        if not self.parent or self.parent == NULL_ID:
            raise ValueError(f"invalid edge parent: {self.parent!r}")
        if self.parent == self.child:
            raise ValueError(f"self-edge not allowed: {self.parent}")

    @property
    def is_leaf(self) -> bool:
        return self.child is None

    @property
    def child_id(self) -> str:
        """Child id with leaf edges rendered as the NULL sentinel."""
        return NULL_ID if self.child is None else self.child

    @classmethod
    def from_pair(cls, parent: str, child: str) -> "Edge":
        return cls(parent, None if child == NULL_ID else child)

    def sort_key(self) -> tuple:
        """Total order used by slate tie-breaking: parent asc, child asc, NULL last."""
        return (self.parent, self.child is None, self.child or "")


def _render_operator_tree(node: OperatorTree) -> str:
    def render(n: OperatorTree, top: bool) -> str:
        if isinstance(n, str):
            return n
        if not isinstance(n, dict) or len(n) != 1:
            raise VerbalizationError(f"malformed operator tree node: {n!r}")
        if "some" in n:
            role, filler = n["some"]
            text = f"{role} some {render(filler, top=False)}"
        elif "and" in n:
            text = " and ".join(render(p, top=False) for p in n["and"])
        else:
            raise VerbalizationError(f"unknown operator in tree: {list(n)[0]!r}")
        return text if top else f"({text})"

    return render(node, top=True)


def verbalize(concept: Concept) -> str:
    """Human-readable text for a concept.

    Atomic concepts render as their label. Complex concepts use their stored
    verbalization when present, otherwise a Manchester-style rendering of the
    operator tree ("some" for existential restriction, "and" for conjunction).
    """
    if not concept.complex:
        return concept.label
    if concept.verbalization:
        return concept.verbalization
    if concept.operator_tree is not None:
        return _render_operator_tree(concept.operator_tree)
    raise VerbalizationError(
        f"complex concept {concept.id} has neither verbalization nor operator tree"
    )


@dataclass(frozen=True)
class Ontology:
    concepts: dict[str, Concept]
    _parents: dict[str, frozenset[str]] = field(repr=False)
    _children: dict[str, frozenset[str]] = field(repr=False)
    subsumption_count: int = 0

    @classmethod
    def from_pairs(
        cls, concepts: Iterable[Concept], pairs: Iterable[tuple[str, str]]
    ) -> "Ontology":
        by_id: dict[str, Concept] = {}
        for c in concepts:
            if c.id in by_id:
                raise DuplicateConceptError(f"duplicate concept id {c.id}")
            by_id[c.id] = c
        parents: dict[str, set[str]] = {}
        children: dict[str, set[str]] = {}
        n = 0
        for parent, child in pairs:
            for end in (parent, child):
                if end not in by_id:
                    raise DanglingEdgeError(f"subsumption references unknown id {end}")
            if parent == child:
                raise FormatError(f"self-subsumption on {parent}")
            if child not in children.setdefault(parent, set()):
                children[parent].add(child)
                parents.setdefault(child, set()).add(parent)
                n += 1
        onto = cls(
            concepts=by_id,
            _parents={k: frozenset(v) for k, v in parents.items()},
            _children={k: frozenset(v) for k, v in children.items()},
            subsumption_count=n,
        )
        onto._warn_on_oddities()
        return onto

    def _warn_on_oddities(self):
        complex_children = sorted(
            c for c in self._parents if self.concepts[c].complex
        )
        if complex_children:
            logger.warning(
                "%d complex concept(s) appear as subsumption children, e.g. %s",
                len(complex_children),
                complex_children[0],
            )
        if self._has_cycle():
            logger.warning("subsumption graph contains at least one cycle")

    def _has_cycle(self) -> bool:
        # Kahn's algorithm: leftovers after peeling zero-indegree nodes mean a cycle.
        indeg = {c: len(self._parents.get(c, ())) for c in self.concepts}
        queue = [c for c, d in indeg.items() if d == 0]
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for child in self._children.get(node, ()):
                indeg[child] -= 1
                if indeg[child] == 0:
                    queue.append(child)
        return seen < len(self.concepts)

    @property
    def concept_count(self) -> int:
        return len(self.concepts)

    @property
    def complex_count(self) -> int:
        return sum(1 for c in self.concepts.values() if c.complex)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def concept(self, concept_id: str) -> Concept:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise UnknownConceptError(f"unknown concept id {concept_id}") from None

    def parents(self, concept_id: str) -> frozenset[str]:
        self.concept(concept_id)
        return self._parents.get(concept_id, frozenset())

    def children(self, concept_id: str) -> frozenset[str]:
        self.concept(concept_id)
        return self._children.get(concept_id, frozenset())

    def is_leaf(self, concept_id: str) -> bool:
        return not self.children(concept_id)

    def subsumption_pairs(self) -> Iterator[tuple[str, str]]:
        for parent, kids in self._children.items():
            for child in kids:
                yield parent, child

    def label(self, concept_id: str) -> str:
        """Verbalized text for a concept id (NULL maps to the sentinel itself)."""
        if concept_id == NULL_ID:
            return NULL_ID
        return verbalize(self.concept(concept_id))

    def edge_endpoints_exist(self, edge: Edge):
        if edge.parent not in self.concepts:
            raise DanglingEdgeError(f"edge parent {edge.parent} not in ontology")
        if edge.child is not None and edge.child not in self.concepts:
            raise DanglingEdgeError(f"edge child {edge.child} not in ontology")


def enumerate_edge_space(onto: Ontology) -> Iterator[Edge]:
    """All candidate edges: direct pairs, two-hop pairs, and leaf-to-NULL.

    Two-hop pairs are grandparent-to-grandchild pairs reachable through any
    middle concept. Output is duplicate-free; self-pairs arising from cycles
    are skipped (an edge cannot have identical endpoints).
    """
    seen: set[tuple[str, str | None]] = set()

    def emit(parent: str, child: str | None):
        key = (parent, child)
        if key not in seen and parent != child:
            seen.add(key)
            yield Edge(parent, child)

    for concept_id in onto.concepts:
        for child in onto.children(concept_id):
            yield from emit(concept_id, child)
    for concept_id in onto.concepts:
        for mid in onto.children(concept_id):
            for grandchild in onto.children(mid):
                yield from emit(concept_id, grandchild)
    for concept_id in onto.concepts:
        if onto.is_leaf(concept_id):
            yield from emit(concept_id, None)


def insert_placement(onto: Ontology, new_concept: Concept, edges: Iterable[Edge]) -> Ontology:
    """New ontology with ``new_concept`` spliced into every given edge.

    Each edge P->C contributes subsumptions P->new and, unless C is NULL,
    new->C. Pre-existing direct subsumptions P->C are retained (the insert is
    non-destructive), so two-hop gold placements do not delete the bypassed pair.
    """
    if new_concept.id in onto.concepts:
        raise DuplicateConceptError(f"duplicate concept id {new_concept.id}")
    edges = list(edges)
    for edge in edges:
        onto.edge_endpoints_exist(edge)
    concepts = dict(onto.concepts)
    concepts[new_concept.id] = new_concept
    pairs = set(onto.subsumption_pairs())
    for edge in edges:
        pairs.add((edge.parent, new_concept.id))
        if edge.child is not None:
            pairs.add((new_concept.id, edge.child))
    return Ontology.from_pairs(concepts.values(), sorted(pairs))


# ---------------------------------------------------------------------------
# File formats: concepts as JSON lines, subsumptions as parent<TAB>child lines.
# ---------------------------------------------------------------------------

_CONCEPT_FIELDS = ("id", "label", "complex", "verbalization", "operator_tree")


def parse_concept_line(line: str, line_no: int | None = None) -> Concept:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not valid JSON: {exc}", line_no) from None
    if not isinstance(record, dict):
        raise FormatError("concept record must be a JSON object", line_no)
    unknown = set(record) - set(_CONCEPT_FIELDS)
    if unknown:
        raise FormatError(f"unknown concept fields {sorted(unknown)}", line_no)
    try:
        return Concept(
            id=record["id"],
            label=record["label"],
            complex=bool(record.get("complex", False)),
            verbalization=record.get("verbalization"),
            operator_tree=record.get("operator_tree"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad concept record: {exc}", line_no) from None


def load_ontology(
    concept_stream: Iterable[str], subsumption_stream: Iterable[str]
) -> Ontology:
    """Build an :class:`Ontology` from the two line-delimited streams.

    Errors carry the offending line number. Duplicate concept ids and
    subsumption pairs naming undefined concepts are rejected.
    """
    concepts: list[Concept] = []
    ids: set[str] = set()
    for line_no, line in enumerate(concept_stream, start=1):
        line = line.strip()
        if not line:
            continue
        concept = parse_concept_line(line, line_no)
        if concept.id in ids:
            raise DuplicateConceptError(f"duplicate concept id {concept.id}", line_no)
        ids.add(concept.id)
        concepts.append(concept)

    pairs: list[tuple[str, str]] = []
    for line_no, line in enumerate(subsumption_stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError(
                f"expected parent<TAB>child, got {line!r}", line_no
            )
        parent, child = parts
        for end in (parent, child):
            if end not in ids:
                raise DanglingEdgeError(
                    f"line {line_no}: subsumption references unknown id {end}"
                )
        pairs.append((parent, child))

    onto = Ontology.from_pairs(concepts, pairs)
    logger.info(
        "loaded ontology: %d concepts (%d complex), %d subsumptions",
        onto.concept_count,
        onto.complex_count,
        onto.subsumption_count,
    )
    return onto


def concept_to_json(concept: Concept) -> str:
    record: dict = {"id": concept.id, "label": concept.label, "complex": concept.complex}
    if concept.verbalization is not None:
        record["verbalization"] = concept.verbalization
    if concept.operator_tree is not None:
        record["operator_tree"] = concept.operator_tree
    return json.dumps(record, ensure_ascii=False)


def export_ontology(onto: Ontology) -> tuple[str, str]:
    """Canonical (concept_text, subsumption_text) export, sorted by id.

    Loading the export and exporting again reproduces the same bytes.
    """
    concept_lines = [
        concept_to_json(onto.concepts[cid]) for cid in sorted(onto.concepts)
    ]
    pair_lines = [f"{p}\t{c}" for p, c in sorted(onto.subsumption_pairs())]
    concept_text = "\n".join(concept_lines) + ("\n" if concept_lines else "")
    pair_text = "\n".join(pair_lines) + ("\n" if pair_lines else "")
    return concept_text, pair_text
