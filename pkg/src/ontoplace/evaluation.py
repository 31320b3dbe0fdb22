"""Placement datasets, insertion-rate metrics, and the benchmark harness.

InR_any counts mentions with at least one gold edge among the predictions,
InR_all counts mentions whose gold edges are all predicted; both support
truncation at rank k and leaf/non-leaf mention subsets.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .candidates import CandidateSlate, generate_candidates
from .embeddings import ContextualMention, EmbeddingStore
from .errors import FormatError
from .lexical import InvertedIndex, Tokenizer
from .ontology import Edge, Ontology
from .providers import CompletionClient, EmbeddingClient, ScorerClient
from .selection import build_cross_rows, select_llm, select_scored

logger = logging.getLogger(__name__)

SPLITS = ("train-inKB", "valid-inKB", "valid-outKB", "test-outKB")

SUBSET_ALL = "all"
SUBSET_LEAF = "leaf"
SUBSET_NONLEAF = "nonleaf"
SUBSETS = (SUBSET_ALL, SUBSET_LEAF, SUBSET_NONLEAF)

DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class PlacementDataset:
    mentions: tuple[ContextualMention, ...]
    split: str = "test-outKB"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.mentions)

    @property
    def gold_pair_count(self) -> int:
        return sum(len(m.gold_edges or ()) for m in self.mentions)


def load_dataset(
    stream: Iterable[str],
    onto: Ontology,
    split: str = "test-outKB",
    require_gold: bool = True,
) -> PlacementDataset:
    """Parse line-delimited mention records, resolving gold edges in ``onto``.

    Evaluation data must carry at least one gold edge per mention;
    ``require_gold=False`` admits unlabelled curation inputs. Unresolvable
    endpoints are reported with their line number.
    """
    mentions = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not valid JSON: {exc}", line_no) from None
        if not isinstance(record, dict) or "mention" not in record:
            raise FormatError("record needs a mention field", line_no)
        mention = record["mention"]
        raw_edges = record.get("gold_edges")
        if not raw_edges and require_gold:
            raise FormatError(f"mention {mention!r} has no gold edges", line_no)
        gold = None
        if raw_edges:
            gold = []
            for pair in raw_edges:
                if not isinstance(pair, list) or len(pair) != 2:
                    raise FormatError(
                        f"gold edge must be a [parent, child] pair: {pair!r}", line_no
                    )
                edge = Edge.from_pair(pair[0], pair[1])
                try:
                    onto.edge_endpoints_exist(edge)
                except Exception as exc:
                    raise FormatError(str(exc), line_no) from None
                gold.append(edge)
        try:
            mentions.append(
                ContextualMention(
                    mention=mention,
                    context_left=record.get("context_left", ""),
                    context_right=record.get("context_right", ""),
                    gold_edges=tuple(gold) if gold is not None else None,
                )
            )
        except ValueError as exc:
            raise FormatError(str(exc), line_no) from None
    return PlacementDataset(mentions=tuple(mentions), split=split)


def write_dataset(dataset: PlacementDataset, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        for m in dataset.mentions:
            record = {
                "mention": m.mention,
                "context_left": m.context_left,
                "context_right": m.context_right,
                "gold_edges": [[e.parent, e.child_id] for e in m.gold_edges or ()],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class PredictionRecord:
    """Ranked predictions and gold labels for one mention."""

    index: int
    predicted: tuple[Edge, ...]
    gold: frozenset[Edge]

    def __post_init__(self):
        if len(set(self.predicted)) != len(self.predicted):
            raise ValueError("predicted edges must be duplicate-free")

    @property
    def is_leaf_mention(self) -> bool:
        # Mentions with mixed gold edges count as non-leaf.
        return bool(self.gold) and all(e.is_leaf for e in self.gold)


def inr_any(records: list[PredictionRecord]) -> float:
    """Fraction of mentions with at least one gold edge predicted."""
    if not records:
        raise ValueError("record list must be non-empty")
    hits = sum(1 for r in records if set(r.predicted) & r.gold)
    return hits / len(records)


def inr_all(records: list[PredictionRecord]) -> float:
    """Fraction of mentions whose gold edges are all predicted."""
    if not records:
        raise ValueError("record list must be non-empty")
    hits = sum(1 for r in records if set(r.predicted) >= r.gold)
    return hits / len(records)


def _truncate(record: PredictionRecord, k: int) -> PredictionRecord:
    return PredictionRecord(record.index, record.predicted[:k], record.gold)


def subset_records(
    records: list[PredictionRecord], subset: str
) -> list[PredictionRecord]:
    if subset == SUBSET_ALL:
        return list(records)
    if subset == SUBSET_LEAF:
        return [r for r in records if r.is_leaf_mention]
    if subset == SUBSET_NONLEAF:
        return [r for r in records if not r.is_leaf_mention]
    raise ValueError(f"unknown subset {subset!r}")


def inr_at_k(
    records: list[PredictionRecord], k: int, subset: str = SUBSET_ALL
) -> tuple[float | None, float | None]:
    """(InR_any@k, InR_all@k) over the mention subset; None if it is empty.

    Mentions are filtered into the subset first, then each prediction list
    is truncated to its first k entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    chosen = subset_records(records, subset)
    if not chosen:
        return None, None
    truncated = [_truncate(r, k) for r in chosen]
    return inr_any(truncated), inr_all(truncated)


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    ontology: Ontology
    dataset: PlacementDataset
    method: str
    k_retrieval: int = 10
    ks: tuple[int, ...] = DEFAULT_KS
    selection: str | None = None  # None | "cross" | "llm"
    index: InvertedIndex | None = None
    tokenizer: Tokenizer | None = None
    store: EmbeddingStore | None = None
    embed_client: EmbeddingClient | None = None
    scorer_client: ScorerClient | None = None
    llm_client: CompletionClient | None = None
    parallelism: int = 1


@dataclass(frozen=True)
class EvaluationReport:
    """Metric grid: (k, subset) -> percentages, plus subset mention counts."""

    method: str
    k_retrieval: int
    selection: str | None
    mention_count: int
    subset_counts: dict[str, int]
    cells: dict[tuple[int, str], tuple[float, float] | None]
    failures: int = 0

    def render_markdown(self) -> str:
        lines = [
            "# ontology placement evaluation",
            "",
            f"method: {self.method}"
            + (f" + {self.selection}" if self.selection else ""),
            f"retrieval k: {self.k_retrieval}",
            f"mentions: {self.mention_count} "
            f"(leaf {self.subset_counts[SUBSET_LEAF]}, "
            f"non-leaf {self.subset_counts[SUBSET_NONLEAF]})",
            f"failed mentions: {self.failures}",
            "",
            "| k | InR_any | InR_all | InR_any lf | InR_all lf | InR_any nlf | InR_all nlf |",
            "|---|---------|---------|------------|------------|-------------|-------------|",
        ]
        for k in sorted({k for k, _ in self.cells}):
            row = [str(k)]
            for subset in SUBSETS:
                cell = self.cells.get((k, subset))
                if cell is None:
                    row.extend(["-", "-"])
                else:
                    row.extend([f"{cell[0]:.1f}", f"{cell[1]:.1f}"])
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"

    def render_tsv(self) -> str:
        lines = ["k\tsubset\tInR_any\tInR_all\tmentions"]
        for k in sorted({k for k, _ in self.cells}):
            for subset in SUBSETS:
                cell = self.cells.get((k, subset))
                count = self.subset_counts[subset]
                if cell is None:
                    lines.append(f"{k}\t{subset}\t-\t-\t{count}")
                else:
                    lines.append(f"{k}\t{subset}\t{cell[0]:.1f}\t{cell[1]:.1f}\t{count}")
        return "\n".join(lines) + "\n"


def predict_slate(config: BenchmarkConfig, m: ContextualMention) -> CandidateSlate:
    """Candidate generation plus the configured selection stage."""
    slate = generate_candidates(
        config.ontology,
        m,
        config.method,
        config.k_retrieval,
        index=config.index,
        tokenizer=config.tokenizer,
        store=config.store,
        client=config.embed_client,
    )
    if config.selection and slate.edges:
        if config.selection == "cross":
            rows = build_cross_rows(m, slate, config.ontology)
            slate = select_scored(config.scorer_client, slate, rows)
        elif config.selection == "llm":
            slate = select_llm(config.llm_client, config.ontology, m, slate).slate
        else:
            raise ValueError(f"unknown selection stage {config.selection!r}")
    return slate


def run_benchmark(config: BenchmarkConfig) -> EvaluationReport:
    """Predict for every mention and fill the metric grid.

    Mentions whose prediction raises are scored as empty predictions and
    counted as failures.
    """
    if not config.dataset.mentions:
        raise ValueError("dataset has no mentions")

    def predict(item: tuple[int, ContextualMention]) -> tuple[PredictionRecord, bool]:
        i, m = item
        failed = False
        try:
            slate = predict_slate(config, m)
            predicted = tuple(slate.plain_edges())
        except Exception:
            logger.exception("prediction failed for mention %d (%s)", i, m.mention)
            predicted = ()
            failed = True
        return PredictionRecord(i, predicted, frozenset(m.gold_edges or ())), failed

    items = list(enumerate(config.dataset.mentions))
    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            outcomes = list(pool.map(predict, items))
    else:
        outcomes = [predict(item) for item in items]
    outcomes.sort(key=lambda pair: pair[0].index)
    records = [record for record, _ in outcomes]
    failures = sum(1 for _, failed in outcomes if failed)
    cells: dict[tuple[int, str], tuple[float, float] | None] = {}
    for k in config.ks:
        for subset in SUBSETS:
            any_k, all_k = inr_at_k(records, k, subset)
            cells[(k, subset)] = None if any_k is None else (any_k * 100, all_k * 100)
    return EvaluationReport(
        method=config.method,
        k_retrieval=config.k_retrieval,
        selection=config.selection,
        mention_count=len(records),
        subset_counts={s: len(subset_records(records, s)) for s in SUBSETS},
        cells=cells,
        failures=failures,
    )
