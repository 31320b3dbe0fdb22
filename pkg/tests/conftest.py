import json
import sys
from pathlib import Path

import numpy as np
import pytest

from ontoplace.embeddings import ContextualMention
from ontoplace.ontology import Concept, Edge, Ontology, load_ontology

DATA_DIR = Path(__file__).parent / "data"
TOY_DIR = DATA_DIR / "toy"
GOLDEN_DIR = DATA_DIR / "golden"


def make_ontology(pairs, extra_ids=()):
    """Ontology from raw (parent, child) pairs; labels derived from ids."""
    ids = {c for pair in pairs for c in pair} | set(extra_ids)
    concepts = [Concept(id=i, label=f"concept {i}") for i in sorted(ids)]
    return Ontology.from_pairs(concepts, pairs)


def random_pairs(rng: np.random.Generator, max_concepts: int = 200):
    """Random digraph without self-loops; occasionally cyclic."""
    n = int(rng.integers(2, max_concepts + 1))
    ids = [f"c{i}" for i in range(n)]
    pairs = set()
    # mostly forward edges (DAG-ish), a few backward ones to exercise cycles
    for i in range(1, n):
        for _ in range(int(rng.integers(0, 3))):
            j = int(rng.integers(0, i))
            pairs.add((ids[j], ids[i]))
    for _ in range(int(rng.integers(0, max(1, n // 20)))):
        a, b = rng.integers(0, n, size=2)
        if a != b:
            pairs.add((ids[int(a)], ids[int(b)]))
    return ids, pairs


@pytest.fixture(scope="session")
def toy_ontology():
    with open(TOY_DIR / "concepts.jsonl", encoding="utf-8") as ch, open(
        TOY_DIR / "subsumptions.tsv", encoding="utf-8"
    ) as sh:
        return load_ontology(ch, sh)


@pytest.fixture(scope="session")
def toy_mentions():
    mentions = []
    with open(TOY_DIR / "mentions.jsonl", encoding="utf-8") as handle:
        for line in handle:
            record = json.loads(line)
            mentions.append(
                ContextualMention(
                    mention=record["mention"],
                    context_left=record["context_left"],
                    context_right=record["context_right"],
                    gold_edges=tuple(
                        Edge.from_pair(p, c) for p, c in record["gold_edges"]
                    ),
                )
            )
    return mentions


@pytest.fixture
def diamond_ontology():
    # a -> {b, c} -> d
    return make_ontology({("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")})


@pytest.fixture
def chain_ontology():
    return make_ontology({("a", "b"), ("b", "c")})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One visible pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if item.fspath.basename != "test_acceptance.py":
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            report.outcome, report.outcome.upper()
        )
        sys.stderr.write(f"ACCEPTANCE {item.name}: {status}\n")
