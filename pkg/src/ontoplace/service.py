"""Curation service: pending mention queues, candidate slates computed
against the live ontology version, and accept/skip decisions.

Writes are serialized per session; slates are stamped with the ontology
version they were computed against, and an accept on an outdated stamp is
rejected so terminologists always act on current candidates. The decision
log is append-only and replaying it from version 0 reproduces the ontology.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .candidates import CandidateSlate, generate_candidates, slate_to_record
from .embeddings import ContextualMention
from .errors import StaleSlateError
from .evaluation import PlacementDataset, load_dataset
from .lexical import InvertedIndex, Tokenizer, build_index
from .ontology import Concept, Edge, Ontology, insert_placement, export_ontology

SNAPSHOT_EVERY = 10


@dataclass
class CurationSession:
    """One terminologist's working copy of the ontology plus a mention queue."""

    session_id: str
    ontology: Ontology
    mentions: dict[str, ContextualMention]
    queue: list[str]
    method: str = "lexical"
    k: int = 10
    version: int = 0
    log: list[dict] = field(default_factory=list)
    latest_slates: dict[str, tuple[int, CandidateSlate]] = field(default_factory=dict)
    _index_cache: dict[int, InvertedIndex] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def _lexical_index(self) -> InvertedIndex:
        if self.version not in self._index_cache:
            tok = Tokenizer()
            self._index_cache = {
                self.version: build_index(list(self.ontology.concepts.values()), tok)
            }
        return self._index_cache[self.version]

    def pending(self) -> list[dict]:
        return [
            {
                "mention_id": mid,
                "mention": self.mentions[mid].mention,
                "context_left": self.mentions[mid].context_left,
                "context_right": self.mentions[mid].context_right,
            }
            for mid in self.queue
        ]

    def get_candidates(
        self, mention_id: str, k: int | None = None, method: str | None = None
    ) -> tuple[CandidateSlate, int]:
        """Slate for a pending mention, computed on the current version.

        Read-only: never bumps the version. The returned stamp must be sent
        back with the accept.
        """
        if mention_id not in self.mentions:
            raise KeyError(mention_id)
        mention = self.mentions[mention_id]
        k = k or self.k
        method = method or self.method
        if method != "lexical":
            raise ValueError(
                f"method {method!r} is not configured for this service instance"
            )
        idx = self._lexical_index()
        slate = generate_candidates(
            self.ontology, mention, "lexical", k, index=idx, tokenizer=idx.tokenizer
        )
        self.latest_slates[mention_id] = (self.version, slate)
        return slate, self.version

    def accept(
        self,
        mention_id: str,
        edges: list[Edge],
        slate_version: int,
        who: str = "terminologist",
        manual: bool = False,
    ) -> dict:
        """Insert the mention under the chosen edges; returns the log entry."""
        with self._lock:
            if mention_id not in self.mentions or mention_id not in self.queue:
                raise KeyError(mention_id)
            if slate_version != self.version:
                raise StaleSlateError(
                    f"slate was computed at version {slate_version}, "
                    f"ontology is at {self.version}"
                )
            if not edges:
                raise ValueError("accept needs at least one edge")
            if not manual:
                latest = self.latest_slates.get(mention_id)
                if latest is None:
                    raise ValueError("no slate fetched for this mention")
                allowed = {s.edge for s in latest[1].edges}
                stray = [e for e in edges if e not in allowed]
                if stray:
                    raise ValueError(
                        f"edge {stray[0].parent}->{stray[0].child_id} is not in the "
                        "latest slate (flag manual=true to override)"
                    )
            mention = self.mentions[mention_id]
            new_concept = Concept(id=f"placed:{mention_id}", label=mention.mention)
            self.ontology = insert_placement(self.ontology, new_concept, edges)
            before = self.version
            self.version += 1
            self.queue.remove(mention_id)
            entry = {
                "seq": len(self.log),
                "session_id": self.session_id,
                "action": "accept",
                "mention_id": mention_id,
                "mention": mention.mention,
                "new_concept_id": new_concept.id,
                "edges": [[e.parent, e.child_id] for e in edges],
                "version_before": before,
                "version_after": self.version,
                "who": who,
                "at": time.time(),
            }
            self.log.append(entry)
            return entry

    def skip(self, mention_id: str, who: str = "terminologist") -> dict:
        with self._lock:
            if mention_id not in self.queue:
                raise KeyError(mention_id)
            self.queue.remove(mention_id)
            self.queue.append(mention_id)
            entry = {
                "seq": len(self.log),
                "session_id": self.session_id,
                "action": "skip",
                "mention_id": mention_id,
                "version_before": self.version,
                "version_after": self.version,
                "who": who,
                "at": time.time(),
            }
            self.log.append(entry)
            return entry


def replay_decision_log(initial: Ontology, entries: list[dict]) -> Ontology:
    """Rebuild the ontology by re-applying accepted placements in order."""
    onto = initial
    for entry in sorted(entries, key=lambda e: e["seq"]):
        if entry["action"] != "accept":
            continue
        onto = insert_placement(
            onto,
            Concept(id=entry["new_concept_id"], label=entry["mention"]),
            [Edge.from_pair(p, c) for p, c in entry["edges"]],
        )
    return onto


@dataclass
class ServiceState:
    """Shared sources plus the live session table."""

    initial_ontology: Ontology
    dataset: PlacementDataset
    method: str = "lexical"
    k: int = 10
    state_dir: str | None = None
    sessions: dict[str, CurationSession] = field(default_factory=dict)
    _counter: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @classmethod
    def bootstrap(
        cls,
        ontology_dir: str,
        dataset_path: str,
        method: str = "lexical",
        k: int = 10,
        state_dir: str | None = None,
    ) -> "ServiceState":
        from .cli import read_ontology_dir

        onto = read_ontology_dir(ontology_dir)
        with open(dataset_path, encoding="utf-8") as handle:
            dataset = load_dataset(handle, onto, require_gold=False)
        state = cls(
            initial_ontology=onto,
            dataset=dataset,
            method=method,
            k=k,
            state_dir=state_dir,
        )
        state.create_session("default")
        return state

    def create_session(self, session_id: str | None = None) -> CurationSession:
        with self._lock:
            if session_id is None:
                self._counter += 1
                session_id = f"s{self._counter}"
            if session_id in self.sessions:
                raise ValueError(f"session {session_id} already exists")
            mentions = {f"m{i}": m for i, m in enumerate(self.dataset.mentions)}
            session = CurationSession(
                session_id=session_id,
                ontology=self.initial_ontology,
                mentions=mentions,
                queue=list(mentions),
                method=self.method,
                k=self.k,
            )
            self.sessions[session_id] = session
            return session

    def session(self, session_id: str) -> CurationSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(f"unknown session {session_id}") from None

    def persist(self, session: CurationSession, entry: dict):
        if not self.state_dir:
            return
        base = Path(self.state_dir)
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "decisions.jsonl", "a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")
        if entry["action"] == "accept" and session.version % SNAPSHOT_EVERY == 0:
            snap = base / "snapshots" / f"{session.session_id}-v{session.version}"
            snap.mkdir(parents=True, exist_ok=True)
            concept_text, pair_text = export_ontology(session.ontology)
            (snap / "concepts.jsonl").write_text(concept_text, encoding="utf-8")
            (snap / "subsumptions.tsv").write_text(pair_text, encoding="utf-8")


class AcceptPayload(BaseModel):
    edges: list[list[str]]
    slate_version: int
    who: str = "terminologist"
    manual: bool = False


class SkipPayload(BaseModel):
    who: str = "terminologist"


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="ontoplace curation service")

    @app.post("/sessions")
    def create_session():
        session = state.create_session()
        return {"session_id": session.session_id}

    @app.get("/sessions/{sid}/mentions")
    def list_mentions(sid: str):
        return {"pending": _session_or_404(sid).pending()}

    @app.get("/sessions/{sid}/mentions/{mid}/candidates")
    def get_candidates(sid: str, mid: str, k: int | None = None, method: str | None = None):
        session = _session_or_404(sid)
        try:
            slate, version = session.get_candidates(mid, k, method)
        except KeyError:
            raise HTTPException(404, f"unknown mention {mid}")
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        record = slate_to_record(slate)
        record["mention_id"] = mid
        record["slate_version"] = version
        record["labels"] = [
            [session.ontology.label(s.edge.parent), session.ontology.label(s.edge.child_id)]
            for s in slate.edges
        ]
        record["explanation"] = None
        return record

    @app.post("/sessions/{sid}/mentions/{mid}/accept")
    def accept(sid: str, mid: str, payload: AcceptPayload):
        session = _session_or_404(sid)
        try:
            edges = [Edge.from_pair(p, c) for p, c in payload.edges]
            entry = session.accept(
                mid, edges, payload.slate_version, payload.who, payload.manual
            )
        except KeyError:
            raise HTTPException(404, f"unknown or already-placed mention {mid}")
        except StaleSlateError as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        state.persist(session, entry)
        return {"version": session.version, "entry": entry}

    @app.post("/sessions/{sid}/mentions/{mid}/skip")
    def skip(sid: str, mid: str, payload: SkipPayload | None = None):
        session = _session_or_404(sid)
        try:
            entry = session.skip(mid, payload.who if payload else "terminologist")
        except KeyError:
            raise HTTPException(404, f"unknown mention {mid}")
        state.persist(session, entry)
        return {"ok": True, "entry": entry}

    @app.get("/sessions/{sid}/ontology/version")
    def version(sid: str):
        return {"version": _session_or_404(sid).version}

    @app.get("/sessions/{sid}/log")
    def log(sid: str):
        return {"entries": _session_or_404(sid).log}

    def _session_or_404(sid: str) -> CurationSession:
        try:
            return state.session(sid)
        except KeyError:
            raise HTTPException(404, f"unknown session {sid}")

    return app
