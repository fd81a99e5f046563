"""Embedded journaled document store for the ten-collection knowledge base.

One append-only journal file holds batches of full document states; a batch is
a single length-prefixed, CRC-protected record, so a crash mid-write can never
surface a torn document or a partial batch.  Raw signal data never lives here,
only URIs.  Deletes are tombstones so interaction history stays traceable.
"""

from __future__ import annotations

import json
import os
import secrets
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import EventList
from .errors import (
    CorruptJournal,
    DanglingReference,
    Locked,
    MissingField,
    UnknownCollection,
)

JOURNAL_NAME = "journal.db"
LOCK_NAME = "journal.lock"


def load_schema() -> dict:
    text = resources.files("tsadkit").joinpath("schema.json").read_text("utf-8")
    return json.loads(text)


SCHEMA = load_schema()
COLLECTIONS = tuple(SCHEMA)


@dataclass(frozen=True)
class Document:
    id: str
    collection: str
    body: dict
    created_at: int  # epoch ms
    updated_at: int

    def to_dict(self):
        return {"id": self.id, "collection": self.collection, "body": self.body,
                "created_at": self.created_at, "updated_at": self.updated_at}

    @classmethod
    def from_dict(cls, d):
        return cls(id=d["id"], collection=d["collection"], body=d["body"],
                   created_at=d["created_at"], updated_at=d["updated_at"])

    @property
    def deleted(self) -> bool:
        return bool(self.body.get("deleted"))


class Store:
    """Single-writer embedded store; readers see the last committed batch."""

    def __init__(self, root: Path, journal_fh, docs, counter: int):
        self.root = root
        self._fh = journal_fh
        self._docs = docs  # collection -> id -> Document
        self._counter = counter
        self._write_lock = threading.Lock()
        self._closed = False

    # --- lifecycle ---

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._fh.close()
        try:
            (self.root / LOCK_NAME).unlink()
        except FileNotFoundError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- ids ---

    def _new_id(self) -> str:
        # zero-padded ms timestamp + per-store counter: lexically sortable by
        # creation; random suffix for cross-store uniqueness
        self._counter += 1
        return f"{int(time.time() * 1000):013d}-{self._counter:08d}-{secrets.token_hex(4)}"

    # --- validation ---

    def _validate(self, collection: str, body: dict, staged: dict) -> None:
        if collection not in SCHEMA:
            raise UnknownCollection(f"unknown collection {collection!r}")
        rules = SCHEMA[collection]
        for fieldname in rules["required"]:
            if fieldname not in body:
                raise MissingField(f"{collection}: missing required field {fieldname!r}")
        nullable = set(rules.get("nullable_references", []))
        for fieldname, target in rules.get("references", {}).items():
            ref = body.get(fieldname)
            if ref is None:
                if fieldname in nullable:
                    continue
                raise MissingField(f"{collection}: missing reference {fieldname!r}")
            if not self._resolves(target, ref, staged):
                raise DanglingReference(f"{collection}.{fieldname}={ref!r} does not resolve")
        for group in rules.get("one_of_references", []):
            if not any(body.get(f) is not None for f in group):
                raise MissingField(f"{collection}: one of {group} is required")
        for fieldname, target in rules.get("list_references", {}).items():
            for ref in body.get(fieldname) or []:
                if not self._resolves(target, ref, staged):
                    raise DanglingReference(f"{collection}.{fieldname} entry {ref!r} does not resolve")

    def _resolves(self, collection: str, ref, staged: dict) -> bool:
        if ref in self._docs.get(collection, {}):
            return True
        return any(d.collection == collection and d.id == ref for d in staged.values())

    # --- journal ---

    def _commit(self, docs: list[Document]) -> None:
        payload = json.dumps({"docs": [d.to_dict() for d in docs]},
                             separators=(",", ":")).encode()
        record = struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))
        with self._write_lock:
            self._fh.write(record)
            self._fh.flush()
            os.fsync(self._fh.fileno())
            for doc in docs:
                self._docs.setdefault(doc.collection, {})[doc.id] = doc

    # --- CRUD ---

    def put(self, collection: str, body: dict) -> str:
        return self.put_batch([(collection, body)])[0]

    def put_batch(self, items: list[tuple[str, dict]]) -> list[str]:
        """Insert several documents atomically (one journal record).  Documents
        in the batch may reference each other."""
        now = int(time.time() * 1000)
        staged: dict[str, Document] = {}
        for collection, body in items:
            doc = Document(id=self._new_id(), collection=collection, body=dict(body),
                           created_at=now, updated_at=now)
            staged[doc.id] = doc
        for doc in staged.values():
            self._validate(doc.collection, doc.body, staged)
        self._commit(list(staged.values()))
        return list(staged)

    def put_linked(self, collection: str, body: dict, child_collection: str,
                   child_body: dict, link_field: str) -> str:
        """Insert a document plus one child that references it, in one batch
        (used so an event and its interaction record commit atomically)."""
        now = int(time.time() * 1000)
        parent = Document(id=self._new_id(), collection=collection, body=dict(body),
                          created_at=now, updated_at=now)
        child_body = dict(child_body)
        child_body[link_field] = parent.id
        child = Document(id=self._new_id(), collection=child_collection,
                         body=child_body, created_at=now, updated_at=now)
        staged = {parent.id: parent, child.id: child}
        for doc in staged.values():
            self._validate(doc.collection, doc.body, staged)
        self._commit([parent, child])
        return parent.id

    def get(self, collection: str, doc_id: str) -> Document | None:
        if collection not in SCHEMA:
            raise UnknownCollection(f"unknown collection {collection!r}")
        return self._docs.get(collection, {}).get(doc_id)

    def update(self, collection: str, doc_id: str, changes: dict,
               extra_docs: list[tuple[str, dict]] | None = None) -> Document:
        """Replace body fields; optionally commit companion inserts in the
        same batch (event mutation + its interaction record are atomic)."""
        doc = self.get(collection, doc_id)
        if doc is None:
            raise DanglingReference(f"{collection}/{doc_id} not found")
        body = dict(doc.body)
        body.update(changes)
        self._validate(collection, body, {})
        now = int(time.time() * 1000)
        updated = Document(id=doc.id, collection=collection, body=body,
                           created_at=doc.created_at, updated_at=now)
        batch = [updated]
        staged: dict[str, Document] = {}
        for coll, extra_body in extra_docs or []:
            extra = Document(id=self._new_id(), collection=coll, body=dict(extra_body),
                             created_at=now, updated_at=now)
            staged[extra.id] = extra
        for extra in staged.values():
            self._validate(extra.collection, extra.body, staged)
        batch.extend(staged.values())
        self._commit(batch)
        return updated

    def delete(self, collection: str, doc_id: str,
               extra_docs: list[tuple[str, dict]] | None = None) -> Document:
        """Tombstone: the body is replaced by {deleted: true} but the id stays
        resolvable so history remains traceable."""
        doc = self.get(collection, doc_id)
        if doc is None:
            raise DanglingReference(f"{collection}/{doc_id} not found")
        now = int(time.time() * 1000)
        # reference fields survive the tombstone so the audit can still trace
        # deleted documents back to their parents
        kept = {k: v for k, v in doc.body.items()
                if k.endswith("_id") or k == "signal_ids"}
        kept["deleted"] = True
        tomb = Document(id=doc.id, collection=collection, body=kept,
                        created_at=doc.created_at, updated_at=now)
        batch = [tomb]
        for coll, extra_body in extra_docs or []:
            extra = Document(id=self._new_id(), collection=coll, body=dict(extra_body),
                             created_at=now, updated_at=now)
            self._validate(extra.collection, extra.body, {})
            batch.append(extra)
        self._commit(batch)
        return tomb

    def find(self, collection: str, filter: dict | None = None, order: str = "created_at",
             limit: int | None = None, offset: int = 0,
             include_deleted: bool = False) -> list[Document]:
        """Conjunctive exact-match filtering on top-level body fields (or 'id'),
        ordered by creation unless overridden."""
        if collection not in SCHEMA:
            raise UnknownCollection(f"unknown collection {collection!r}")
        docs = list(self._docs.get(collection, {}).values())
        if not include_deleted:
            docs = [d for d in docs if not d.deleted]
        for key, value in (filter or {}).items():
            if key == "id":
                docs = [d for d in docs if d.id == value]
            else:
                docs = [d for d in docs if d.body.get(key) == value]
        if order == "created_at":
            docs.sort(key=lambda d: (d.created_at, d.id))
        else:
            docs.sort(key=lambda d: (d.body.get(order), d.id))
        if offset:
            docs = docs[offset:]
        if limit is not None:
            docs = docs[:limit]
        return docs

    # --- domain helpers ---

    def record_signalrun(self, datarun_id: str, signal_id: str, events: EventList,
                         status: str = "done", profile: dict | None = None,
                         model_uri: str | None = None,
                         pipeline_id: str | None = None) -> str:
        """Atomically persist a Signalrun plus one Event doc per detection."""
        self._require(self.get("Datarun", datarun_id), f"Datarun/{datarun_id}")
        self._require(self.get("Signal", signal_id), f"Signal/{signal_id}")
        if pipeline_id is not None:
            self._require(self.get("Pipeline", pipeline_id), f"Pipeline/{pipeline_id}")
        now = int(time.time() * 1000)
        run = Document(id=self._new_id(), collection="Signalrun",
                       body={"datarun_id": datarun_id, "signal_id": signal_id,
                             "status": status, "num_events": len(events),
                             "pipeline_id": pipeline_id,
                             "profile": profile, "model_uri": model_uri},
                       created_at=now, updated_at=now)
        batch = [run]
        for e in events:
            batch.append(Document(
                id=self._new_id(), collection="Event",
                body={"signalrun_id": run.id, "signal_id": signal_id,
                      "t_s": e.t_s, "t_e": e.t_e, "severity": e.severity,
                      "source": e.source},
                created_at=now, updated_at=now))
        self._commit(batch)
        return run.id

    def add_annotation(self, event_id: str, user: str, tag: str, comment: str = "") -> str:
        self._require(self.get("Event", event_id), f"Event/{event_id}")
        return self.put("Annotation", {"event_id": event_id, "user": user,
                                       "tag": tag, "comment": comment})

    def log_interaction(self, event_id: str, action: str, payload: dict | None = None) -> str:
        self._require(self.get("Event", event_id), f"Event/{event_id}")
        return self.put("EventInteraction", {"event_id": event_id, "action": action,
                                             "payload": payload or {}})

    @staticmethod
    def _require(doc, label):
        if doc is None:
            raise DanglingReference(f"{label} not found")

    def audit(self) -> list[str]:
        """Full-store referential check; returns a list of violations (empty =
        healthy). Tombstoned documents still anchor references."""
        problems = []
        for collection, docs in self._docs.items():
            rules = SCHEMA.get(collection, {})
            for doc in docs.values():
                if doc.deleted:
                    continue
                for fieldname, target in rules.get("references", {}).items():
                    ref = doc.body.get(fieldname)
                    if ref is not None and ref not in self._docs.get(target, {}):
                        problems.append(f"{collection}/{doc.id}: {fieldname}={ref} dangling")
                for fieldname, target in rules.get("list_references", {}).items():
                    for ref in doc.body.get(fieldname) or []:
                        if ref not in self._docs.get(target, {}):
                            problems.append(f"{collection}/{doc.id}: {fieldname} entry {ref} dangling")
        # Signalrun.num_events must equal the count of events referencing it
        run_counts: dict[str, int] = {}
        for doc in self._docs.get("Event", {}).values():
            # tombstoned events still count: the run recorded them
            run_id = doc.body.get("signalrun_id")
            if run_id:
                run_counts[run_id] = run_counts.get(run_id, 0) + 1
        for run in self._docs.get("Signalrun", {}).values():
            if run.deleted:
                continue
            expected = run.body.get("num_events")
            actual = run_counts.get(run.id, 0)
            if expected != actual:
                problems.append(f"Signalrun/{run.id}: num_events={expected} but {actual} Event docs")
        return problems


def _replay(blob: bytes):
    """Parse journal records; returns (docs, n_batches, last_good_offset)."""
    docs: dict[str, dict[str, Document]] = {c: {} for c in COLLECTIONS}
    offset = 0
    batches = 0
    while offset < len(blob):
        if offset + 4 > len(blob):
            return docs, batches, offset, False
        (length,) = struct.unpack("<I", blob[offset:offset + 4])
        end = offset + 4 + length + 4
        if end > len(blob):
            return docs, batches, offset, False
        payload = blob[offset + 4:offset + 4 + length]
        (crc,) = struct.unpack("<I", blob[offset + 4 + length:end])
        if zlib.crc32(payload) != crc:
            return docs, batches, offset, False
        try:
            batch = json.loads(payload.decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            return docs, batches, offset, False
        for dd in batch["docs"]:
            doc = Document.from_dict(dd)
            docs.setdefault(doc.collection, {})[doc.id] = doc
        batches += 1
        offset = end
    return docs, batches, offset, True


def open_store(path, recover: bool = False) -> Store:
    """Open (creating if needed) the store at `path`.

    A second concurrent opener is rejected via a lock file.  A torn journal
    tail raises CorruptJournal with the last good offset unless `recover` is
    set, in which case the tail is truncated away."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lock_path = root / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
    except FileExistsError:
        raise Locked(f"store at {root} is locked by another process")

    journal_path = root / JOURNAL_NAME
    blob = journal_path.read_bytes() if journal_path.exists() else b""
    docs, _batches, last_good, clean = _replay(blob)
    if not clean:
        if not recover:
            try:
                lock_path.unlink()
            except FileNotFoundError:
                pass
            raise CorruptJournal(
                f"journal has a torn/corrupt record at offset {last_good}; "
                "reopen with recover=True to truncate", last_good)
        with open(journal_path, "r+b") as fh:
            fh.truncate(last_good)

    max_counter = 0
    for coll_docs in docs.values():
        for doc_id in coll_docs:
            try:
                max_counter = max(max_counter, int(doc_id.split("-")[1]))
            except (IndexError, ValueError):
                pass
    fh = open(journal_path, "ab")
    return Store(root=root, journal_fh=fh, docs=docs, counter=max_counter)
