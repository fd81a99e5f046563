"""Journaled document store: durability, atomicity, fault injection, audit."""

import json
import struct
import zlib

import numpy as np
import pytest

from tsadkit.core import Event, EventList
from tsadkit.errors import (
    CorruptJournal,
    DanglingReference,
    Locked,
    MissingField,
    UnknownCollection,
)
from tsadkit.store import JOURNAL_NAME, open_store


def seed_graph(store):
    """Minimal valid object graph up through a Datarun."""
    ds = store.put("Dataset", {"name": "demo"})
    sig = store.put("Signal", {"name": "s1", "dataset_id": ds, "data_uri": "file:///x.csv"})
    tpl = store.put("PipelineTemplate", {"name": "t", "definition": {}})
    exp = store.put("Experiment", {"name": "e", "dataset_id": ds, "template_id": tpl,
                                   "signal_ids": [sig]})
    run = store.put("Datarun", {"experiment_id": exp})
    return {"dataset": ds, "signal": sig, "template": tpl, "experiment": exp, "datarun": run}


class TestBasics:
    def test_open_empty(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            assert store.find("Dataset") == []

    def test_put_get_round_trip(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            doc_id = store.put("Dataset", {"name": "demo"})
            doc = store.get("Dataset", doc_id)
            assert doc.body["name"] == "demo"
            assert doc.created_at == doc.updated_at

    def test_unknown_collection(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            with pytest.raises(UnknownCollection):
                store.put("Nonsense", {"name": "x"})
            with pytest.raises(UnknownCollection):
                store.find("Nonsense")

    def test_missing_required_field(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            with pytest.raises(MissingField):
                store.put("Signal", {"name": "s"})

    def test_dangling_reference_rejected(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            with pytest.raises(DanglingReference):
                store.put("Signal", {"name": "s", "dataset_id": "nope",
                                     "data_uri": "file:///x"})

    def test_lock_exclusive(self, tmp_path):
        with open_store(tmp_path / "db"):
            with pytest.raises(Locked):
                open_store(tmp_path / "db")
        # lock released on close
        open_store(tmp_path / "db").close()


class TestDurability:
    def test_hundred_docs_survive_reopen(self, tmp_path):
        path = tmp_path / "db"
        with open_store(path) as store:
            ids = [store.put("Dataset", {"name": f"d{i}"}) for i in range(100)]
        with open_store(path) as store:
            assert len(store.find("Dataset")) == 100
            for i, doc_id in enumerate(ids):
                assert store.get("Dataset", doc_id).body["name"] == f"d{i}"

    def test_ids_sorted_by_creation(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            ids = [store.put("Dataset", {"name": f"d{i}"}) for i in range(20)]
            assert ids == sorted(ids)

    def test_append_only_journal_grows(self, tmp_path):
        path = tmp_path / "db"
        with open_store(path) as store:
            store.put("Dataset", {"name": "a"})
            size_1 = (path / JOURNAL_NAME).stat().st_size
            store.put("Dataset", {"name": "b"})
            size_2 = (path / JOURNAL_NAME).stat().st_size
        assert size_2 > size_1

    def test_update_preserves_created_at(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            doc_id = store.put("Dataset", {"name": "old"})
            created = store.get("Dataset", doc_id).created_at
            updated = store.update("Dataset", doc_id, {"name": "new"})
            assert updated.created_at == created
            assert store.get("Dataset", doc_id).body["name"] == "new"


class TestTornTail:
    def _journal_with_batches(self, tmp_path, n=3):
        path = tmp_path / "db"
        with open_store(path) as store:
            for i in range(n):
                store.put("Dataset", {"name": f"d{i}"})
        return path

    def test_torn_tail_detected(self, tmp_path):
        path = self._journal_with_batches(tmp_path)
        journal = path / JOURNAL_NAME
        blob = journal.read_bytes()
        journal.write_bytes(blob[:-3])  # tear the final record
        with pytest.raises(CorruptJournal):
            open_store(path)

    def test_recover_truncates_tail(self, tmp_path):
        path = self._journal_with_batches(tmp_path)
        journal = path / JOURNAL_NAME
        blob = journal.read_bytes()
        journal.write_bytes(blob[:-3])
        with open_store(path, recover=True) as store:
            assert len(store.find("Dataset")) == 2
        # after truncation the journal reopens cleanly
        with open_store(path) as store:
            assert len(store.find("Dataset")) == 2

    def test_flip_every_byte_of_three_batch_journal(self, tmp_path):
        """Corrupting any single byte must never surface a partial batch:
        replay either keeps a prefix of whole batches or raises."""
        path = self._journal_with_batches(tmp_path, n=3)
        journal = path / JOURNAL_NAME
        blob = bytearray(journal.read_bytes())
        names = [f"d{i}" for i in range(3)]
        for offset in range(len(blob)):
            mutated = bytearray(blob)
            mutated[offset] ^= 0xFF
            journal.write_bytes(bytes(mutated))
            try:
                store = open_store(path)
            except CorruptJournal:
                store = open_store(path, recover=True)
            try:
                got = sorted(d.body["name"] for d in store.find("Dataset")
                             if d.body["name"] in names)
                # any surviving documents form a prefix of the commit order,
                # possibly with later batches intact if only lengths shifted;
                # the invariant is: no document is ever half-applied
                for doc in store.find("Dataset"):
                    assert set(doc.body) == {"name"}
                assert all(name in names for name in got)
            finally:
                store.close()
            journal.write_bytes(bytes(blob))


class TestAtomicity:
    def test_put_batch_intra_refs(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            ds = store.put("Dataset", {"name": "d"})
            ids = store.put_batch([
                ("Signal", {"name": "a", "dataset_id": ds, "data_uri": "u"}),
                ("Signal", {"name": "b", "dataset_id": ds, "data_uri": "u"}),
            ])
            assert len(ids) == 2

    def test_put_batch_all_or_nothing(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            ds = store.put("Dataset", {"name": "d"})
            with pytest.raises(MissingField):
                store.put_batch([
                    ("Signal", {"name": "a", "dataset_id": ds, "data_uri": "u"}),
                    ("Signal", {"name": "broken"}),
                ])
            assert store.find("Signal") == []

    def test_record_signalrun_single_batch(self, tmp_path):
        path = tmp_path / "db"
        with open_store(path) as store:
            g = seed_graph(store)
            size_before = (path / JOURNAL_NAME).stat().st_size
            events = EventList((Event(t_s=10, t_e=20, severity=1.0),
                                Event(t_s=40, t_e=50, severity=2.0)))
            run_id = store.record_signalrun(g["datarun"], g["signal"], events)
            size_after = (path / JOURNAL_NAME).stat().st_size
            blob = (path / JOURNAL_NAME).read_bytes()[size_before:size_after]
            (length,) = struct.unpack("<I", blob[:4])
            assert len(blob) == 4 + length + 4  # exactly one journal record
            payload = json.loads(blob[4:4 + length])
            assert len(payload["docs"]) == 3  # run + two events
            assert store.get("Signalrun", run_id).body["num_events"] == 2

    def test_record_signalrun_bad_refs(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            with pytest.raises(DanglingReference):
                store.record_signalrun("missing", g["signal"], EventList(()))
            assert store.find("Signalrun") == []

    def test_put_linked_one_record(self, tmp_path):
        path = tmp_path / "db"
        with open_store(path) as store:
            g = seed_graph(store)
            size_before = (path / JOURNAL_NAME).stat().st_size
            event_id = store.put_linked(
                "Event", {"t_s": 1, "t_e": 5, "severity": 0.0, "source": "manual",
                          "signal_id": g["signal"], "signalrun_id": None},
                "EventInteraction", {"action": "create"}, "event_id")
            blob = (path / JOURNAL_NAME).read_bytes()[size_before:]
            (length,) = struct.unpack("<I", blob[:4])
            payload = json.loads(blob[4:4 + length])
            assert len(payload["docs"]) == 2
            inter = store.find("EventInteraction", {"event_id": event_id})
            assert len(inter) == 1 and inter[0].body["action"] == "create"


class TestTombstones:
    def _event(self, store, g):
        run_id = store.record_signalrun(g["datarun"], g["signal"],
                                        EventList((Event(t_s=1, t_e=5),)))
        return store.find("Event", {"signalrun_id": run_id})[0].id, run_id

    def test_delete_hides_from_find(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            event_id, _ = self._event(store, g)
            store.delete("Event", event_id)
            assert store.find("Event") == []
            assert store.find("Event", include_deleted=True)[0].deleted

    def test_tombstone_keeps_reference_fields(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            event_id, run_id = self._event(store, g)
            tomb = store.delete("Event", event_id)
            assert tomb.body["signalrun_id"] == run_id
            assert "t_s" not in tomb.body

    def test_interactions_survive_event_delete(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            event_id, _ = self._event(store, g)
            store.log_interaction(event_id, "investigate")
            store.delete("Event", event_id,
                         extra_docs=[("EventInteraction",
                                      {"event_id": event_id, "action": "delete"})])
            actions = [d.body["action"]
                       for d in store.find("EventInteraction", {"event_id": event_id})]
            assert actions == ["investigate", "delete"]
            assert store.audit() == []


class TestFind:
    def test_filter_and_limit(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            for i in range(10):
                store.put("Dataset", {"name": f"d{i % 2}"})
            assert len(store.find("Dataset", {"name": "d0"})) == 5
            assert len(store.find("Dataset", limit=3)) == 3
            assert len(store.find("Dataset", offset=8)) == 2

    def test_order_by_body_field(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            for name in ("c", "a", "b"):
                store.put("Dataset", {"name": name})
            names = [d.body["name"] for d in store.find("Dataset", order="name")]
            assert names == ["a", "b", "c"]

    def test_creation_order_default(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            ids = [store.put("Dataset", {"name": f"d{i}"}) for i in range(5)]
            assert [d.id for d in store.find("Dataset")] == ids


class TestAudit:
    def test_healthy_store_clean(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            store.record_signalrun(g["datarun"], g["signal"],
                                   EventList((Event(t_s=1, t_e=5),)))
            assert store.audit() == []

    def test_num_events_mismatch_flagged(self, tmp_path):
        with open_store(tmp_path / "db") as store:
            g = seed_graph(store)
            run_id = store.record_signalrun(g["datarun"], g["signal"],
                                            EventList((Event(t_s=1, t_e=5),)))
            store.update("Signalrun", run_id, {"num_events": 7})
            problems = store.audit()
            assert any("num_events" in p for p in problems)


def test_randomized_operation_audit(tmp_path):
    """10k random valid operations; invariants checked continuously via
    replay-equivalence at the end and audit() along the way."""
    rng = np.random.default_rng(0)
    path = tmp_path / "db"
    store = open_store(path)
    g = seed_graph(store)
    event_ids = []
    alive_events = []
    for i in range(10_000):
        op = rng.integers(0, 100)
        if op < 55 or not event_ids:
            run_id = store.record_signalrun(
                g["datarun"], g["signal"],
                EventList(tuple(Event(t_s=int(10 * j), t_e=int(10 * j + 5))
                                for j in range(int(rng.integers(0, 3))))))
            new = [d.id for d in store.find("Event", {"signalrun_id": run_id})]
            event_ids.extend(new)
            alive_events.extend(new)
        elif op < 75:
            eid = event_ids[int(rng.integers(0, len(event_ids)))]
            store.log_interaction(eid, "investigate")
        elif op < 90:
            eid = event_ids[int(rng.integers(0, len(event_ids)))]
            store.add_annotation(eid, "user", "confirm")
        elif alive_events:
            eid = alive_events.pop(int(rng.integers(0, len(alive_events))))
            store.delete("Event", eid)
        if i % 2000 == 0:
            assert store.audit() == []
    assert store.audit() == []
    n_runs = len(store.find("Signalrun"))
    n_events = len(store.find("Event", include_deleted=True))
    store.close()

    with open_store(path) as reopened:
        assert reopened.audit() == []
        assert len(reopened.find("Signalrun")) == n_runs
        assert len(reopened.find("Event", include_deleted=True)) == n_events
