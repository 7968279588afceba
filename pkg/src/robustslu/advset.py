"""Adversarial test-set construction with a human annotation workflow.

Candidates are paraphrase beams whose predicted intent flipped against
the original sentence's prediction. Each needs two independent
annotations; agreement finalizes, disagreement goes to a third
adjudicator. The store is an append-only line-delimited event log
replayed at startup, with in-memory claim leases for hand-out.

Status flow: pending -> annotated -> {final | adjudication}
             adjudication -> {final | rejected}
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from .corpus import Annotation, LabeledExample, SlotSpan, Utterance

STATUSES = ("pending", "annotated", "adjudication", "final", "rejected")
DECISIONS = ("valid", "meaningless", "ambiguous")


class StoreError(RuntimeError):
    pass


class NotFoundError(StoreError):
    pass


class ConflictError(StoreError):
    pass


class StateError(StoreError):
    pass


@dataclass
class Decision:
    kind: str                       # valid | meaningless | ambiguous
    annotation: Annotation | None = None

    def __post_init__(self):
        if self.kind not in DECISIONS:
            raise ValueError(f"unknown decision {self.kind!r}")
        if self.kind == "valid" and self.annotation is None:
            raise ValueError("valid decisions must carry a complete annotation")
        if self.kind != "valid":
            self.annotation = None

    def agrees_with(self, other: "Decision") -> bool:
        if self.kind != other.kind:
            return False
        if self.kind != "valid":
            return True
        return (self.annotation.intent == other.annotation.intent
                and self.annotation.span_set() == other.annotation.span_set())

    def to_json(self):
        obj = {"kind": self.kind}
        if self.annotation is not None:
            obj["intent"] = self.annotation.intent
            obj["slots"] = [[s.label, s.start, s.end] for s in self.annotation.slots]
        return obj

    @classmethod
    def from_json(cls, obj):
        ann = None
        if obj["kind"] == "valid":
            spans = tuple(SlotSpan(s[1], s[2], s[0]) for s in obj["slots"])
            ann = Annotation(obj["intent"], spans)
        return cls(obj["kind"], ann)


@dataclass
class AnnotationRecord:
    candidate_id: str
    annotator_id: str
    decision: Decision
    timestamp: float = 0.0


@dataclass
class AdjudicationRecord:
    candidate_id: str
    adjudicator_id: str
    decision: Decision
    timestamp: float = 0.0


@dataclass
class CandidateRecord:
    candidate_id: str
    original: LabeledExample
    paraphrase: Utterance
    source: str
    original_pred_intent: str
    paraphrase_pred_intent: str
    status: str = "pending"
    annotations: list = field(default_factory=list)
    adjudication: AdjudicationRecord | None = None
    final_decision: Decision | None = None


@dataclass
class Lease:
    candidate_id: str
    holder: str
    expires_at: float


def build_candidates(model, originals, paraphrase_sets) -> list[CandidateRecord]:
    """One record per beam whose predicted intent differs from the original's.

    The filter is on intent only; slot differences alone never qualify.
    Paraphrase sets referencing unknown originals are skipped.
    """
    from .tagger import predict
    by_id = {ex.utterance.id: ex for ex in originals}
    records = []
    skipped = []
    pred_cache = {}
    for pset in paraphrase_sets:
        original = by_id.get(pset.original_id)
        if original is None:
            skipped.append(pset.original_id)
            continue
        if pset.original_id not in pred_cache:
            pred_cache[pset.original_id] = predict(model, original.utterance)
        original_pred = pred_cache[pset.original_id]
        for rank, beam in enumerate(pset.beams):
            utt = Utterance.make(f"{pset.original_id}::{pset.source}::{rank}", beam.text)
            beam_pred = predict(model, utt)
            if beam_pred.intent == original_pred.intent:
                continue
            records.append(CandidateRecord(
                candidate_id=utt.id, original=original, paraphrase=utt, source=pset.source,
                original_pred_intent=original_pred.intent,
                paraphrase_pred_intent=beam_pred.intent))
    if skipped:
        import logging
        logging.getLogger(__name__).warning(
            "skipped %d paraphrase sets with unknown originals", len(skipped))
    return records


class CandidateStore:
    """Event-sourced candidate store; mutations serialized by one lock.

    Events (one JSON object per line): candidate-created, annotation-added,
    adjudicated. Leases are runtime-only claims and never persisted.
    """

    def __init__(self, log_path=None, clock=time.time, lease_seconds: float = 1800.0):
        self._lock = threading.Lock()
        self._clock = clock
        self.lease_seconds = lease_seconds
        self.candidates: dict[str, CandidateRecord] = {}
        self._order: list[str] = []
        self._leases: dict[tuple[str, str], Lease] = {}
        self.log_path = log_path
        self._log_fh = None
        if log_path is not None:
            try:
                with open(log_path, encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            self._apply(json.loads(line))
            except FileNotFoundError:
                pass
            self._log_fh = open(log_path, "a", encoding="utf-8")

    def close(self):
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None

    # --- event handling ---

    def _emit(self, event: dict):
        if self._log_fh:
            self._log_fh.write(json.dumps(event) + "\n")
            self._log_fh.flush()

    def _apply(self, event: dict):
        kind = event["event"]
        if kind == "candidate-created":
            rec = _candidate_from_json(event["candidate"])
            self.candidates[rec.candidate_id] = rec
            self._order.append(rec.candidate_id)
        elif kind == "annotation-added":
            rec = self.candidates[event["candidate_id"]]
            ann = AnnotationRecord(event["candidate_id"], event["annotator_id"],
                                   Decision.from_json(event["decision"]), event["timestamp"])
            self._record_annotation(rec, ann)
        elif kind == "adjudicated":
            rec = self.candidates[event["candidate_id"]]
            adj = AdjudicationRecord(event["candidate_id"], event["adjudicator_id"],
                                     Decision.from_json(event["decision"]), event["timestamp"])
            self._resolve(rec, adj)
        elif kind == "exported":
            pass  # audit record only; exports never mutate candidate state
        else:
            raise StoreError(f"unknown event kind {kind!r}")

    # --- candidate intake ---

    def add_candidates(self, records):
        with self._lock:
            for rec in records:
                if rec.candidate_id in self.candidates:
                    raise ConflictError(f"candidate {rec.candidate_id!r} already exists")
                self.candidates[rec.candidate_id] = rec
                self._order.append(rec.candidate_id)
                self._emit({"event": "candidate-created", "candidate": _candidate_to_json(rec)})

    # --- annotation ---

    def record_annotation(self, rec: AnnotationRecord) -> str:
        """Returns the candidate's status after applying the annotation."""
        with self._lock:
            cand = self.candidates.get(rec.candidate_id)
            if cand is None:
                raise NotFoundError(f"no candidate {rec.candidate_id!r}")
            if any(a.annotator_id == rec.annotator_id for a in cand.annotations):
                raise ConflictError(
                    f"annotator {rec.annotator_id!r} already annotated {rec.candidate_id!r}")
            if cand.status not in ("pending", "annotated"):
                raise StateError(f"candidate {rec.candidate_id!r} is {cand.status}, "
                                 "not awaiting annotation")
            if rec.timestamp == 0.0:
                rec.timestamp = self._clock()
            self._record_annotation(cand, rec)
            self._emit({"event": "annotation-added", "candidate_id": rec.candidate_id,
                        "annotator_id": rec.annotator_id, "decision": rec.decision.to_json(),
                        "timestamp": rec.timestamp})
            self._release(rec.candidate_id, rec.annotator_id)
            return cand.status

    def _record_annotation(self, cand: CandidateRecord, rec: AnnotationRecord):
        cand.annotations.append(rec)
        if len(cand.annotations) == 1:
            cand.status = "annotated"
        elif len(cand.annotations) == 2:
            first, second = cand.annotations
            if first.decision.agrees_with(second.decision):
                cand.status = "final"
                cand.final_decision = first.decision
            else:
                cand.status = "adjudication"

    # --- adjudication ---

    def resolve(self, adj: AdjudicationRecord) -> str:
        with self._lock:
            cand = self.candidates.get(adj.candidate_id)
            if cand is None:
                raise NotFoundError(f"no candidate {adj.candidate_id!r}")
            if cand.status != "adjudication":
                raise StateError(f"candidate {adj.candidate_id!r} is {cand.status}, "
                                 "not awaiting adjudication")
            if adj.timestamp == 0.0:
                adj.timestamp = self._clock()
            self._resolve(cand, adj)
            self._emit({"event": "adjudicated", "candidate_id": adj.candidate_id,
                        "adjudicator_id": adj.adjudicator_id,
                        "decision": adj.decision.to_json(), "timestamp": adj.timestamp})
            self._release(adj.candidate_id, adj.adjudicator_id)
            return cand.status

    def _resolve(self, cand: CandidateRecord, adj: AdjudicationRecord):
        cand.adjudication = adj
        if adj.decision.kind == "valid":
            cand.status = "final"
            cand.final_decision = adj.decision
        else:
            cand.status = "rejected"
            cand.final_decision = adj.decision

    # --- hand-out with leases ---

    def _release(self, candidate_id: str, holder: str):
        self._leases.pop((candidate_id, holder), None)

    def _active_leases(self, candidate_id: str, now: float):
        out = []
        for (cid, holder), lease in list(self._leases.items()):
            if cid != candidate_id:
                continue
            if lease.expires_at <= now:
                del self._leases[(cid, holder)]
            else:
                out.append(lease)
        return out

    def claim_next(self, annotator_id: str) -> CandidateRecord | None:
        """Claim a candidate still needing an annotation from this annotator.

        A candidate has two annotation slots; concurrent annotators may hold
        one each but never the same one, and nobody annotates twice.
        """
        with self._lock:
            now = self._clock()
            for cid in self._order:
                cand = self.candidates[cid]
                if cand.status not in ("pending", "annotated"):
                    continue
                if any(a.annotator_id == annotator_id for a in cand.annotations):
                    continue
                leases = self._active_leases(cid, now)
                mine = [l for l in leases if l.holder == annotator_id]
                if mine:
                    mine[0].expires_at = now + self.lease_seconds
                    return cand  # renew the claim this annotator already holds
                if len(cand.annotations) + len(leases) >= 2:
                    continue
                self._leases[(cid, annotator_id)] = Lease(
                    cid, annotator_id, now + self.lease_seconds)
                return cand
            return None

    def claim_next_adjudication(self, adjudicator_id: str) -> CandidateRecord | None:
        with self._lock:
            now = self._clock()
            for cid in self._order:
                cand = self.candidates[cid]
                if cand.status != "adjudication":
                    continue
                leases = self._active_leases(cid, now)
                mine = [l for l in leases if l.holder == adjudicator_id]
                if mine:
                    mine[0].expires_at = now + self.lease_seconds
                    return cand
                if leases:
                    continue
                self._leases[(cid, adjudicator_id)] = Lease(
                    cid, adjudicator_id, now + self.lease_seconds)
                return cand
            return None

    # --- reads ---

    def get(self, candidate_id: str) -> CandidateRecord:
        cand = self.candidates.get(candidate_id)
        if cand is None:
            raise NotFoundError(f"no candidate {candidate_id!r}")
        return cand

    def progress(self) -> dict:
        with self._lock:
            by_status = {s: 0 for s in STATUSES}
            by_source: dict = {}
            for cand in self.candidates.values():
                by_status[cand.status] += 1
                src = by_source.setdefault(cand.source, {s: 0 for s in STATUSES})
                src[cand.status] += 1
            return {"total": len(self.candidates), "by_status": by_status,
                    "by_source": by_source}

    def export_rows(self) -> list[tuple[LabeledExample, str]]:
        """Final valid candidates with their source descriptor, in intake order."""
        out = []
        with self._lock:
            for cid in self._order:
                cand = self.candidates[cid]
                if cand.status == "final" and cand.final_decision.kind == "valid":
                    ex = LabeledExample(
                        cand.paraphrase, cand.final_decision.annotation,
                        origin="adversarial", weight=1.0,
                        original_id=cand.original.utterance.id)
                    out.append((ex, cand.source))
            self._emit({"event": "exported", "count": len(out),
                        "candidate_ids": [ex.utterance.id for ex, _ in out],
                        "timestamp": self._clock()})
        return out

    def export(self) -> list[LabeledExample]:
        """Final valid candidates as adversarial examples with their human gold."""
        return [ex for ex, _ in self.export_rows()]


def _candidate_to_json(rec: CandidateRecord) -> dict:
    return {
        "candidate_id": rec.candidate_id,
        "original": {
            "id": rec.original.utterance.id,
            "text": rec.original.utterance.text,
            "intent": rec.original.annotation.intent,
            "slots": [[s.label, s.start, s.end] for s in rec.original.annotation.slots],
        },
        "paraphrase_text": rec.paraphrase.text,
        "source": rec.source,
        "original_pred_intent": rec.original_pred_intent,
        "paraphrase_pred_intent": rec.paraphrase_pred_intent,
    }


def _candidate_from_json(obj: dict) -> CandidateRecord:
    orig = obj["original"]
    spans = tuple(SlotSpan(s[1], s[2], s[0]) for s in orig["slots"])
    original = LabeledExample(Utterance.make(orig["id"], orig["text"]),
                              Annotation(orig["intent"], spans))
    return CandidateRecord(
        candidate_id=obj["candidate_id"], original=original,
        paraphrase=Utterance.make(obj["candidate_id"], obj["paraphrase_text"]),
        source=obj["source"], original_pred_intent=obj["original_pred_intent"],
        paraphrase_pred_intent=obj["paraphrase_pred_intent"])
