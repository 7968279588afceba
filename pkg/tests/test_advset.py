import numpy as np
import pytest

from robustslu.advset import (AdjudicationRecord, AnnotationRecord, CandidateRecord,
                              CandidateStore, ConflictError, Decision, NotFoundError,
                              StateError, build_candidates)
from robustslu.corpus import Annotation, LabeledExample, SlotSpan, Utterance
from robustslu.paraphraser import Beam, ParaphraseSet
from robustslu.tagger import TaggerConfig, train

VALID_A = Decision("valid", Annotation("intent/a", (SlotSpan(0, 0, "x"),)))
VALID_A2 = Decision("valid", Annotation("intent/a", (SlotSpan(0, 0, "x"),)))
VALID_B = Decision("valid", Annotation("intent/b", ()))
MEANINGLESS = Decision("meaningless")
AMBIGUOUS = Decision("ambiguous")


def candidate(cid="c1", source="bt-es"):
    original = LabeledExample(Utterance.make(f"orig-{cid}", "cancel the alarm"),
                              Annotation("alarm/cancel", ()))
    return CandidateRecord(candidate_id=cid, original=original,
                           paraphrase=Utterance.make(cid, "pause the alarm"),
                           source=source, original_pred_intent="alarm/cancel",
                           paraphrase_pred_intent="alarm/pause")


def store_with(n=1, **kwargs):
    store = CandidateStore(**kwargs)
    store.add_candidates([candidate(f"c{i}") for i in range(1, n + 1)])
    return store


def test_agreeing_valid_annotations_finalize():
    store = store_with()
    assert store.record_annotation(AnnotationRecord("c1", "alice", VALID_A)) == "annotated"
    assert store.record_annotation(AnnotationRecord("c1", "bob", VALID_A2)) == "final"
    assert store.get("c1").final_decision.kind == "valid"


def test_disagreement_routes_to_adjudication():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    assert store.record_annotation(AnnotationRecord("c1", "bob", MEANINGLESS)) == "adjudication"


def test_valid_but_different_annotations_disagree():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    assert store.record_annotation(AnnotationRecord("c1", "bob", VALID_B)) == "adjudication"


def test_same_annotator_twice_rejected():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    with pytest.raises(ConflictError):
        store.record_annotation(AnnotationRecord("c1", "alice", VALID_A2))


def test_unknown_candidate_not_found():
    store = store_with()
    with pytest.raises(NotFoundError):
        store.record_annotation(AnnotationRecord("nope", "alice", VALID_A))


def test_adjudicator_valid_finalizes_with_annotation():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", MEANINGLESS))
    status = store.resolve(AdjudicationRecord("c1", "carol", VALID_B))
    assert status == "final"
    assert store.get("c1").final_decision.annotation.intent == "intent/b"


def test_adjudicator_ambiguous_rejects():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", AMBIGUOUS))
    assert store.resolve(AdjudicationRecord("c1", "carol", AMBIGUOUS)) == "rejected"


def test_resolve_on_final_candidate_is_state_error():
    store = store_with()
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", VALID_A2))
    with pytest.raises(StateError):
        store.resolve(AdjudicationRecord("c1", "carol", VALID_A))


def test_export_only_final_valid():
    store = store_with(5)
    # c1: final valid, c2: rejected via adjudication, c3: agreed meaningless, c4/c5 pending
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", VALID_A2))
    store.record_annotation(AnnotationRecord("c2", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c2", "bob", MEANINGLESS))
    store.resolve(AdjudicationRecord("c2", "carol", MEANINGLESS))
    store.record_annotation(AnnotationRecord("c3", "alice", MEANINGLESS))
    store.record_annotation(AnnotationRecord("c3", "bob", MEANINGLESS))
    exported = store.export()
    assert [ex.utterance.id for ex in exported] == ["c1"]
    assert exported[0].origin == "adversarial"
    # exported gold is the human annotation, not the original's labels
    assert exported[0].annotation.intent == "intent/a"
    # idempotent
    assert [ex.utterance.id for ex in store.export()] == ["c1"]


def test_progress_counts():
    store = store_with(5)
    assert store.progress()["by_status"]["pending"] == 5
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", VALID_A2))
    prog = store.progress()
    assert prog["by_status"]["final"] == 1
    assert prog["by_status"]["pending"] == 4
    assert sum(prog["by_status"].values()) == prog["total"] == 5


def test_event_log_replay_reproduces_state(tmp_path):
    path = tmp_path / "events.jsonl"
    store = store_with(3, log_path=path)
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    store.record_annotation(AnnotationRecord("c1", "bob", MEANINGLESS))
    store.resolve(AdjudicationRecord("c1", "carol", VALID_A))
    store.record_annotation(AnnotationRecord("c2", "alice", VALID_A))
    before = store.progress()
    exported_before = [ex.utterance.id for ex in store.export()]
    store.close()
    replayed = CandidateStore(log_path=path)
    assert replayed.progress() == before
    assert [ex.utterance.id for ex in replayed.export()] == exported_before
    assert replayed.get("c1").status == "final"
    replayed.close()
    # exports leave audit events in the log without mutating state on replay
    import json as _json
    events = [_json.loads(line)["event"] for line in path.read_text().splitlines() if line]
    assert events.count("exported") == 2
    again = CandidateStore(log_path=path)
    assert again.progress() == before
    again.close()


def test_lease_handout_two_annotators_share_candidate():
    store = store_with(1)
    a = store.claim_next("alice")
    b = store.claim_next("bob")
    assert a.candidate_id == b.candidate_id == "c1"
    c = store.claim_next("carol")
    assert c is None  # both slots claimed


def test_lease_excludes_already_annotated():
    store = store_with(1)
    store.record_annotation(AnnotationRecord("c1", "alice", VALID_A))
    assert store.claim_next("alice") is None
    assert store.claim_next("bob").candidate_id == "c1"


def test_lease_expiry_returns_candidate_to_pool():
    clock = {"t": 0.0}
    store = store_with(1, clock=lambda: clock["t"], lease_seconds=10.0)
    assert store.claim_next("alice").candidate_id == "c1"
    assert store.claim_next("bob").candidate_id == "c1"
    assert store.claim_next("carol") is None
    clock["t"] = 11.0
    assert store.claim_next("carol").candidate_id == "c1"


def test_adjudication_queue_claims():
    store = store_with(2)
    for cid in ("c1", "c2"):
        store.record_annotation(AnnotationRecord(cid, "alice", VALID_A))
        store.record_annotation(AnnotationRecord(cid, "bob", MEANINGLESS))
    a = store.claim_next_adjudication("carol")
    b = store.claim_next_adjudication("dave")
    assert a.candidate_id != b.candidate_id


def test_status_dag_property_random_operation_sequences():
    """No reachable transition outside the documented DAG, over 1000 runs."""
    allowed = {
        "pending": {"annotated"},
        "annotated": {"final", "adjudication"},
        "adjudication": {"final", "rejected"},
        "final": set(),
        "rejected": set(),
    }
    decisions = [VALID_A, VALID_A2, VALID_B, MEANINGLESS, AMBIGUOUS]
    rng = np.random.default_rng(0)
    for run in range(1000):
        store = store_with(1)
        annotators = ["a1", "a2", "a3", "a4"]
        history = ["pending"]
        for _ in range(int(rng.integers(1, 8))):
            op = rng.integers(3)
            try:
                if op == 0:
                    who = annotators[rng.integers(len(annotators))]
                    status = store.record_annotation(AnnotationRecord(
                        "c1", who, decisions[rng.integers(len(decisions))]))
                elif op == 1:
                    status = store.resolve(AdjudicationRecord(
                        "c1", "judge", decisions[rng.integers(len(decisions))]))
                else:
                    store.claim_next(annotators[rng.integers(len(annotators))])
                    status = store.get("c1").status
            except (ConflictError, StateError):
                status = store.get("c1").status
            if status != history[-1]:
                assert status in allowed[history[-1]], f"run {run}: {history[-1]} -> {status}"
                history.append(status)
        # terminal statuses carry a final decision iff final/rejected
        cand = store.get("c1")
        if cand.status in ("final", "rejected"):
            assert cand.final_decision is not None
        else:
            assert cand.final_decision is None


def tiny_model():
    data = [
        LabeledExample(Utterance.make(f"t{i}", text), Annotation(intent, ()))
        for i, (text, intent) in enumerate([
            ("cancel the alarm", "alarm/cancel"),
            ("cancel my alarm", "alarm/cancel"),
            ("pause the alarm", "alarm/pause"),
            ("pause my alarm", "alarm/pause"),
        ] * 4)
    ]
    cfg = TaggerConfig(hidden_size=12, num_layers=1, dropout=0.0, learning_rate=0.02,
                       weight_decay=0.0, epochs=12, embedding_dim=8, batch_size=4, seed=0)
    model, _ = train(data, None, cfg)
    return model, data


def test_build_candidates_flip_filter():
    model, data = tiny_model()
    original = data[0]  # "cancel the alarm"
    from robustslu.tagger import predict
    assert predict(model, original.utterance).intent == "alarm/cancel"
    sets = [ParaphraseSet(original.utterance.id, "bt-es",
                          [Beam("pause the alarm", 0.0),      # flips
                           Beam("cancel that alarm", -1.0)])]  # same intent
    records = build_candidates(model, [original], sets)
    assert len(records) == 1
    rec = records[0]
    assert rec.paraphrase.text == "pause the alarm"
    assert rec.original_pred_intent != rec.paraphrase_pred_intent
    assert rec.status == "pending"


def test_build_candidates_skips_unknown_originals_and_empty():
    model, data = tiny_model()
    sets = [ParaphraseSet("unknown-id", "bt-es", [Beam("pause the alarm", 0.0)]),
            ParaphraseSet(data[0].utterance.id, "bt-es", [])]
    assert build_candidates(model, [data[0]], sets) == []
