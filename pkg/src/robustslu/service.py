"""HTTP facade over the candidate store for the annotation UI.

Annotators pull candidates, submit decisions, and adjudicators resolve
disagreements. Responses to annotators never include model predictions
or anyone else's decisions; only the adjudication queue exposes the two
conflicting annotations, and only to adjudicator tokens.

Auth is a static token file (internal tool): a JSON object mapping each
token to {"annotator_id": ..., "role": "annotator"|"adjudicator",
"expires": epoch-seconds or null}.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel

from .advset import (AdjudicationRecord, AnnotationRecord, CandidateStore, ConflictError,
                     Decision, NotFoundError, StateError)
from .corpus import Annotation, DataError, LabelSpace, SlotSpan


@dataclass
class SessionToken:
    annotator_id: str
    role: str
    expires: float | None = None


def load_tokens(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    tokens = {}
    for token, entry in raw.items():
        role = entry.get("role", "annotator")
        if role not in ("annotator", "adjudicator"):
            raise ValueError(f"unknown role {role!r} for token")
        tokens[token] = SessionToken(entry["annotator_id"], role, entry.get("expires"))
    return tokens


class SlotBody(BaseModel):
    label: str
    start: int
    end: int


class AnnotationBody(BaseModel):
    candidate_id: str
    decision: str                      # valid | meaningless | ambiguous
    intent: str | None = None
    slots: list[SlotBody] = []


def _decision_from_body(body: AnnotationBody, space: LabelSpace, n_tokens: int) -> Decision:
    if body.decision not in ("valid", "meaningless", "ambiguous"):
        raise HTTPException(400, detail={"field": "decision",
                                         "error": f"unknown decision {body.decision!r}"})
    if body.decision != "valid":
        if body.intent or body.slots:
            raise HTTPException(400, detail={"field": "decision",
                                             "error": "flags cannot carry intent or slots"})
        return Decision(body.decision)
    if not body.intent:
        raise HTTPException(400, detail={"field": "intent", "error": "intent required"})
    try:
        spans = tuple(SlotSpan(s.start, s.end, s.label) for s in body.slots)
        for span in spans:
            span.validate(n_tokens)
        ann = Annotation(body.intent, spans)
        space.check(ann)
    except DataError as exc:
        raise HTTPException(400, detail={"field": "slots", "error": str(exc)})
    return Decision("valid", ann)


def candidate_view(cand, space: LabelSpace, show_original: bool) -> dict:
    """The annotator-facing payload: never predictions, never others' decisions."""
    return {
        "candidate_id": cand.candidate_id,
        "paraphrase_text": cand.paraphrase.text,
        "paraphrase_tokens": list(cand.paraphrase.tokens),
        "original_text": cand.original.utterance.text if show_original else None,
        "source": cand.source,
        "intents": list(space.intents),
        "slot_labels": list(space.slot_labels),
    }


def create_app(store: CandidateStore, label_space: LabelSpace, tokens: dict,
               show_original: bool = True, ui_dir=None, clock=time.time) -> FastAPI:
    app = FastAPI(title="annotation service")

    def session(x_auth_token: str = Header(default="")) -> SessionToken:
        tok = tokens.get(x_auth_token)
        if tok is None:
            raise HTTPException(401, detail="unknown token")
        if tok.expires is not None and tok.expires <= clock():
            raise HTTPException(401, detail="token expired")
        return tok

    def annotator(tok: SessionToken = Depends(session)) -> SessionToken:
        return tok

    def adjudicator(tok: SessionToken = Depends(session)) -> SessionToken:
        if tok.role != "adjudicator":
            raise HTTPException(403, detail="adjudicator role required")
        return tok

    @app.get("/api/labelspace")
    def labelspace(tok: SessionToken = Depends(session)):
        return label_space.to_json()

    @app.get("/api/candidates/next")
    def next_candidate(tok: SessionToken = Depends(annotator)):
        cand = store.claim_next(tok.annotator_id)
        if cand is None:
            return {"candidate": None}
        return {"candidate": candidate_view(cand, label_space, show_original)}

    @app.post("/api/annotations")
    def submit_annotation(body: AnnotationBody, tok: SessionToken = Depends(annotator)):
        try:
            cand = store.get(body.candidate_id)
        except NotFoundError as exc:
            raise HTTPException(404, detail=str(exc))
        decision = _decision_from_body(body, label_space, len(cand.paraphrase.tokens))
        try:
            status = store.record_annotation(AnnotationRecord(
                body.candidate_id, tok.annotator_id, decision))
        except ConflictError as exc:
            raise HTTPException(409, detail=str(exc))
        except StateError as exc:
            raise HTTPException(409, detail=str(exc))
        return {"candidate_id": body.candidate_id, "status": status}

    @app.get("/api/adjudications/next")
    def next_adjudication(tok: SessionToken = Depends(adjudicator)):
        cand = store.claim_next_adjudication(tok.annotator_id)
        if cand is None:
            return {"candidate": None}
        view = candidate_view(cand, label_space, show_original)
        view["annotations"] = [
            {"annotator_id": rec.annotator_id, "decision": rec.decision.to_json()}
            for rec in cand.annotations
        ]
        return {"candidate": view}

    @app.post("/api/adjudications")
    def submit_adjudication(body: AnnotationBody, tok: SessionToken = Depends(adjudicator)):
        try:
            cand = store.get(body.candidate_id)
        except NotFoundError as exc:
            raise HTTPException(404, detail=str(exc))
        decision = _decision_from_body(body, label_space, len(cand.paraphrase.tokens))
        try:
            status = store.resolve(AdjudicationRecord(
                body.candidate_id, tok.annotator_id, decision))
        except StateError as exc:
            raise HTTPException(409, detail=str(exc))
        return {"candidate_id": body.candidate_id, "status": status}

    @app.get("/api/progress")
    def progress(tok: SessionToken = Depends(session)):
        return store.progress()

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
