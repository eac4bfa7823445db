"""HTTP annotation service: session handling, warm-up, task issuance, and
atomic label persistence behind the browser UI.

Sessions live in a JSON store file next to the label file so an interrupted
annotation run resumes; label appends are serialized through one lock and
written as a single line per record.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response

from .corpus import CCR_CHOICES, Corpus, Svd, load_corpus, sample_ccr_pair

WARMUP_COUNT = 10

ACR_SCALE = {"min": 1, "max": 5, "min_caption": "1: not so", "max_caption": "5: so"}


class SessionStore:
    """File-backed session state with a single-writer lock."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = threading.Lock()
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                self.state = json.load(fh)
        else:
            self.state = {"sessions": {}, "warmed_annotators": []}

    def flush(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.state, fh)
        os.replace(tmp, self.path)


def _load_svds(data_dir: Path) -> dict[str, Svd] | None:
    registry = data_dir / "svds.json"
    if not registry.exists():
        return None
    with open(registry, encoding="utf-8") as fh:
        entries = json.load(fh)
    return {e["id"]: Svd(id=e["id"], description=e.get("description", ""),
                         gender_scope=e.get("gender_scope", "any"))
            for e in entries}


def create_app(data_dir: str | Path, labels_path: str | Path,
               manifest_name: str = "manifest_audio.jsonl",
               rng_seed: int | None = None) -> FastAPI:
    """Build the annotation app over a corpus directory and a label sink.

    The corpus manifest is ``manifest_name`` inside ``data_dir`` (falling
    back to ``manifest.jsonl``); an optional ``svds.json`` there declares
    descriptor gender scopes, otherwise any descriptor id is accepted with
    unrestricted scope.
    """
    data_dir = Path(data_dir)
    labels_path = Path(labels_path)
    manifest = data_dir / manifest_name
    if not manifest.exists():
        manifest = data_dir / "manifest.jsonl"
    corpus: Corpus = load_corpus(manifest)
    svds = _load_svds(data_dir)
    store = SessionStore(Path(str(labels_path) + ".sessions.json"))
    rng = np.random.default_rng(rng_seed)

    app = FastAPI(title="svdrank annotation service")

    def resolve_svd(svd_id: str) -> Svd:
        if svds is None:
            return Svd(id=svd_id, gender_scope="any")
        if svd_id not in svds:
            raise HTTPException(404, f"unknown descriptor {svd_id!r}")
        return svds[svd_id]

    def get_session(session_id: str) -> dict:
        session = store.state["sessions"].get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    def append_label(record: dict) -> None:
        # One write call per record keeps a crash from leaving half a line.
        line = json.dumps(record) + "\n"
        with open(labels_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    @app.get("/api/session/new")
    def new_session(annotator: str, svd: str, mode: str):
        if mode not in ("acr", "ccr"):
            raise HTTPException(400, f"mode must be 'acr' or 'ccr', got {mode!r}")
        if not annotator:
            raise HTTPException(400, "annotator must be non-empty")
        resolve_svd(svd)
        with store.lock:
            warmed = annotator in store.state["warmed_annotators"]
            session_id = uuid.uuid4().hex
            store.state["sessions"][session_id] = {
                "annotator": annotator, "svd": svd, "mode": mode,
                "warmup_done": warmed, "warmup_ids": None, "tasks": {},
            }
            store.flush()
        return {"session_id": session_id, "mode": mode, "svd": svd,
                "warmup_done": warmed}

    @app.get("/api/session/{session_id}/warmup")
    def warmup(session_id: str):
        with store.lock:
            session = get_session(session_id)
            if session["warmup_ids"] is None:
                svd = resolve_svd(session["svd"])
                eligible = [u.id for u in corpus.scoped(svd)]
                if len(eligible) < WARMUP_COUNT:
                    raise HTTPException(
                        400, f"corpus has only {len(eligible)} eligible utterances, "
                             f"warm-up needs {WARMUP_COUNT}")
                picks = rng.choice(len(eligible), size=WARMUP_COUNT, replace=False)
                session["warmup_ids"] = [eligible[i] for i in picks]
                store.flush()
            return {"utterances": session["warmup_ids"],
                    "warmup_done": session["warmup_done"]}

    @app.post("/api/session/{session_id}/warmup/done")
    def warmup_done(session_id: str):
        with store.lock:
            session = get_session(session_id)
            session["warmup_done"] = True
            if session["annotator"] not in store.state["warmed_annotators"]:
                store.state["warmed_annotators"].append(session["annotator"])
            store.flush()
        return {"warmup_done": True}

    @app.get("/api/session/{session_id}/task")
    def task(session_id: str):
        with store.lock:
            session = get_session(session_id)
            if not session["warmup_done"]:
                raise HTTPException(409, "warm-up must be completed before labeling")
            svd = resolve_svd(session["svd"])
            task_id = uuid.uuid4().hex
            if session["mode"] == "ccr":
                utt_i, utt_j = sample_ccr_pair(corpus, svd, rng)
                record = {"mode": "ccr", "utt_i": utt_i, "utt_j": utt_j,
                          "answered": False}
                body = {"task_id": task_id, "mode": "ccr", "utt_i": utt_i,
                        "utt_j": utt_j, "choices": list(CCR_CHOICES)}
            else:
                eligible = corpus.scoped(svd)
                if not eligible:
                    raise HTTPException(400, "no utterance in descriptor scope")
                utt = eligible[rng.integers(len(eligible))].id
                record = {"mode": "acr", "utt": utt, "answered": False}
                body = {"task_id": task_id, "mode": "acr", "utterance": utt,
                        "scale": ACR_SCALE}
            session["tasks"][task_id] = record
            store.flush()
        return body

    @app.post("/api/session/{session_id}/label")
    def label(session_id: str, body: dict):
        task_id = body.get("task_id")
        payload = body.get("payload")
        if not isinstance(task_id, str) or not isinstance(payload, dict):
            raise HTTPException(422, "body must carry task_id and a payload object")
        with store.lock:
            session = get_session(session_id)
            issued = session["tasks"].get(task_id)
            if issued is None:
                raise HTTPException(404, f"task {task_id!r} was not issued to this session")
            if issued["answered"]:
                raise HTTPException(409, f"task {task_id!r} was already answered")
            if issued["mode"] == "ccr":
                choice = payload.get("choice")
                if choice not in CCR_CHOICES:
                    raise HTTPException(
                        422, f"choice must be one of {list(CCR_CHOICES)}, got {choice!r}")
                record = {"svd": session["svd"], "annotator": session["annotator"],
                          "utt_i": issued["utt_i"], "utt_j": issued["utt_j"],
                          "choice": choice}
            else:
                rating = payload.get("rating")
                if not isinstance(rating, int) or isinstance(rating, bool) \
                        or not 1 <= rating <= 5:
                    raise HTTPException(422, f"rating must be an integer in [1,5], got {rating!r}")
                record = {"svd": session["svd"], "annotator": session["annotator"],
                          "utt": issued["utt"], "rating": rating}
            append_label(record)
            issued["answered"] = True
            store.flush()
        return {"status": "stored", "record": record}

    @app.get("/audio/{utterance_id}")
    def audio(utterance_id: str):
        utt = corpus.by_id.get(utterance_id)
        if utt is None or utt.audio_path is None:
            raise HTTPException(404, f"no audio for utterance {utterance_id!r}")
        wav_path = data_dir / utt.audio_path
        if not wav_path.exists():
            raise HTTPException(404, f"audio file missing for {utterance_id!r}")
        return Response(content=wav_path.read_bytes(), media_type="audio/wav")

    return app
