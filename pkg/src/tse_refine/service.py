"""HTTP backend for the interactive annotation loop: serve audio, accept region
marks, run refinement on demand, collect MOS ratings, export analysis rows.

State lives in a single SQLite file; masks and refined audio are written next
to it. The static UI bundle, when present, is served from /ui.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .audio import read_wav, write_wav
from .masks import EditMask, mask_to_regions, regions_to_mask, save_mask
from .mixer import load_manifest
from .models import (HitlTseModel, adapt_state, compose_output, load_checkpoint,
                     refine_forward, speaker_encode, tse_forward)

DEFAULT_FAMILIARIZATION_COUNT = 5

_SCHEMA = """
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    annotator_id TEXT NOT NULL,
    sample_ids TEXT NOT NULL,
    familiarization_count INTEGER NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS sample_status (
    session_id TEXT NOT NULL,
    sample_id TEXT NOT NULL,
    status TEXT NOT NULL DEFAULT 'pending',
    PRIMARY KEY (session_id, sample_id)
);
CREATE TABLE IF NOT EXISTS annotations (
    session_id TEXT NOT NULL,
    sample_id TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    regions TEXT NOT NULL,
    created_at REAL NOT NULL,
    PRIMARY KEY (session_id, sample_id)
);
CREATE TABLE IF NOT EXISTS ratings (
    session_id TEXT NOT NULL,
    sample_id TEXT NOT NULL,
    config TEXT NOT NULL,
    mos INTEGER NOT NULL,
    created_at REAL NOT NULL,
    PRIMARY KEY (session_id, sample_id, config)
);
"""


class CreateSessionRequest(BaseModel):
    annotator_id: str
    sample_ids: list[str] | None = None
    sample_count: int | None = None
    familiarization_count: int = DEFAULT_FAMILIARIZATION_COUNT


class AnnotationRequest(BaseModel):
    session_id: str
    regions: list[list[float]]  # [start_s, end_s) pairs


class RefineRequest(BaseModel):
    session_id: str


class RatingRequest(BaseModel):
    session_id: str
    config: str = Field(pattern="^(tse|refine|refine-replace)$")
    mos: int


def normalize_regions(regions: list[list[float]], duration: float) -> list[list[float]]:
    """Validate, sort, and merge overlapping [start_s, end_s) regions."""
    for region in regions:
        if len(region) != 2:
            raise ValueError(f"region must be [start, end): {region}")
        start, end = region
        if not (0.0 <= start < end <= duration + 1e-9):
            raise ValueError(f"region [{start}, {end}) out of range [0, {duration})")
    merged: list[list[float]] = []
    for start, end in sorted([list(map(float, r)) for r in regions]):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return merged


def regions_to_sample_mask(regions: list[list[float]], total_len: int,
                           sample_rate: int) -> EditMask:
    """Seconds -> samples: start rounds down, end rounds up."""
    sample_regions = []
    for start_s, end_s in regions:
        start = int(np.floor(start_s * sample_rate))
        end = min(int(np.ceil(end_s * sample_rate)), total_len)
        if start < end:
            sample_regions.append([start, end])
    return regions_to_mask(sample_regions, total_len, sample_rate)


class AnnotationStore:
    """SQLite-backed session/annotation/rating persistence."""

    def __init__(self, db_path):
        self.db_path = str(db_path)
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    def _connect(self):
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def create_session(self, session_id, annotator_id, sample_ids,
                       familiarization_count) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO sessions VALUES (?, ?, ?, ?, ?)",
                (session_id, annotator_id, json.dumps(sample_ids),
                 familiarization_count, time.time()))
            conn.executemany(
                "INSERT INTO sample_status (session_id, sample_id) VALUES (?, ?)",
                [(session_id, sid) for sid in sample_ids])

    def get_session(self, session_id) -> dict | None:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM sessions WHERE session_id = ?",
                               (session_id,)).fetchone()
        if row is None:
            return None
        session = dict(row)
        session["sample_ids"] = json.loads(session["sample_ids"])
        return session

    def statuses(self, session_id) -> dict[str, str]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT sample_id, status FROM sample_status WHERE session_id = ?",
                (session_id,)).fetchall()
        return {r["sample_id"]: r["status"] for r in rows}

    def set_status(self, session_id, sample_id, status) -> None:
        with self._connect() as conn:
            conn.execute(
                "UPDATE sample_status SET status = ? WHERE session_id = ? AND sample_id = ?",
                (status, session_id, sample_id))

    def save_annotation(self, session_id, sample_id, annotator_id, regions) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO annotations VALUES (?, ?, ?, ?, ?)",
                (session_id, sample_id, annotator_id, json.dumps(regions), time.time()))

    def get_annotation(self, session_id, sample_id) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM annotations WHERE session_id = ? AND sample_id = ?",
                (session_id, sample_id)).fetchone()
        if row is None:
            return None
        annotation = dict(row)
        annotation["regions"] = json.loads(annotation["regions"])
        return annotation

    def save_rating(self, session_id, sample_id, config, mos) -> None:
        with self._connect() as conn:
            conn.execute("INSERT OR REPLACE INTO ratings VALUES (?, ?, ?, ?, ?)",
                         (session_id, sample_id, config, mos, time.time()))

    def ratings(self, session_id=None) -> list[dict]:
        query = "SELECT * FROM ratings"
        params: tuple = ()
        if session_id:
            query += " WHERE session_id = ?"
            params = (session_id,)
        with self._connect() as conn:
            return [dict(r) for r in conn.execute(query, params).fetchall()]


def create_app(eval_dir, db_path, mask_dir, refined_dir,
               checkpoint_path=None, ui_dir=None) -> FastAPI:
    """Build the service app around a materialized eval set."""
    eval_dir = Path(eval_dir)
    mask_dir = Path(mask_dir)
    refined_dir = Path(refined_dir)
    mask_dir.mkdir(parents=True, exist_ok=True)
    refined_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(eval_dir / "manifest.json")
    samples = {entry["id"]: entry for entry in manifest["samples"]}
    sample_rate = manifest["sample_rate"]
    store = AnnotationStore(db_path)

    model: HitlTseModel | None = None
    if checkpoint_path:
        model, _ = load_checkpoint(checkpoint_path)

    app = FastAPI(title="tse-refine annotation service")
    app.state.store = store

    def sample_or_404(sample_id) -> dict:
        entry = samples.get(sample_id)
        if entry is None:
            raise HTTPException(404, f"unknown sample {sample_id}")
        return entry

    def audio_path(sample_id, name) -> Path:
        entry = sample_or_404(sample_id)
        filename = entry["files"].get(name)
        if filename is None:
            raise HTTPException(404, f"sample {sample_id} has no {name} audio")
        return eval_dir / sample_id / filename

    def tse_cache_path(sample_id) -> Path:
        return refined_dir / f"{sample_id}__tse.wav"

    def get_tse_output(sample_id):
        """Run (and cache) the extractor for a sample; returns (y_tse, emb, tse_mask)."""
        if model is None:
            raise HTTPException(503, "model not loaded")
        entry = sample_or_404(sample_id)
        mixture = read_wav(eval_dir / sample_id / entry["files"]["mixture"])
        enrollment = read_wav(eval_dir / sample_id / entry["files"]["enrollment"])
        emb = speaker_encode(model, enrollment)
        y_tse, tse_mask, _ = tse_forward(model, mixture, emb)
        path = tse_cache_path(sample_id)
        if not path.exists():
            write_wav(path, y_tse)
        return mixture, read_wav(path), emb, tse_mask

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        if req.sample_ids is not None:
            sample_ids = req.sample_ids
            unknown = [s for s in sample_ids if s not in samples]
            if unknown:
                raise HTTPException(422, f"unknown sample ids: {unknown}")
        else:
            count = req.sample_count or len(samples)
            sample_ids = sorted(samples)[:count]
        session_id = hashlib.sha1(
            f"{req.annotator_id}:{time.time_ns()}".encode()).hexdigest()[:16]
        store.create_session(session_id, req.annotator_id, sample_ids,
                             req.familiarization_count)
        return {"session_id": session_id, "sample_count": len(sample_ids),
                "familiarization_count": req.familiarization_count}

    @app.get("/sessions/{session_id}/next")
    def next_sample(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        statuses = store.statuses(session_id)
        for i, sample_id in enumerate(session["sample_ids"]):
            if statuses.get(sample_id) != "rated":
                entry = samples[sample_id]
                duration = manifest["duration_s"]
                return {
                    "done": False,
                    "sample_id": sample_id,
                    "index": i,
                    "total": len(session["sample_ids"]),
                    "familiarization": i < session["familiarization_count"],
                    "duration_s": duration,
                    "sample_rate": sample_rate,
                    "status": statuses.get(sample_id, "pending"),
                    "audio": {
                        "mixture": f"/samples/{sample_id}/audio/mixture",
                        "enrollment": f"/samples/{sample_id}/audio/enrollment",
                        "tse_output": f"/samples/{sample_id}/audio/tse_output",
                    },
                }
        return {"done": True, "total": len(session["sample_ids"])}

    @app.get("/samples/{sample_id}/audio/{name}")
    def serve_audio(sample_id: str, name: str):
        if name == "tse_output":
            get_tse_output(sample_id)
            return FileResponse(tse_cache_path(sample_id), media_type="audio/wav")
        if name.startswith("refined/"):
            raise HTTPException(404, "use the refine endpoint response URL")
        path = audio_path(sample_id, name)
        if not path.exists():
            raise HTTPException(404, f"audio file missing: {path.name}")
        return FileResponse(path, media_type="audio/wav")

    @app.get("/samples/{sample_id}/refined/{mask_hash}")
    def serve_refined(sample_id: str, mask_hash: str):
        path = refined_dir / f"{sample_id}__{mask_hash}.wav"
        if not path.exists():
            raise HTTPException(404, "refined audio not found; run refine first")
        return FileResponse(path, media_type="audio/wav")

    @app.post("/samples/{sample_id}/annotation")
    def submit_annotation(sample_id: str, req: AnnotationRequest):
        sample_or_404(sample_id)
        session = store.get_session(req.session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {req.session_id}")
        duration = manifest["duration_s"]
        try:
            regions = normalize_regions(req.regions, duration)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        total_len = int(round(duration * sample_rate))
        mask = regions_to_sample_mask(regions, total_len, sample_rate)
        mask_path = mask_dir / f"{sample_id}.json"
        save_mask(mask_path, mask)
        store.save_annotation(req.session_id, sample_id, session["annotator_id"],
                              regions)
        store.set_status(req.session_id, sample_id, "annotated")
        return {
            "sample_id": sample_id,
            "regions": regions,
            "mask_regions": mask_to_regions(mask),
            "mask_path": str(mask_path),
            "marked_samples": int(mask.values.sum()),
        }

    @app.post("/samples/{sample_id}/refine")
    def refine(sample_id: str, req: RefineRequest):
        annotation = store.get_annotation(req.session_id, sample_id)
        if annotation is None:
            raise HTTPException(409, "no annotation submitted for this sample")
        duration = manifest["duration_s"]
        total_len = int(round(duration * sample_rate))
        mask = regions_to_sample_mask(annotation["regions"], total_len, sample_rate)
        mask_hash = hashlib.sha1(mask.values.tobytes()).hexdigest()[:12]
        out_path = refined_dir / f"{sample_id}__{mask_hash}.wav"
        cached = out_path.exists()
        if not cached:
            mixture, y_tse, emb, tse_mask = get_tse_output(sample_id)
            if not mask.any():
                # degenerate splice: output is the extractor output bit-for-bit
                out_path.write_bytes(tse_cache_path(sample_id).read_bytes())
            else:
                state = adapt_state(model, tse_mask)
                y_refine = refine_forward(model, mixture, emb, state, mask)
                write_wav(out_path, compose_output(y_tse, y_refine, mask))
        store.set_status(req.session_id, sample_id, "refined")
        return {"sample_id": sample_id, "cached": cached,
                "audio_url": f"/samples/{sample_id}/refined/{mask_hash}"}

    @app.post("/samples/{sample_id}/rating")
    def rate(sample_id: str, req: RatingRequest):
        sample_or_404(sample_id)
        if store.get_session(req.session_id) is None:
            raise HTTPException(404, f"unknown session {req.session_id}")
        if not 1 <= req.mos <= 5:
            raise HTTPException(422, f"mos must be in 1..5, got {req.mos}")
        store.save_rating(req.session_id, sample_id, req.config, req.mos)
        store.set_status(req.session_id, sample_id, "rated")
        return {"sample_id": sample_id, "config": req.config, "mos": req.mos}

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        fam = session["familiarization_count"]
        analysis_ids = session["sample_ids"][fam:]
        ratings = [r for r in store.ratings(session_id)
                   if r["sample_id"] in analysis_ids]
        rows = []
        for sample_id in analysis_ids:
            annotation = store.get_annotation(session_id, sample_id)
            sample_ratings = {r["config"]: r["mos"] for r in ratings
                              if r["sample_id"] == sample_id}
            rows.append({
                "sample_id": sample_id,
                "annotator_id": session["annotator_id"],
                "regions": annotation["regions"] if annotation else None,
                "ratings": sample_ratings,
            })
        mos_by_config: dict[str, list[int]] = {}
        for r in ratings:
            mos_by_config.setdefault(r["config"], []).append(r["mos"])
        return {
            "session_id": session_id,
            "familiarization_count": fam,
            "rows": rows,
            "mos_mean": {cfg: float(np.mean(v)) for cfg, v in mos_by_config.items()},
        }

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
