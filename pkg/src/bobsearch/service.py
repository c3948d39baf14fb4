"""HTTP service exposing search, thumbnails, feedback sessions, and the
feedback log. The service is a thin adapter: every search response is the
JSON rendering of the corresponding in-process call, so the CLI and tests
can bypass HTTP entirely.
"""

from __future__ import annotations

import json
import tempfile
import threading
import uuid
import zipfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from scipy import stats

from .barcode import BarcodeError
from .index_store import ArchiveIndex, index_slide, iter_slide_dirs
from .search import (
    HORIZONTAL,
    EmptyCandidateError,
    PatchResult,
    ScanQuery,
    SearchResult,
    patch_knn,
    scan_knn,
)
from .slide_io import SlideFormatError, open_slide

__all__ = [
    "RATINGS",
    "RATER_ROLES",
    "FeedbackRecord",
    "FeedbackLog",
    "IndexHolder",
    "scan_result_payload",
    "patch_result_payload",
    "feedback_summary",
    "create_app",
]

RATINGS = ("VeryBad", "Bad", "Neutral", "Good", "Great")
RATER_ROLES = ("expert", "non-expert")

RESULTS_PER_QUESTION = 3
DEFAULT_SESSION_QUESTIONS = 48


@dataclass(frozen=True)
class FeedbackRecord:
    """One rating of one presented result, joined to its true rank."""

    session_id: str
    query_ref: str
    result_ref: str
    result_rank: int  # true rank, 1-based
    rating: str
    rater_role: str
    timestamp: str
    distance: int

    def __post_init__(self):
        if self.rating not in RATINGS:
            raise ValueError(f"invalid rating {self.rating!r}")
        if self.rater_role not in RATER_ROLES:
            raise ValueError(f"invalid rater role {self.rater_role!r}")
        if self.result_rank < 1:
            raise ValueError("result_rank must be >= 1")


class FeedbackLog:
    """Durable append-only JSONL log; replay reproduces the analyzer inputs."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: FeedbackRecord) -> None:
        line = json.dumps(asdict(record), sort_keys=True)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()

    def replay(self) -> list[FeedbackRecord]:
        if not self.path.exists():
            return []
        records = []
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(FeedbackRecord(**json.loads(line)))
        return records


class IndexHolder:
    """Atomic generation swap: readers always see a complete index."""

    def __init__(self, index: ArchiveIndex):
        self._index = index

    @property
    def current(self) -> ArchiveIndex:
        return self._index

    def swap(self, new_index: ArchiveIndex) -> None:
        self._index = new_index


def scan_result_payload(result: SearchResult, index: ArchiveIndex) -> dict:
    return {
        "query_slide_id": result.query_slide_id,
        "mode": result.mode,
        "site": result.site,
        "results": [
            {
                "slide_id": m.slide_id,
                "distance": m.distance,
                "min_distances": [int(d) for d in m.minima],
                "primary_site": index.entries[m.slide_id].labels.primary_site,
                "primary_diagnosis": index.entries[m.slide_id].labels.primary_diagnosis,
                "thumbnail": f"/slides/{m.slide_id}/thumbnail",
            }
            for m in result.ranked
        ],
    }


def patch_result_payload(result: PatchResult, index: ArchiveIndex) -> dict:
    return {
        "results": [
            {
                "slide_id": m.slide_id,
                "grid_x": m.patch.grid_x,
                "grid_y": m.patch.grid_y,
                "distance": m.distance,
                "primary_site": index.entries[m.slide_id].labels.primary_site,
                "primary_diagnosis": index.entries[m.slide_id].labels.primary_diagnosis,
                "thumbnail": f"/slides/{m.slide_id}/thumbnail",
            }
            for m in result.ranked
        ]
    }


def feedback_summary(records: list[FeedbackRecord]) -> dict:
    """Aggregates used by the analyzer; a pure function of the log."""
    per_rank: dict[str, dict[str, int]] = {}
    by_rating_distances: dict[str, list[int]] = {r: [] for r in RATINGS}
    for rec in records:
        rank_counts = per_rank.setdefault(str(rec.result_rank), {r: 0 for r in RATINGS})
        rank_counts[rec.rating] += 1
        by_rating_distances[rec.rating].append(rec.distance)

    correlation = None
    if len(records) >= 3:
        ordinals = [RATINGS.index(r.rating) for r in records]
        distances = [r.distance for r in records]
        if len(set(ordinals)) > 1 and len(set(distances)) > 1:
            rho = stats.spearmanr(ordinals, distances).statistic
            if np.isfinite(rho):
                correlation = float(rho)

    return {
        "n_records": len(records),
        "records": [asdict(r) for r in records],
        "per_rank_rating_counts": per_rank,
        "median_distance_by_rating": {
            rating: (float(np.median(ds)) if ds else None)
            for rating, ds in by_rating_distances.items()
        },
        "rating_distance_spearman": correlation,
    }


@dataclass
class _Question:
    query_slide_id: str
    result_ids: list[str]  # true-rank order
    distances: list[int]
    display_order: list[int]  # display position -> true index
    answered_ranks: set[int] = field(default_factory=set)

    @property
    def complete(self) -> bool:
        return len(self.answered_ranks) >= len(self.result_ids)


@dataclass
class _Session:
    session_id: str
    questions: list[_Question]

    def next_unanswered(self) -> int | None:
        for i, q in enumerate(self.questions):
            if not q.complete:
                return i
        return None


def _build_session(index: ArchiveIndex, n_questions: int, seed: int) -> _Session:
    ids = index.slide_ids()
    if len(ids) < 2:
        raise EmptyCandidateError("need at least 2 indexed slides for a session")
    rng = np.random.default_rng(seed)
    order: list[str] = []
    while len(order) < n_questions:
        order.extend(ids[i] for i in rng.permutation(len(ids)))
    order = order[:n_questions]

    questions = []
    for sid in order:
        result = scan_knn(
            ScanQuery(query=index.entries[sid], mode=HORIZONTAL, k=RESULTS_PER_QUESTION),
            index,
        )
        display = list(rng.permutation(len(result.ranked)))
        questions.append(
            _Question(
                query_slide_id=sid,
                result_ids=[m.slide_id for m in result.ranked],
                distances=[m.distance for m in result.ranked],
                display_order=[int(i) for i in display],
            )
        )
    return _Session(session_id=uuid.uuid4().hex, questions=questions)


def _question_payload(index: ArchiveIndex, session: _Session, qi: int) -> dict:
    q = session.questions[qi]
    cards = []
    for pos, true_idx in enumerate(q.display_order):
        sid = q.result_ids[true_idx]
        labels = index.entries[sid].labels
        cards.append(
            {
                "position": pos,
                "slide_id": sid,
                "distance": q.distances[true_idx],
                "primary_site": labels.primary_site,
                "primary_diagnosis": labels.primary_diagnosis,
                "thumbnail": f"/slides/{sid}/thumbnail",
            }
        )
    return {
        "done": False,
        "question_index": qi,
        "n_questions": len(session.questions),
        "n_answered": sum(qq.complete for qq in session.questions),
        "query": {
            "slide_id": q.query_slide_id,
            "thumbnail": f"/slides/{q.query_slide_id}/thumbnail",
        },
        "results": cards,
    }


def _slide_dir_map(corpus_dir: Path | None) -> dict[str, Path]:
    if corpus_dir is None:
        return {}
    mapping = {}
    for slide_dir in iter_slide_dirs(corpus_dir):
        try:
            manifest = json.loads((slide_dir / "manifest.json").read_text("utf-8"))
            mapping[manifest["slide_id"]] = slide_dir
        except (OSError, json.JSONDecodeError, KeyError):
            continue
    return mapping


def _thumbnail_file(slide_dir: Path) -> Path:
    manifest = json.loads((slide_dir / "manifest.json").read_text("utf-8"))
    lowest = min(manifest["levels"], key=lambda lv: lv["magnification"])
    return slide_dir / lowest["file"]


def create_app(
    index: ArchiveIndex,
    corpus_dir: str | Path | None = None,
    feedback_path: str | Path = "feedback.jsonl",
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="bunch-of-barcodes search service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    holder = IndexHolder(index)
    corpus = Path(corpus_dir) if corpus_dir is not None else None
    slide_dirs = _slide_dir_map(corpus)
    feedback_log = FeedbackLog(feedback_path)
    sessions: dict[str, _Session] = {}
    sessions_lock = threading.Lock()

    def _error(status: int, detail: str):
        return HTTPException(status_code=status, detail=detail)

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise _error(422, "request body must be valid JSON")
        if not isinstance(body, dict):
            raise _error(422, "request body must be a JSON object")
        return body

    @app.get("/slides")
    def list_slides():
        idx = holder.current
        return [
            {
                "slide_id": sid,
                "primary_site": idx.entries[sid].labels.primary_site,
                "primary_diagnosis": idx.entries[sid].labels.primary_diagnosis,
                "n_barcodes": len(idx.entries[sid].bob),
                "patches": [
                    {"grid_x": ref.grid_x, "grid_y": ref.grid_y}
                    for ref, _ in idx.entries[sid].bob.entries
                ],
                "thumbnail": f"/slides/{sid}/thumbnail",
            }
            for sid in idx.slide_ids()
        ]

    @app.get("/slides/{slide_id}/thumbnail")
    def slide_thumbnail(slide_id: str):
        slide_dir = slide_dirs.get(slide_id)
        if slide_dir is None:
            raise _error(404, f"unknown slide {slide_id!r} (no corpus directory on record)")
        return FileResponse(_thumbnail_file(slide_dir), media_type="image/png")

    def _run_scan(idx: ArchiveIndex, query_source, params: dict) -> JSONResponse:
        mode = params.get("mode", HORIZONTAL)
        site = params.get("site")
        try:
            query = ScanQuery(
                query=query_source,
                mode=mode,
                site=site,
                k=int(params.get("k", 10)),
                mosaic_fraction=float(params.get("fraction", 1.0)),
                seed=int(params.get("seed", 0)),
            )
        except ValueError as exc:
            raise _error(422, str(exc))
        try:
            result = scan_knn(query, idx)
        except EmptyCandidateError as exc:
            raise _error(409, str(exc))
        except BarcodeError as exc:  # e.g. upload indexed with another extractor
            raise _error(422, str(exc))
        return JSONResponse(scan_result_payload(result, idx))

    @app.post("/search/scan")
    async def search_scan(request: Request):
        idx = holder.current
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("slide")
            if upload is None:
                raise _error(422, "multipart search needs a 'slide' zip upload")
            params = {key: form[key] for key in form if key != "slide"}
            with tempfile.TemporaryDirectory(prefix="bob-upload-") as tmp:
                tmp_dir = Path(tmp)
                archive_path = tmp_dir / "upload.zip"
                archive_path.write_bytes(await upload.read())
                slide_root = tmp_dir / "slide"
                try:
                    with zipfile.ZipFile(archive_path) as zf:
                        zf.extractall(slide_root)
                except zipfile.BadZipFile as exc:
                    raise _error(422, f"invalid slide upload: {exc}")
                manifests = list(slide_root.rglob("manifest.json"))
                if len(manifests) != 1:
                    raise _error(422, "upload must contain exactly one slide directory")
                try:
                    slide = open_slide(manifests[0].parent)
                    indexed = index_slide(slide, idx.config)
                except (SlideFormatError, ValueError) as exc:
                    raise _error(422, f"invalid slide: {exc}")
                return _run_scan(idx, indexed.bob, params)

        body = await _json_body(request)
        slide_id = body.get("slide_id")
        if not slide_id:
            raise _error(422, "slide_id is required for JSON search requests")
        if slide_id not in idx.entries:
            raise _error(404, f"unknown slide {slide_id!r}")
        return _run_scan(idx, idx.entries[slide_id], body)

    @app.post("/search/patch")
    async def search_patch(request: Request):
        idx = holder.current
        body = await _json_body(request)
        slide_id = body.get("slide_id")
        if slide_id not in idx.entries:
            raise _error(404, f"unknown slide {slide_id!r}")
        try:
            grid_x = int(body["grid_x"])
            grid_y = int(body["grid_y"])
        except (KeyError, TypeError, ValueError):
            raise _error(422, "grid_x and grid_y are required integers")
        bob = idx.entries[slide_id].bob
        barcode = next(
            (
                bc
                for ref, bc in bob.entries
                if ref.grid_x == grid_x and ref.grid_y == grid_y
            ),
            None,
        )
        if barcode is None:
            raise _error(404, f"patch ({grid_x},{grid_y}) not in the mosaic of {slide_id!r}")
        try:
            result = patch_knn(
                barcode,
                idx,
                k=int(body.get("k", 10)),
                mode=body.get("mode", HORIZONTAL),
                site=body.get("site"),
            )
        except EmptyCandidateError as exc:
            raise _error(409, str(exc))
        except ValueError as exc:
            raise _error(422, str(exc))
        return JSONResponse(patch_result_payload(result, idx))

    @app.post("/sessions")
    async def create_session(request: Request):
        idx = holder.current
        body = {}
        if await request.body():
            body = await _json_body(request)
        n_questions = int(body.get("n_questions", DEFAULT_SESSION_QUESTIONS))
        seed = int(body.get("seed", 0))
        if n_questions < 1:
            raise _error(422, "n_questions must be >= 1")
        try:
            session = _build_session(idx, n_questions, seed)
        except EmptyCandidateError as exc:
            raise _error(409, str(exc))
        with sessions_lock:
            sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "n_questions": len(session.questions),
            "results_per_question": RESULTS_PER_QUESTION,
        }

    @app.get("/sessions/{session_id}/next")
    def session_next(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            raise _error(404, f"unknown session {session_id!r}")
        qi = session.next_unanswered()
        if qi is None:
            return {"done": True, "n_questions": len(session.questions)}
        return _question_payload(holder.current, session, qi)

    @app.post("/feedback")
    async def post_feedback(request: Request):
        body = await _json_body(request)
        session = sessions.get(body.get("session_id", ""))
        if session is None:
            raise _error(404, f"unknown session {body.get('session_id')!r}")
        try:
            question_index = int(body["question_index"])
            position = int(body["position"])
        except (KeyError, TypeError, ValueError):
            raise _error(422, "question_index and position are required integers")
        rating = body.get("rating")
        if rating not in RATINGS:
            raise _error(422, f"invalid rating {rating!r}; expected one of {RATINGS}")
        rater_role = body.get("rater_role", "non-expert")
        if rater_role not in RATER_ROLES:
            raise _error(422, f"invalid rater_role {rater_role!r}")
        if not 0 <= question_index < len(session.questions):
            raise _error(422, f"question_index {question_index} out of range")
        question = session.questions[question_index]
        if not 0 <= position < len(question.display_order):
            raise _error(422, f"position {position} out of range")

        true_index = question.display_order[position]
        rank = true_index + 1
        with sessions_lock:
            if rank in question.answered_ranks:
                raise _error(
                    409,
                    f"question {question_index} rank {rank} already rated in this session",
                )
            question.answered_ranks.add(rank)
        record = FeedbackRecord(
            session_id=session.session_id,
            query_ref=question.query_slide_id,
            result_ref=question.result_ids[true_index],
            result_rank=rank,
            rating=rating,
            rater_role=rater_role,
            timestamp=datetime.now(timezone.utc).isoformat(),
            distance=question.distances[true_index],
        )
        feedback_log.append(record)
        return {"status": "recorded", "result_rank": rank}

    @app.get("/feedback/summary")
    def get_feedback_summary():
        return feedback_summary(feedback_log.replay())

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    app.state.holder = holder
    app.state.feedback_log = feedback_log
    app.state.sessions = sessions
    return app
