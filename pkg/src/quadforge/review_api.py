"""HTTP API for the human screening step.

Serves the pending-record queue with page/figure context, accepts verdicts,
reports stats, and exposes workspace images plus the static review UI. The
curate module owns all state; this is a thin FastAPI layer over
:class:`quadforge.curate.CurationStore`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .curate import CurationStore, UnknownRecordError
from .grounding import FigureIndex
from .ingest import PageIndex
from .records import QaRecord, RecordError, ReviewVerdict
from .workspace import Workspace


def _context_urls(
    record: QaRecord, pages: PageIndex, figures: FigureIndex
) -> tuple[Optional[str], list[str]]:
    page_url = None
    doc_id = record.provenance.get("doc_id")
    page_index = record.provenance.get("page_index")
    if doc_id is not None and page_index is not None:
        if (doc_id, page_index) in pages.pages:
            page_url = f"/media/{pages.pages[(doc_id, page_index)].image_ref}"
    figure_urls = []
    for fid in record.image_refs:
        fig = figures.get(fid)
        if fig is not None:
            figure_urls.append(f"/media/{fig.image_ref}")
    return page_url, figure_urls


def create_review_app(
    ws: Workspace,
    store: Optional[CurationStore] = None,
    ui_dir: Optional[Path] = None,
) -> FastAPI:
    app = FastAPI(title="quadforge review")
    store = store or CurationStore(ws)
    pages = PageIndex(ws)
    figures = FigureIndex(ws)

    @app.get("/api/queue")
    def queue(
        status: str = Query("pending"),
        cursor: Optional[str] = Query(None),
        kind: Optional[str] = Query(None),
        modality: Optional[str] = Query(None),
        min_score: Optional[int] = Query(None, ge=1, le=5),
        max_score: Optional[int] = Query(None, ge=1, le=5),
        limit: int = Query(20, ge=1, le=200),
    ):
        if status != "pending":
            raise HTTPException(status_code=400, detail="only status=pending is queryable")
        batch, next_cursor = store.pending(
            kind=kind, modality=modality, min_score=min_score, max_score=max_score,
            cursor=cursor, limit=limit,
        )
        records = []
        for rec in batch:
            page_url, figure_urls = _context_urls(rec, pages, figures)
            records.append(
                {
                    "record": rec.to_dict(),
                    "page_image_url": page_url,
                    "figure_urls": figure_urls,
                }
            )
        return {"records": records, "next_cursor": next_cursor}

    @app.post("/api/verdict")
    async def verdict(request: Request):
        payload = await request.json()
        try:
            v = ReviewVerdict(
                record_id=payload.get("record_id", ""),
                verdict=payload.get("verdict", ""),
                reviewer_id=payload.get("reviewer_id")
                or request.headers.get("x-reviewer-id", "anonymous"),
                timestamp=float(payload.get("timestamp", 0.0)),
                edited_fields=payload.get("edited_fields"),
            )
        except RecordError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        try:
            rec = store.submit_verdict(v)
        except UnknownRecordError:
            raise HTTPException(status_code=404, detail=f"unknown record {v.record_id}")
        except RecordError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        return {"record": rec.to_dict()}

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/media/{rel_path:path}")
    def media(rel_path: str):
        target = (ws.root / rel_path).resolve()
        if not str(target).startswith(str(ws.root.resolve())):
            raise HTTPException(status_code=403, detail="path escapes workspace")
        if not target.is_file():
            raise HTTPException(status_code=404, detail="not found")
        return FileResponse(target)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
