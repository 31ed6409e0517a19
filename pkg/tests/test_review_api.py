from __future__ import annotations

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from quadforge.curate import CurationStore
from quadforge.records import BoundingBox, FigureRecord, PageRecord, make_record
from quadforge.grounding import FigureIndex
from quadforge.ingest import PageIndex
from quadforge.review_api import create_review_app

PROV = {"doc_id": "d", "page_index": 0, "source_kind": "book", "eval_pool": False}


@pytest.fixture
def client(ws):
    page_path = ws.page_image("d", 0)
    page_path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (100, 100)).save(page_path, "PNG")
    pages = PageIndex(ws)
    pages.put(
        PageRecord(doc_id="d", page_index=0, width_px=100, height_px=100,
                   image_ref=ws.relative(page_path))
    )
    pages.save()

    fig_path = ws.figure_image("figA")
    fig_path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (40, 40)).save(fig_path, "PNG")
    figures = FigureIndex(ws)
    figures.put(
        FigureRecord(figure_id="figA", doc_id="d", page_index=0,
                     bbox=BoundingBox(0, 0, 40, 40), image_ref=ws.relative(fig_path))
    )
    figures.save()

    records = []
    for i in range(5):
        rec = make_record(
            "image_text" if i == 0 else "text",
            "diagnostic" if i == 0 else "dialogue",
            f"Question {i}?",
            f"Answer {i}",
            thinking_trace="trace" if i == 0 else None,
            image_refs=["figA"] if i == 0 else [],
            provenance=dict(PROV),
        )
        rec.status = "cleaned"
        records.append(rec)
    store = CurationStore(ws)
    store.replace_all(records)
    app = create_review_app(ws, store=store)
    return TestClient(app), records


def test_queue_returns_pending_with_context(client):
    http, records = client
    resp = http.get("/api/queue?status=pending&limit=50")
    assert resp.status_code == 200
    data = resp.json()
    assert len(data["records"]) == 5
    assert data["next_cursor"] is None
    image_rec = next(
        r for r in data["records"] if r["record"]["modality"] == "image_text"
    )
    assert image_rec["page_image_url"] == "/media/pages/d/0.png"
    assert image_rec["figure_urls"] == ["/media/figures/figA.png"]


def test_queue_pagination_cursor(client):
    http, _ = client
    first = http.get("/api/queue?limit=2").json()
    assert len(first["records"]) == 2
    assert first["next_cursor"]
    second = http.get(f"/api/queue?limit=2&cursor={first['next_cursor']}").json()
    ids1 = {r["record"]["record_id"] for r in first["records"]}
    ids2 = {r["record"]["record_id"] for r in second["records"]}
    assert not ids1 & ids2


def test_queue_kind_filter(client):
    http, _ = client
    data = http.get("/api/queue?kind=diagnostic&limit=50").json()
    assert len(data["records"]) == 1


def test_queue_score_range_filter(client):
    http, records = client
    records[1].quality["groundedness_score"] = 2
    records[2].quality["groundedness_score"] = 5
    data = http.get("/api/queue?min_score=1&max_score=3&limit=50").json()
    ids = [r["record"]["record_id"] for r in data["records"]]
    assert ids == [records[1].record_id]
    # unscored records stay visible without a range
    assert len(http.get("/api/queue?limit=50").json()["records"]) == 5


def test_verdict_accept_updates_status(client):
    http, records = client
    rid = records[1].record_id
    resp = http.post(
        "/api/verdict",
        json={"record_id": rid, "verdict": "accept", "reviewer_id": "dr-a"},
    )
    assert resp.status_code == 200
    assert resp.json()["record"]["status"] == "accepted"
    stats = http.get("/api/stats").json()
    assert stats["accepted"] == 1
    assert stats["pending"] == 4


def test_verdict_unknown_record_404(client):
    http, _ = client
    resp = http.post(
        "/api/verdict", json={"record_id": "missing", "verdict": "accept"}
    )
    assert resp.status_code == 404


def test_edit_validation_surfaces_422(client):
    http, records = client
    rid = records[1].record_id
    resp = http.post(
        "/api/verdict",
        json={"record_id": rid, "verdict": "edit", "edited_fields": {"question": "   "}},
    )
    assert resp.status_code == 422
    # state not corrupted
    stats = http.get("/api/stats").json()
    assert stats["pending"] == 5


def test_edit_applies_and_counts_as_accepted_for_assembly(client):
    http, records = client
    rid = records[2].record_id
    resp = http.post(
        "/api/verdict",
        json={
            "record_id": rid,
            "verdict": "edit",
            "edited_fields": {"answer": "Edited answer"},
        },
    )
    assert resp.status_code == 200
    body = resp.json()["record"]
    assert body["status"] == "edited"
    assert body["answer"] == "Edited answer"


def test_media_serves_images_and_guards_traversal(client):
    http, _ = client
    ok = http.get("/media/pages/d/0.png")
    assert ok.status_code == 200
    assert ok.headers["content-type"] == "image/png"
    missing = http.get("/media/pages/d/99.png")
    assert missing.status_code == 404
    escape = http.get("/media/../../etc/passwd")
    assert escape.status_code in (403, 404)


def test_static_ui_mounted_when_built(ws, tmp_path):
    from pathlib import Path

    ui_dir = Path(__file__).parent.parent / "frontend" / "public"
    if not (ui_dir / "index.html").exists():
        pytest.skip("review UI not built")
    app = create_review_app(ws, store=CurationStore(ws), ui_dir=ui_dir)
    http = TestClient(app)
    index = http.get("/")
    assert index.status_code == 200
    assert "Record review" in index.text
    if (ui_dir / "dist" / "app.js").exists():
        assert http.get("/dist/app.js").status_code == 200
    # API routes still win over the static mount
    assert http.get("/api/stats").status_code == 200


def test_full_review_session_empties_queue(client):
    http, records = client
    verdicts = ["accept", "reject", "edit", "accept", "reject"]
    for rec, verdict in zip(records, verdicts):
        payload = {"record_id": rec.record_id, "verdict": verdict}
        if verdict == "edit":
            payload["edited_fields"] = {"answer": "polished"}
        assert http.post("/api/verdict", json=payload).status_code == 200
    stats = http.get("/api/stats").json()
    assert stats["pending"] == 0
    assert stats["accepted"] == 2
    assert stats["rejected"] == 2
    assert stats["edited"] == 1
