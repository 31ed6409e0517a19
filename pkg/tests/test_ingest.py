from __future__ import annotations

from pathlib import Path

import pytest
from PIL import Image
from reportlab.lib import pdfencrypt
from reportlab.lib.pagesizes import letter
from reportlab.pdfgen import canvas as rl_canvas

from quadforge.ingest import (
    ImagePdfRasterBackend,
    IngestError,
    MockRasterBackend,
    MockTextBackend,
    PageIndex,
    PdfTextLayerBackend,
    ValidationError,
    enumerate_pages,
    extract_text,
    register_source,
)
from quadforge.synthcorpus import SynthPage, build_scanned_pdf
from quadforge.workspace import read_jsonl


@pytest.fixture
def pdf3(tmp_path) -> Path:
    pages = [
        SynthPage(
            paragraphs=[f"Paragraph one of page {i} with enough text to parse.",
                        f"Paragraph two of page {i} mentioning probe settings."],
            figures=[(100, 200, 400, 500)] if i == 0 else [],
            seed=i,
        )
        for i in range(3)
    ]
    return build_scanned_pdf(tmp_path / "three.pdf", pages)


def test_register_is_idempotent(ws, pdf3):
    a = register_source(ws, pdf3, "book")
    b = register_source(ws, pdf3, "book")
    assert a.doc_id == b.doc_id
    assert len(list(read_jsonl(ws.sources_index))) == 1


def test_register_empty_file_rejected(ws, tmp_path):
    empty = tmp_path / "empty.pdf"
    empty.touch()
    with pytest.raises(ValidationError, match="empty source"):
        register_source(ws, empty, "book")


def test_one_byte_difference_changes_doc_id(ws, tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    a.write_bytes(b"quadruplet corpus v1")
    b.write_bytes(b"quadruplet corpus v2")
    doc_a = register_source(ws, a, "public_dataset")
    doc_b = register_source(ws, b, "public_dataset")
    assert doc_a.doc_id != doc_b.doc_id


def test_unknown_kind_rejected(ws, pdf3):
    with pytest.raises(ValidationError, match="kind"):
        register_source(ws, pdf3, "magazine")


def test_pages_dense_from_zero(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    assert [p.page_index for p in pages] == [0, 1, 2]


def test_dpi_144_on_us_letter(ws, pdf3):
    # 8.5in x 11in at 144 dpi
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 144, ImagePdfRasterBackend())
    assert (pages[0].width_px, pages[0].height_px) == (1224, 1584)


def test_raster_files_match_recorded_dimensions(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    for page in enumerate_pages(ws, doc, 96, ImagePdfRasterBackend()):
        path = ws.resolve(page.image_ref)
        assert path.exists()
        with Image.open(path) as img:
            assert img.size == (page.width_px, page.height_px)


def test_encrypted_pdf_persists_zero_pages(ws, tmp_path):
    enc = pdfencrypt.StandardEncryption("ownerpw", canPrint=0)
    path = tmp_path / "locked.pdf"
    c = rl_canvas.Canvas(str(path), pagesize=letter, encrypt=enc)
    c.drawString(100, 700, "secret")
    c.showPage()
    c.save()
    doc = register_source(ws, path, "book")
    with pytest.raises(IngestError):
        enumerate_pages(ws, doc, 144, ImagePdfRasterBackend())
    assert not ws.pages_index.exists()


def test_non_pdf_raises_format_error(ws, tmp_path):
    bogus = tmp_path / "bogus.pdf"
    bogus.write_bytes(b"plain text pretending")
    doc = register_source(ws, bogus, "book")
    with pytest.raises(IngestError):
        enumerate_pages(ws, doc, 144, ImagePdfRasterBackend())


def test_formatted_kinds_are_not_rasterized(ws, tmp_path):
    bank = tmp_path / "bank.csv"
    bank.write_text("q,a\nx,y\n", encoding="utf-8")
    doc = register_source(ws, bank, "question_bank")
    with pytest.raises(ValidationError, match="formatted data"):
        enumerate_pages(ws, doc, 144, ImagePdfRasterBackend())


def test_dpi_out_of_range_rejected(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    with pytest.raises(ValidationError, match="dpi"):
        enumerate_pages(ws, doc, 60, ImagePdfRasterBackend())


def test_mid_document_render_failure_persists_nothing(ws, tmp_path):
    src = tmp_path / "src.pdf"
    src.write_bytes(b"%PDF-1.4 fake but registered")
    doc = register_source(ws, src, "book")
    backend = MockRasterBackend(pages=[(100, 100), (100, 100), (100, 100)], fail_on={1})
    with pytest.raises(IngestError, match="page 1"):
        enumerate_pages(ws, doc, 144, backend)
    assert not ws.pages_index.exists()
    assert not any((ws.pages_dir / doc.doc_id).glob("*.png")) or not (
        ws.pages_dir / doc.doc_id
    ).exists()


def test_text_layer_extraction(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    updated = extract_text(ws, pages[1], PdfTextLayerBackend(), doc)
    assert "Paragraph one of page 1" in updated.text
    assert "Paragraph two of page 1" in updated.text
    assert updated.text_backend == "pdf_text_layer"


def test_mock_backend_passthrough(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    backend = MockTextBackend(script="肝脏超声")
    updated = extract_text(ws, pages[0], backend, doc)
    assert updated.text == "肝脏超声"


def test_blank_page_yields_empty_text(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    updated = extract_text(ws, pages[0], MockTextBackend(script=""), doc)
    assert updated.text == ""
    assert "text_extraction_failed" not in updated.flags


def test_transient_failures_then_success(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    backend = MockTextBackend(script="recovered text", fail_times=2)
    updated = extract_text(ws, pages[0], backend, doc, max_attempts=3)
    assert updated.text == "recovered text"
    assert backend.attempts[(doc.doc_id, 0)] == 3
    assert "text_extraction_failed" not in updated.flags


def test_extraction_failure_is_non_fatal(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    backend = MockTextBackend(script="never", fail_times=99)
    updated = extract_text(ws, pages[0], backend, doc, max_attempts=3)
    assert updated.text == ""
    assert "text_extraction_failed" in updated.flags


def test_reingest_unchanged_corpus_is_byte_identical(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    first = ws.pages_index.read_bytes()
    first_raster = ws.page_image(doc.doc_id, 0).read_bytes()
    enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    assert ws.pages_index.read_bytes() == first
    assert ws.page_image(doc.doc_id, 0).read_bytes() == first_raster


def test_page_index_roundtrip(ws, pdf3):
    doc = register_source(ws, pdf3, "book")
    pages = enumerate_pages(ws, doc, 96, ImagePdfRasterBackend())
    index = PageIndex(ws)
    assert len(index.for_doc(doc.doc_id)) == len(pages)
