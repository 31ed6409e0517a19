"""Source registration, page rasterization, and text extraction.

Rendering and OCR are backend contracts so corpora can be processed with
whatever engine is installed while tests drive everything through scripted
mocks. Shipped raster backends: pymupdf (when importable) and the built-in
scanned-PDF reader. Shipped text backends: the PDF text-layer reader (the
shape OCR'd scans have) and a scripted mock.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Protocol

from PIL import Image

from . import pdfio
from .records import PageRecord, SourceDocument, SOURCE_KINDS
from .workspace import Workspace, hash_file, read_jsonl, write_jsonl_atomic

DEFAULT_DPI = 144
DPI_RANGE = (72, 300)


class IngestError(Exception):
    pass


class ValidationError(IngestError):
    pass


class TextExtractionError(IngestError):
    pass


# --- backend contracts ---


class RasterBackend(Protocol):
    name: str

    def page_count(self, path: Path) -> int: ...

    def render_page(self, path: Path, index: int, dpi: int) -> Image.Image: ...


class TextBackend(Protocol):
    name: str

    def extract(self, source_path: Path, page: PageRecord, raster_path: Path) -> str: ...


class ImagePdfRasterBackend:
    """Renders scanned-style PDFs via the built-in reader."""

    name = "image_pdf"

    def page_count(self, path: Path) -> int:
        return pdfio.ImagePdf.open(path).page_count

    def render_page(self, path: Path, index: int, dpi: int) -> Image.Image:
        return pdfio.ImagePdf.open(path).render(index, dpi)


class PyMuPdfRasterBackend:
    """Full PDF renderer, used when pymupdf is installed."""

    name = "pymupdf"

    def __init__(self):
        import fitz  # noqa: F401  (optional dependency)

        self._fitz = fitz

    def page_count(self, path: Path) -> int:
        with self._fitz.open(path) as doc:
            if doc.needs_pass:
                raise pdfio.PdfEncryptedError(f"{path}: encrypted PDF")
            return doc.page_count

    def render_page(self, path: Path, index: int, dpi: int) -> Image.Image:
        with self._fitz.open(path) as doc:
            pix = doc[index].get_pixmap(dpi=dpi, alpha=False)
            return Image.frombytes("RGB", (pix.width, pix.height), pix.samples)


class MockRasterBackend:
    """Scripted pages for tests: a list of PIL images or (w, h) sizes per doc."""

    name = "mock_raster"

    def __init__(self, pages: list, fail_on: set[int] | None = None):
        self.pages = pages
        self.fail_on = fail_on or set()

    def page_count(self, path: Path) -> int:
        return len(self.pages)

    def render_page(self, path: Path, index: int, dpi: int) -> Image.Image:
        if index in self.fail_on:
            raise pdfio.PdfFormatError(f"scripted failure on page {index}")
        spec = self.pages[index]
        if isinstance(spec, Image.Image):
            return spec
        w, h = spec
        return Image.new("RGB", (w, h), (255, 255, 255))


def default_raster_backend() -> RasterBackend:
    try:
        return PyMuPdfRasterBackend()
    except ImportError:
        return ImagePdfRasterBackend()


class PdfTextLayerBackend:
    """Reads the embedded text layer (the output shape of OCR'd scans)."""

    name = "pdf_text_layer"

    def extract(self, source_path: Path, page: PageRecord, raster_path: Path) -> str:
        return pdfio.ImagePdf.open(source_path).text(page.page_index)


class MockTextBackend:
    """Scripted extractor: constant text, per-page mapping, or a callable.

    ``fail_times`` makes the first N calls per page raise, for retry tests.
    """

    name = "mock_text"

    def __init__(
        self,
        script: str | dict | Callable[[PageRecord], str] = "",
        fail_times: int = 0,
    ):
        self.script = script
        self.fail_times = fail_times
        self.attempts: dict[tuple[str, int], int] = {}

    def extract(self, source_path: Path, page: PageRecord, raster_path: Path) -> str:
        key = (page.doc_id, page.page_index)
        self.attempts[key] = self.attempts.get(key, 0) + 1
        if self.attempts[key] <= self.fail_times:
            raise TextExtractionError(f"scripted transient failure #{self.attempts[key]}")
        if callable(self.script):
            return self.script(page)
        if isinstance(self.script, dict):
            return self.script.get(page.page_index, self.script.get(key, ""))
        return self.script


# --- operations ---


def register_source(
    ws: Workspace,
    path: str | Path,
    kind: str,
    language_hint: str = "und",
    *,
    license_note: str = "",
    eval_pool: bool = False,
) -> SourceDocument:
    """Register a source file; doc_id is its content hash, so re-registering
    identical bytes is a no-op returning the identical document."""
    if kind not in SOURCE_KINDS:
        raise ValidationError(f"unsupported source kind: {kind!r}")
    path = Path(path)
    try:
        if path.stat().st_size == 0:
            raise ValidationError(f"{path}: empty source")
        doc_id = hash_file(path)[:16]
    except OSError as exc:
        raise IngestError(f"{path}: unreadable source ({exc})") from exc
    doc = SourceDocument(
        doc_id=doc_id,
        path=str(path),
        kind=kind,
        language_hint=language_hint,
        license_note=license_note,
        eval_pool=eval_pool,
    )
    existing = load_sources(ws)
    if doc_id not in existing:
        existing[doc_id] = doc
        write_jsonl_atomic(ws.sources_index, (d.to_dict() for d in existing.values()))
    return existing[doc_id]


def load_sources(ws: Workspace) -> dict[str, SourceDocument]:
    if not ws.sources_index.exists():
        return {}
    return {
        d["doc_id"]: SourceDocument.from_dict(d) for d in read_jsonl(ws.sources_index)
    }


class PageIndex:
    """In-memory view over pages.jsonl with atomic rewrite on save."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.pages: dict[tuple[str, int], PageRecord] = {}
        if ws.pages_index.exists():
            for d in read_jsonl(ws.pages_index):
                rec = PageRecord.from_dict(d)
                self.pages[(rec.doc_id, rec.page_index)] = rec

    def put(self, rec: PageRecord) -> None:
        self.pages[(rec.doc_id, rec.page_index)] = rec

    def for_doc(self, doc_id: str) -> list[PageRecord]:
        return [p for (d, _), p in sorted(self.pages.items()) if d == doc_id]

    def all(self) -> list[PageRecord]:
        return [p for _, p in sorted(self.pages.items())]

    def save(self) -> None:
        write_jsonl_atomic(
            self.ws.pages_index, (p.to_dict() for p in self.all())
        )


def enumerate_pages(
    ws: Workspace,
    doc: SourceDocument,
    dpi: int = DEFAULT_DPI,
    backend: RasterBackend | None = None,
    index: PageIndex | None = None,
) -> list[PageRecord]:
    """Rasterize every page of a book/guideline/paper source.

    All pages must render before anything is committed to the page index, so
    a corrupt or encrypted document persists zero PageRecords.
    """
    if not doc.requires_rasterization:
        raise ValidationError(
            f"{doc.kind} sources are formatted data and are not rasterized"
        )
    if not DPI_RANGE[0] <= dpi <= DPI_RANGE[1]:
        raise ValidationError(f"dpi {dpi} outside {DPI_RANGE}")
    backend = backend or default_raster_backend()
    path = Path(doc.path)

    try:
        n_pages = backend.page_count(path)
    except pdfio.PdfError as exc:
        raise IngestError(f"{doc.doc_id}: {exc}") from exc

    records: list[PageRecord] = []
    written: list[Path] = []
    try:
        for i in range(n_pages):
            try:
                img = backend.render_page(path, i, dpi)
            except pdfio.PdfError as exc:
                raise IngestError(f"{doc.doc_id}: page {i} failed to render ({exc})") from exc
            if img.mode != "RGB":
                img = img.convert("RGB")
            out = ws.page_image(doc.doc_id, i)
            out.parent.mkdir(parents=True, exist_ok=True)
            img.save(out, format="PNG", optimize=False)
            written.append(out)
            records.append(
                PageRecord(
                    doc_id=doc.doc_id,
                    page_index=i,
                    width_px=img.width,
                    height_px=img.height,
                    image_ref=ws.relative(out),
                )
            )
    except IngestError:
        for p in written:
            p.unlink(missing_ok=True)
        raise

    index = index or PageIndex(ws)
    for rec in records:
        index.put(rec)
    index.save()
    return records


def extract_text(
    ws: Workspace,
    page: PageRecord,
    backend: TextBackend,
    source: SourceDocument,
    *,
    max_attempts: int = 3,
    index: PageIndex | None = None,
) -> PageRecord:
    """Fill a page's text via the backend, retrying transient failures.

    Extraction failure is non-fatal: the record keeps empty text and gains a
    flag, so one bad page cannot kill a corpus run.
    """
    raster = ws.resolve(page.image_ref)
    if not raster.exists():
        raise IngestError(f"{page.doc_id}/{page.page_index}: raster missing")
    attempts = 0
    text = ""
    failed = False
    while attempts < max_attempts:
        attempts += 1
        try:
            text = backend.extract(Path(source.path), page, raster)
            failed = False
            break
        except Exception:
            failed = True
    flags = [f for f in page.flags if f != "text_extraction_failed"]
    if failed:
        text = ""
        flags.append("text_extraction_failed")
        ws.diagnostic(
            "ingest",
            "text extraction failed",
            doc_id=page.doc_id,
            page_index=page.page_index,
            attempts=attempts,
        )
    updated = PageRecord(
        doc_id=page.doc_id,
        page_index=page.page_index,
        width_px=page.width_px,
        height_px=page.height_px,
        image_ref=page.image_ref,
        text=text,
        text_backend=backend.name,
        flags=flags,
    )
    index = index or PageIndex(ws)
    index.put(updated)
    index.save()
    return updated


def ingest_source(
    ws: Workspace,
    path: str | Path,
    kind: str,
    *,
    dpi: int = DEFAULT_DPI,
    language_hint: str = "und",
    eval_pool: bool = False,
    raster_backend: RasterBackend | None = None,
    text_backend: TextBackend | None = None,
) -> tuple[SourceDocument, list[PageRecord]]:
    """register + rasterize + extract in one pass (the CLI entry point)."""
    doc = register_source(
        ws, path, kind, language_hint, eval_pool=eval_pool
    )
    if not doc.requires_rasterization:
        return doc, []
    index = PageIndex(ws)
    pages = enumerate_pages(ws, doc, dpi, raster_backend, index=index)
    text_backend = text_backend or PdfTextLayerBackend()
    out = [
        extract_text(ws, p, text_backend, doc, index=index) for p in pages
    ]
    return doc, out
