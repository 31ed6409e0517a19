"""Minimal reader for image-based ("scanned book") PDFs.

Covers PDFs whose pages each carry one full-page raster image, optionally with
an OCR-style text layer: classic xref tables, direct /Length values, DCTDecode
(JPEG) or FlateDecode (raw RGB/gray) image XObjects, flat page trees. That is
the shape of scanned-document corpora this pipeline ingests, and of the PDFs
its own demo-corpus writer produces. It is deliberately not a general PDF
renderer; richer documents should go through the pymupdf backend instead.
"""

from __future__ import annotations

import base64
import binascii
import io
import re
import zlib
from dataclasses import dataclass
from pathlib import Path

from PIL import Image


class PdfError(Exception):
    pass


class PdfFormatError(PdfError):
    """Not a PDF, or a PDF shape this reader does not support."""


class PdfEncryptedError(PdfError):
    """Password-protected / encrypted document."""


_OBJ_RE = re.compile(rb"(\d+)\s+(\d+)\s+obj\b")
_REF_RE = re.compile(rb"(\d+)\s+\d+\s+R\b")
_LENGTH_RE = re.compile(rb"/Length\s+(\d+)\b")
_LENGTH_REF_RE = re.compile(rb"/Length\s+(\d+)\s+\d+\s+R\b")
_MEDIABOX_RE = re.compile(
    rb"/MediaBox\s*\[\s*([\d.+-]+)\s+([\d.+-]+)\s+([\d.+-]+)\s+([\d.+-]+)\s*\]"
)
_NUMBER_RE = re.compile(rb"[-+]?\d+(?:\.\d+)?")


@dataclass
class _PdfObject:
    number: int
    header: bytes  # dictionary / value source, up to the stream keyword
    stream: bytes | None


def _scan_objects(data: bytes) -> dict[int, _PdfObject]:
    objects: dict[int, _PdfObject] = {}
    pos = 0
    while True:
        m = _OBJ_RE.search(data, pos)
        if not m:
            break
        num = int(m.group(1))
        body_start = m.end()
        stream_kw = data.find(b"stream", body_start)
        endobj = data.find(b"endobj", body_start)
        if endobj == -1:
            raise PdfFormatError(f"object {num}: missing endobj")
        if stream_kw != -1 and stream_kw < endobj:
            header = data[body_start:stream_kw]
            # EOL after the stream keyword is CRLF or LF
            ds = stream_kw + len(b"stream")
            if data[ds : ds + 2] == b"\r\n":
                ds += 2
            elif data[ds : ds + 1] == b"\n":
                ds += 1
            length = _direct_length(header)
            if length is not None:
                stream = data[ds : ds + length]
                endstream = data.find(b"endstream", ds + length)
            else:
                endstream = data.find(b"endstream", ds)
                if endstream == -1:
                    raise PdfFormatError(f"object {num}: missing endstream")
                stream = data[ds:endstream].rstrip(b"\r\n")
            if endstream == -1:
                raise PdfFormatError(f"object {num}: missing endstream")
            endobj = data.find(b"endobj", endstream)
            if endobj == -1:
                raise PdfFormatError(f"object {num}: missing endobj after stream")
            objects[num] = _PdfObject(num, header, stream)
        else:
            objects[num] = _PdfObject(num, data[body_start:endobj], None)
        pos = endobj + len(b"endobj")
    return objects


def _direct_length(header: bytes) -> int | None:
    if _LENGTH_REF_RE.search(header):
        return None  # indirect /Length: fall back to endstream search
    m = _LENGTH_RE.search(header)
    return int(m.group(1)) if m else None


def _dict_value_ref(header: bytes, key: bytes) -> int | None:
    m = re.search(re.escape(key) + rb"\s+(\d+)\s+\d+\s+R\b", header)
    return int(m.group(1)) if m else None


_FILTER_RE = re.compile(rb"/Filter\s*(\[[^\]]*\]|/[A-Za-z0-9]+)")


def _filter_chain(header: bytes) -> list[bytes]:
    m = _FILTER_RE.search(header)
    if not m:
        return []
    return re.findall(rb"/([A-Za-z0-9]+)", m.group(1))


def _apply_filters(stream: bytes, filters: list[bytes], *, stop_at: bytes | None = None) -> bytes:
    """Run the decode chain, optionally stopping before a terminal filter
    (DCTDecode output is JPEG bytes that PIL consumes directly)."""
    data = stream
    for name in filters:
        if stop_at is not None and name == stop_at:
            return data
        if name == b"ASCII85Decode":
            data = base64.a85decode(data.strip(), adobe=True)
        elif name == b"ASCIIHexDecode":
            hexdata = data.split(b">")[0]
            data = binascii.unhexlify(re.sub(rb"\s", b"", hexdata))
        elif name == b"FlateDecode":
            data = zlib.decompress(data)
        else:
            raise PdfFormatError(f"unsupported stream filter /{name.decode()}")
    return data


def _has_name(header: bytes, key: bytes, name: bytes) -> bool:
    return re.search(re.escape(key) + rb"\s*" + re.escape(name) + rb"\b", header) is not None


class ImagePdf:
    """Parsed image-based PDF: page sizes, page images, optional text layer."""

    def __init__(self, objects: dict[int, _PdfObject], page_numbers: list[int]):
        self._objects = objects
        self._pages = page_numbers

    @classmethod
    def open(cls, path: str | Path) -> "ImagePdf":
        data = Path(path).read_bytes()
        if not data.startswith(b"%PDF-"):
            raise PdfFormatError(f"{path}: not a PDF (missing %PDF header)")
        if re.search(rb"/Encrypt\s+\d+\s+\d+\s+R", data) or b"/Encrypt<<" in data:
            raise PdfEncryptedError(f"{path}: encrypted PDF")
        objects = _scan_objects(data)
        pages = cls._page_order(objects)
        if not pages:
            raise PdfFormatError(f"{path}: no page objects found")
        return cls(objects, pages)

    @staticmethod
    def _page_order(objects: dict[int, _PdfObject]) -> list[int]:
        # /Pages node /Kids carries document order; fall back to object order.
        for obj in objects.values():
            if obj.stream is None and _has_name(obj.header, b"/Type", b"/Pages"):
                m = re.search(rb"/Kids\s*\[([^\]]*)\]", obj.header)
                if m:
                    kids = [int(g) for g in _REF_RE.findall(m.group(1))]
                    kids = [
                        k
                        for k in kids
                        if k in objects and _has_name(objects[k].header, b"/Type", b"/Page")
                    ]
                    if kids:
                        return kids
        return sorted(
            n
            for n, obj in objects.items()
            if obj.stream is None
            and _has_name(obj.header, b"/Type", b"/Page")
            and not _has_name(obj.header, b"/Type", b"/Pages")
        )

    @property
    def page_count(self) -> int:
        return len(self._pages)

    def page_size_pts(self, index: int) -> tuple[float, float]:
        page = self._objects[self._pages[index]]
        m = _MEDIABOX_RE.search(page.header)
        if not m:
            for obj in self._objects.values():
                if obj.stream is None and _has_name(obj.header, b"/Type", b"/Pages"):
                    m = _MEDIABOX_RE.search(obj.header)
                    if m:
                        break
        if not m:
            return (612.0, 792.0)  # US letter default
        x0, y0, x1, y1 = (float(m.group(i)) for i in range(1, 5))
        return (abs(x1 - x0), abs(y1 - y0))

    def _resources_header(self, page: _PdfObject) -> bytes:
        ref = _dict_value_ref(page.header, b"/Resources")
        if ref is not None and ref in self._objects:
            return self._objects[ref].header
        return page.header

    def _image_objects(self, index: int) -> list[_PdfObject]:
        page = self._objects[self._pages[index]]
        refs = _REF_RE.findall(self._resources_header(page))
        images = []
        seen = set()
        for raw in refs:
            num = int(raw)
            if num in seen or num not in self._objects:
                continue
            seen.add(num)
            obj = self._objects[num]
            if obj.stream is not None and _has_name(obj.header, b"/Subtype", b"/Image"):
                images.append(obj)
        return images

    def page_image(self, index: int) -> Image.Image | None:
        """Decode the page's dominant embedded image, or None for imageless pages."""
        best: Image.Image | None = None
        for obj in self._image_objects(index):
            img = _decode_image(obj)
            if img is not None and (
                best is None or img.width * img.height > best.width * best.height
            ):
                best = img
        return best

    def render(self, index: int, dpi: int) -> Image.Image:
        """Rasterize a page: scale its embedded image to the page size at dpi."""
        w_pts, h_pts = self.page_size_pts(index)
        w_px = max(1, round(w_pts / 72.0 * dpi))
        h_px = max(1, round(h_pts / 72.0 * dpi))
        img = self.page_image(index)
        if img is None:
            return Image.new("RGB", (w_px, h_px), (255, 255, 255))
        if img.mode != "RGB":
            img = img.convert("RGB")
        if img.size != (w_px, h_px):
            img = img.resize((w_px, h_px), Image.LANCZOS)
        return img

    def text(self, index: int) -> str:
        """Latin text layer of a page (Tj/TJ literals), one line per show op."""
        page = self._objects[self._pages[index]]
        ref = _dict_value_ref(page.header, b"/Contents")
        streams: list[bytes] = []
        if ref is not None and ref in self._objects:
            streams.append(self._content_bytes(self._objects[ref]))
        else:
            m = re.search(rb"/Contents\s*\[([^\]]*)\]", page.header)
            if m:
                for raw in _REF_RE.findall(m.group(1)):
                    num = int(raw)
                    if num in self._objects:
                        streams.append(self._content_bytes(self._objects[num]))
        lines: list[str] = []
        for content in streams:
            lines.extend(_extract_show_strings(content))
        return "\n".join(lines)

    @staticmethod
    def _content_bytes(obj: _PdfObject) -> bytes:
        if obj.stream is None:
            return b""
        try:
            return _apply_filters(obj.stream, _filter_chain(obj.header))
        except (zlib.error, ValueError, binascii.Error) as exc:
            raise PdfFormatError(f"object {obj.number}: bad content stream") from exc


def _decode_image(obj: _PdfObject) -> Image.Image | None:
    header, stream = obj.header, obj.stream
    assert stream is not None
    filters = _filter_chain(header)
    try:
        if b"DCTDecode" in filters:
            jpeg = _apply_filters(stream, filters, stop_at=b"DCTDecode")
            return Image.open(io.BytesIO(jpeg)).copy()
        raw = _apply_filters(stream, filters)
    except (zlib.error, ValueError, binascii.Error, OSError, PdfFormatError):
        return None
    wm = re.search(rb"/Width\s+(\d+)", header)
    hm = re.search(rb"/Height\s+(\d+)", header)
    if not wm or not hm:
        return None
    w, h = int(wm.group(1)), int(hm.group(1))
    if _has_name(header, b"/ColorSpace", b"/DeviceGray"):
        mode, stride = "L", w
    else:
        mode, stride = "RGB", 3 * w
    if len(raw) < stride * h:
        return None
    return Image.frombytes(mode, (w, h), raw[: stride * h])


_SHOW_RE = re.compile(rb"\((?:\\.|[^\\()])*\)\s*Tj|\[((?:\\.|[^\]])*)\]\s*TJ")
_LITERAL_RE = re.compile(rb"\(((?:\\.|[^\\()])*)\)")

_ESCAPES = {
    b"n": b"\n",
    b"r": b"\r",
    b"t": b"\t",
    b"b": b"\b",
    b"f": b"\f",
    b"(": b"(",
    b")": b")",
    b"\\": b"\\",
}


def _unescape_literal(raw: bytes) -> str:
    out = bytearray()
    i = 0
    while i < len(raw):
        c = raw[i : i + 1]
        if c == b"\\" and i + 1 < len(raw):
            nxt = raw[i + 1 : i + 2]
            if nxt in _ESCAPES:
                out += _ESCAPES[nxt]
                i += 2
                continue
            if nxt.isdigit():  # octal escape, up to 3 digits
                j = i + 1
                while j < min(i + 4, len(raw)) and raw[j : j + 1].isdigit():
                    j += 1
                out.append(int(raw[i + 1 : j], 8) & 0xFF)
                i = j
                continue
            i += 1
            continue
        out += c
        i += 1
    return out.decode("latin-1")


def _extract_show_strings(content: bytes) -> list[str]:
    lines = []
    for m in _SHOW_RE.finditer(content):
        parts = [_unescape_literal(g) for g in _LITERAL_RE.findall(m.group(0))]
        text = "".join(parts)
        if text.strip():
            lines.append(text)
    return lines
