"""Figure grounding: ask a multimodal model for bounding boxes on a rendered
page, clamp/validate what comes back, and crop deterministic figure images.

Model output parsing is deliberately tolerant (code fences, trailing prose,
either `bbox_2d` or `bbox` keys) and never raises: a page that yields garbage
produces an empty box list plus a diagnostic, keeping the audit trail intact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from PIL import Image, ImageDraw

from .gateway import ChatRequest, Gateway, ImagePart, Message, Sampling, TextPart
from .parsing import extract_json_array
from .records import BoundingBox, FigureRecord, PageRecord, figure_identifier
from .workspace import Workspace, read_jsonl, write_jsonl_atomic

DEFAULT_MIN_AREA_PX = 32 * 32

DEFAULT_GROUNDING_PROMPT = (
    "Locate every figure, scan image, chart, or photograph on this document page. "
    "Respond with only a JSON array; one object per figure, shaped "
    '[{"bbox_2d": [x_min, y_min, x_max, y_max], "label": "<short category>", '
    '"caption": "<one-sentence description>"}]. Coordinates are absolute pixels '
    "on the supplied page image. Return [] if the page has no figures."
)


@dataclass
class Rejection:
    bbox: BoundingBox
    reason: str

    def to_dict(self) -> dict:
        return {"bbox": self.bbox.to_dict(), "reason": self.reason}


def build_grounding_request(
    page: PageRecord,
    ws: Workspace,
    provider_id: str,
    model_id: str,
    prompt: str = DEFAULT_GROUNDING_PROMPT,
    sampling: Sampling | None = None,
) -> ChatRequest:
    return ChatRequest(
        provider_id=provider_id,
        model_id=model_id,
        messages=[
            Message(
                role="user",
                parts=[
                    ImagePart(path=str(ws.resolve(page.image_ref))),
                    TextPart(text=prompt),
                ],
            )
        ],
        sampling=sampling or Sampling(temperature=0.0, top_p=1.0, max_tokens=2048),
    )


def parse_box_array(text: str) -> list[BoundingBox]:
    """Pull the first JSON array of box objects out of model text.

    Raises ValueError when no parseable array exists; callers turn that into
    a diagnostic, never a crash.
    """
    value = extract_json_array(text)
    if value is None:
        raise ValueError("no JSON box array found in model output")
    boxes = []
    for item in value:
        if not isinstance(item, dict):
            continue
        try:
            boxes.append(BoundingBox.from_dict(item))
        except (ValueError, TypeError):
            continue
    return boxes


def detect_figures(
    page: PageRecord,
    gateway: Gateway,
    ws: Workspace,
    *,
    provider_id: str,
    model_id: str,
    prompt: str = DEFAULT_GROUNDING_PROMPT,
    sampling: Sampling | None = None,
) -> list[BoundingBox]:
    """Raw model-proposed boxes for one page; empty list on any failure."""
    request = build_grounding_request(page, ws, provider_id, model_id, prompt, sampling)
    response = gateway.complete(request)
    if not response.ok:
        ws.diagnostic(
            "grounding",
            "gateway error, page flagged for retry",
            doc_id=page.doc_id,
            page_index=page.page_index,
        )
        return []
    try:
        return parse_box_array(response.text)
    except ValueError:
        ws.diagnostic(
            "grounding",
            "unparseable grounding output",
            doc_id=page.doc_id,
            page_index=page.page_index,
            output_head=response.text[:200],
        )
        return []


def clamp_and_validate(
    raw_box: BoundingBox,
    page_dims: tuple[int, int],
    min_area_px: int = DEFAULT_MIN_AREA_PX,
) -> BoundingBox | Rejection:
    """Clamp coordinates into the page; reject degenerate or speck-sized boxes."""
    width, height = page_dims
    x_min = min(max(raw_box.x_min, 0), width)
    x_max = min(max(raw_box.x_max, 0), width)
    y_min = min(max(raw_box.y_min, 0), height)
    y_max = min(max(raw_box.y_max, 0), height)
    clamped = BoundingBox(
        x_min=x_min,
        y_min=y_min,
        x_max=x_max,
        y_max=y_max,
        label=raw_box.label,
        caption=raw_box.caption,
    )
    if x_min >= x_max:
        return Rejection(clamped, "zero width after clamping")
    if y_min >= y_max:
        return Rejection(clamped, "zero height after clamping")
    if clamped.area < min_area_px:
        return Rejection(clamped, f"area {clamped.area} below minimum {min_area_px}")
    return clamped


def crop_figure(ws: Workspace, page: PageRecord, bbox: BoundingBox) -> FigureRecord:
    """Crop the validated box to figures/<figure_id>.png; ids and bytes are
    stable across re-runs."""
    raster = ws.resolve(page.image_ref)
    if not raster.exists():
        raise IOError(f"page raster missing: {raster}")
    figure_id = figure_identifier(page.doc_id, page.page_index, bbox)
    out = ws.figure_image(figure_id)
    out.parent.mkdir(parents=True, exist_ok=True)
    with Image.open(raster) as img:
        crop = img.crop((bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max))
        crop.save(out, format="PNG", optimize=False)
    return FigureRecord(
        figure_id=figure_id,
        doc_id=page.doc_id,
        page_index=page.page_index,
        bbox=bbox,
        image_ref=ws.relative(out),
    )


class FigureIndex:
    def __init__(self, ws: Workspace):
        self.ws = ws
        self.figures: dict[str, FigureRecord] = {}
        if ws.figures_index.exists():
            for d in read_jsonl(ws.figures_index):
                rec = FigureRecord.from_dict(d)
                self.figures[rec.figure_id] = rec

    def put(self, rec: FigureRecord) -> None:
        self.figures[rec.figure_id] = rec

    def __contains__(self, figure_id: str) -> bool:
        return figure_id in self.figures

    def get(self, figure_id: str) -> Optional[FigureRecord]:
        return self.figures.get(figure_id)

    def for_page(self, doc_id: str, page_index: int) -> list[FigureRecord]:
        return [
            f
            for _, f in sorted(self.figures.items())
            if f.doc_id == doc_id and f.page_index == page_index
        ]

    def save(self) -> None:
        write_jsonl_atomic(
            self.ws.figures_index,
            (f.to_dict() for _, f in sorted(self.figures.items())),
        )


def ground_page(
    page: PageRecord,
    gateway: Gateway,
    ws: Workspace,
    index: FigureIndex,
    *,
    provider_id: str,
    model_id: str,
    prompt: str = DEFAULT_GROUNDING_PROMPT,
    min_area_px: int = DEFAULT_MIN_AREA_PX,
    debug_overlays: bool = False,
) -> tuple[list[FigureRecord], list[Rejection]]:
    """detect -> clamp -> crop for one page; rejections are recorded, and the
    figure index is updated in place (caller saves)."""
    raw_boxes = detect_figures(
        page, gateway, ws, provider_id=provider_id, model_id=model_id, prompt=prompt
    )
    figures: list[FigureRecord] = []
    rejections: list[Rejection] = []
    for raw in raw_boxes:
        result = clamp_and_validate(raw, (page.width_px, page.height_px), min_area_px)
        if isinstance(result, Rejection):
            rejections.append(result)
            ws.diagnostic(
                "grounding",
                "box rejected",
                doc_id=page.doc_id,
                page_index=page.page_index,
                reason=result.reason,
                bbox=result.bbox.to_dict(),
            )
            continue
        fig = crop_figure(ws, page, result)
        index.put(fig)
        figures.append(fig)
    if debug_overlays and figures:
        _write_overlay(ws, page, [f.bbox for f in figures])
    return figures, rejections


def _write_overlay(ws: Workspace, page: PageRecord, boxes: list[BoundingBox]) -> None:
    raster = ws.resolve(page.image_ref)
    out = ws.debug_dir / f"{page.doc_id}_{page.page_index}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    with Image.open(raster) as img:
        canvas = img.convert("RGB")
        draw = ImageDraw.Draw(canvas)
        for box in boxes:
            draw.rectangle(
                [box.x_min, box.y_min, box.x_max, box.y_max], outline=(220, 40, 40), width=3
            )
            if box.label:
                draw.text((box.x_min + 4, max(box.y_min - 14, 0)), box.label, fill=(220, 40, 40))
        canvas.save(out, format="PNG", optimize=False)
