"""End-to-end orchestration: ingest -> grounding -> generation -> curation ->
decontamination -> assembly.

Each stage reads and writes workspace artifacts, so stages can also run
individually from the CLI; this module just sequences them and carries the
stage configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .curate import CurateOptions, CurationStore, StatsClassifier, run_curation
from .dataset import emit_and_summarize, split_records
from .dedup import EmbeddingBackend, HashingEmbeddingBackend, decontaminate
from .evalharness import records_to_eval_items
from .gateway import Gateway
from .grounding import FigureIndex, ground_page
from .ingest import (
    PageIndex,
    RasterBackend,
    TextBackend,
    ingest_source,
    load_sources,
)
from .qagen import (
    BankSchema,
    RawRecordWriter,
    StageConfig,
    convert_bank,
    generate_from_figures,
    generate_from_text,
    load_template,
)
from .records import FLAG_SPLIT_ERROR, QaRecord, SourceDocument
from .workspace import Workspace, write_jsonl_atomic


@dataclass
class SourceSpec:
    path: str
    kind: str
    eval_pool: bool = False
    language_hint: str = "und"
    bank_schema: Optional[BankSchema] = None


@dataclass
class PipelineConfig:
    provider_id: str
    model_id: str
    dpi: int = 144
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 4096
    triplets_per_chunk: int = 3
    train_text_templates: list[str] = field(
        default_factory=lambda: ["text_mcq", "text_dialogue"]
    )
    train_grounded_templates: list[str] = field(
        default_factory=lambda: ["grounded_diagnostic", "grounded_dialogue"]
    )
    eval_text_templates: list[str] = field(default_factory=lambda: ["text_mcq"])
    eval_grounded_templates: list[str] = field(default_factory=lambda: ["grounded_mcq"])
    judge_threshold: int = 4
    review: str = "auto"
    use_stats_classifier: bool = True
    ngram_n: int = 12
    cosine_threshold: float = 0.92
    debug_overlays: bool = False

    def stage_config(self, triplets: Optional[int] = None) -> StageConfig:
        return StageConfig(
            provider_id=self.provider_id,
            model_id=self.model_id,
            temperature=self.temperature,
            top_p=self.top_p,
            max_tokens=self.max_tokens,
            triplets_per_chunk=triplets or self.triplets_per_chunk,
        )


@dataclass
class PipelineResult:
    sources: list[SourceDocument]
    page_count: int
    figure_count: int
    raw_records: int
    curated: int
    removed_contaminated: int
    split_counts: dict[str, int]


def run_ingest(
    ws: Workspace,
    specs: list[SourceSpec],
    config: PipelineConfig,
    *,
    raster_backend: Optional[RasterBackend] = None,
    text_backend: Optional[TextBackend] = None,
) -> list[SourceDocument]:
    docs = []
    for spec in specs:
        doc, _ = ingest_source(
            ws,
            spec.path,
            spec.kind,
            dpi=config.dpi,
            language_hint=spec.language_hint,
            eval_pool=spec.eval_pool,
            raster_backend=raster_backend,
            text_backend=text_backend,
        )
        docs.append(doc)
    return docs


def run_grounding(ws: Workspace, gateway: Gateway, config: PipelineConfig) -> FigureIndex:
    pages = PageIndex(ws)
    figures = FigureIndex(ws)
    for page in pages.all():
        ground_page(
            page,
            gateway,
            ws,
            figures,
            provider_id=config.provider_id,
            model_id=config.model_id,
            debug_overlays=config.debug_overlays,
        )
    figures.save()
    return figures


def run_generation(
    ws: Workspace,
    gateway: Gateway,
    config: PipelineConfig,
    specs: list[SourceSpec],
) -> int:
    sources = load_sources(ws)
    pages = PageIndex(ws)
    figures = FigureIndex(ws)
    writer = RawRecordWriter(ws)
    spec_by_path = {str(Path(s.path)): s for s in specs}
    total = 0
    for doc in sources.values():
        spec = spec_by_path.get(doc.path)
        if doc.kind == "question_bank":
            schema = spec.bank_schema if spec else None
            if schema is None:
                ws.diagnostic("qagen", "question bank without schema map", doc_id=doc.doc_id)
                continue
            run = convert_bank(ws, doc, schema, writer)
            total += len(run.records)
            continue
        if not doc.requires_rasterization:
            continue
        doc_pages = pages.for_doc(doc.doc_id)
        text_names = config.eval_text_templates if doc.eval_pool else config.train_text_templates
        grounded_names = (
            config.eval_grounded_templates if doc.eval_pool else config.train_grounded_templates
        )
        text_templates = [load_template(n) for n in text_names]
        grounded_templates = [load_template(n) for n in grounded_names]
        stage = config.stage_config()
        run = generate_from_text(ws, gateway, doc, doc_pages, text_templates, stage, writer)
        total += len(run.records)
        figures_by_page = {
            p.page_index: figures.for_page(doc.doc_id, p.page_index) for p in doc_pages
        }
        run = generate_from_figures(
            ws, gateway, doc, doc_pages, figures_by_page, grounded_templates, stage, writer
        )
        total += len(run.records)
    return total


def run_curate_stage(
    ws: Workspace, gateway: Gateway, config: PipelineConfig
) -> tuple[list[QaRecord], CurationStore]:
    options = CurateOptions(
        judge_enabled=True,
        judge_threshold=config.judge_threshold,
        judge_config=config.stage_config(),
        solver_config=config.stage_config(),
        classifier=StatsClassifier() if config.use_stats_classifier else None,
        review=config.review,
    )
    run_curation(ws, gateway, options)
    store = CurationStore(ws)
    survivors = [r for r in store.records.values() if r.status in ("accepted", "edited", "cleaned")]
    return survivors, store


def run_decontaminate(
    ws: Workspace,
    store: CurationStore,
    config: PipelineConfig,
    backend: Optional[EmbeddingBackend] = None,
) -> int:
    accepted = [
        r for r in store.records.values() if r.status in ("accepted", "edited")
    ]
    train = [r for r in accepted if not r.provenance.get("eval_pool")]
    test = [r for r in accepted if r.provenance.get("eval_pool")]
    kept, report = decontaminate(
        train,
        test,
        n=config.ngram_n,
        cosine_threshold=config.cosine_threshold,
        backend=backend or HashingEmbeddingBackend(),
    )
    removed = set(report.removed_train_ids)
    for rid in removed:
        rec = store.records.get(rid)
        if rec is not None:
            rec.status = "rejected"
            rec.flags.append("contaminated")
    if removed:
        store.save()
    write_jsonl_atomic(ws.dedup_report, report.to_rows())
    return len(removed)


def run_assembly(ws: Workspace, store: CurationStore) -> dict[str, int]:
    figures = FigureIndex(ws)
    accepted = [
        r for r in store.records.values() if r.status in ("accepted", "edited")
    ]
    splits, errors = split_records(accepted)
    if errors:
        for rec, reason in errors:
            rec.status = "cleaned"
            if FLAG_SPLIT_ERROR not in rec.flags:
                rec.flags.append(FLAG_SPLIT_ERROR)
            ws.diagnostic("dataset", reason, record_id=rec.record_id)
        store.save()
    manifests = emit_and_summarize(splits, ws.dataset_dir, figure_index=figures)
    eval_dir = ws.root / "eval_items"
    for split_name in ("test_knowledge", "test_diagnosis"):
        items = records_to_eval_items(
            sorted(splits.get(split_name, []), key=lambda r: r.record_id)
        )
        resolved = []
        for item, rec in zip(items, sorted(splits.get(split_name, []), key=lambda r: r.record_id)):
            refs = []
            for fid in rec.image_refs:
                fig = figures.get(fid)
                refs.append(fig.image_ref if fig else fid)
            item.image_refs = refs
            resolved.append(item)
        write_jsonl_atomic(eval_dir / f"{split_name}.jsonl", (i.to_dict() for i in resolved))
    return {m.split_name: m.count for m in manifests}


def run_pipeline(
    ws: Workspace,
    gateway: Gateway,
    specs: list[SourceSpec],
    config: PipelineConfig,
    *,
    raster_backend: Optional[RasterBackend] = None,
    text_backend: Optional[TextBackend] = None,
    embed_backend: Optional[EmbeddingBackend] = None,
) -> PipelineResult:
    ws.ensure()
    docs = run_ingest(
        ws, specs, config, raster_backend=raster_backend, text_backend=text_backend
    )
    figures = run_grounding(ws, gateway, config)
    raw_count = run_generation(ws, gateway, config, specs)
    survivors, store = run_curate_stage(ws, gateway, config)
    removed = run_decontaminate(ws, store, config, backend=embed_backend)
    split_counts = run_assembly(ws, store)
    pages = PageIndex(ws)
    return PipelineResult(
        sources=docs,
        page_count=len(pages.all()),
        figure_count=len(figures.figures),
        raw_records=raw_count,
        curated=len(survivors),
        removed_contaminated=removed,
        split_counts=split_counts,
    )
