"""Command-line interface.

Subcommands mirror the pipeline stages (ingest / ground / generate / curate /
dedup / assemble), plus the inference controller (infer), the evaluation
harness (eval), the review server, usage reporting, and an offline demo
(make-demo + pipeline) driven entirely by the scripted mock provider.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .budget import BudgetPolicy, generate_with_budget
from .curate import CurateOptions, CurationStore, StatsClassifier, run_curation
from .dedup import (
    DEFAULT_COSINE_THRESHOLD,
    DEFAULT_NGRAM,
    HashingEmbeddingBackend,
    decontaminate,
)
from .evalharness import (
    DEFAULT_K,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOP_P,
    load_eval_set,
    run_eval,
    scaling_sweep,
    write_curve_csv,
    write_report,
)
from .gateway import (
    ChatRequest,
    Gateway,
    Message,
    Sampling,
    TextPart,
    build_gateway,
    load_provider_config,
    usage_report,
)
from .ingest import DEFAULT_DPI, ImagePdfRasterBackend, default_raster_backend
from .pipeline import (
    PipelineConfig,
    SourceSpec,
    run_assembly,
    run_generation,
    run_grounding,
    run_ingest,
    run_pipeline,
)
from .qagen import BankSchema, StageConfig
from .records import QaRecord
from .workspace import Workspace, read_jsonl, write_jsonl_atomic


def _gateway(args) -> Gateway:
    ws = Workspace(args.workspace).ensure()
    providers = load_provider_config(args.providers)
    return build_gateway(ws, providers)


def _parse_policy(spec: str | None, no_budget_forcing: bool = False) -> BudgetPolicy:
    if no_budget_forcing or not spec:
        return BudgetPolicy.identity()
    fields = {}
    for part in spec.split(","):
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    max_raw = fields.get("max", "inf")
    return BudgetPolicy(
        min_think_units=int(fields.get("min", 0)),
        max_think_units=None if max_raw in ("inf", "none", "") else int(max_raw),
        max_wait_injections=int(fields.get("waits", 2)),
    )


def cmd_ingest(args) -> int:
    ws = Workspace(args.workspace).ensure()
    backend = ImagePdfRasterBackend() if args.raster == "image_pdf" else default_raster_backend()
    spec = SourceSpec(
        path=args.source, kind=args.kind, eval_pool=args.eval_pool,
        language_hint=args.language,
    )
    config = PipelineConfig(provider_id="", model_id="", dpi=args.dpi)
    docs = run_ingest(ws, [spec], config, raster_backend=backend)
    for doc in docs:
        print(f"registered {doc.doc_id} ({doc.kind}) from {doc.path}")
    return 0


def cmd_ground(args) -> int:
    ws = Workspace(args.workspace).ensure()
    gw = _gateway(args)
    config = PipelineConfig(
        provider_id=args.provider, model_id=args.model, debug_overlays=args.debug_overlays
    )
    figures = run_grounding(ws, gw, config)
    print(f"{len(figures.figures)} figures indexed")
    return 0


def cmd_generate(args) -> int:
    ws = Workspace(args.workspace).ensure()
    gw = _gateway(args)
    config = PipelineConfig(
        provider_id=args.provider, model_id=args.model,
        triplets_per_chunk=args.triplets,
    )
    specs = _load_source_specs(args.sources) if args.sources else []
    count = run_generation(ws, gw, config, specs)
    print(f"{count} raw records generated")
    return 0


def cmd_curate(args) -> int:
    ws = Workspace(args.workspace).ensure()
    gw = _gateway(args)
    stage = StageConfig(provider_id=args.provider, model_id=args.model)
    keywords = None
    if args.keywords:
        keywords = {
            line.strip()
            for line in Path(args.keywords).read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
    options = CurateOptions(
        judge_enabled=not args.no_judge,
        judge_threshold=args.judge_threshold,
        judge_config=stage,
        solver_config=stage,
        classifier=None if args.classifier == "none" else StatsClassifier(),
        keywords=keywords,
        review=args.review,
        verify_bank_mcq=not args.no_verify_mcq,
    )
    survivors, reports = run_curation(ws, gw, options)
    for report in reports:
        print(
            f"{report.stage}: in={report.input} kept={report.kept} "
            f"dropped={report.dropped} review={report.review}"
        )
    print(f"{len(survivors)} records survive curation")
    return 0


def cmd_dedup(args) -> int:
    train = [QaRecord.from_dict(d) for d in read_jsonl(args.train)]
    test = [QaRecord.from_dict(d) for d in read_jsonl(args.test)]
    kept, report = decontaminate(
        train, test, n=args.n, cosine_threshold=args.cosine,
        backend=HashingEmbeddingBackend(), within_train=args.within_train,
    )
    write_jsonl_atomic(args.report, report.to_rows())
    print(
        f"{len(train) - len(kept)} train records removed "
        f"({len(report.pairs)} duplicate pairs); report at {args.report}"
    )
    return 0


def cmd_assemble(args) -> int:
    ws = Workspace(args.workspace).ensure()
    store = CurationStore(ws)
    counts = run_assembly(ws, store)
    out = Path(args.out) if args.out else ws.dataset_dir
    if args.out and out != ws.dataset_dir:
        out.mkdir(parents=True, exist_ok=True)
        for path in ws.dataset_dir.iterdir():
            (out / path.name).write_bytes(path.read_bytes())
    for name, count in counts.items():
        print(f"{name}: {count}")
    return 0


def cmd_infer(args) -> int:
    gw = _gateway(args)
    policy = _parse_policy(args.policy)
    prompt = Path(args.prompt_file).read_text(encoding="utf-8")
    request = ChatRequest(
        provider_id=args.endpoint,
        model_id=args.model,
        messages=[
            Message(role="system", parts=[TextPart(text=args.system)]),
            Message(role="user", parts=[TextPart(text=prompt)]),
        ],
        sampling=Sampling(temperature=args.temperature, top_p=args.top_p, max_tokens=args.max_tokens),
    )
    result = generate_with_budget(request, policy, gw)
    print(json.dumps(result.to_dict(), ensure_ascii=False, indent=2))
    return 0 if result.ok else 1


def cmd_eval(args) -> int:
    gw = _gateway(args)
    items, rejects = load_eval_set(args.set)
    for reject in rejects:
        print(f"rejected: {reject}", file=sys.stderr)
    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    sampling = Sampling(
        temperature=args.temperature, top_p=args.top_p, max_tokens=args.max_tokens
    )
    image_base = Path(args.image_base) if args.image_base else Path(args.set).parent
    if args.sweep:
        budget_specs = json.loads(Path(args.sweep).read_text(encoding="utf-8"))
        policies = []
        for spec in budget_specs:
            if isinstance(spec, (int, float)):
                policies.append(
                    BudgetPolicy(min_think_units=int(spec), max_think_units=int(spec))
                )
            else:
                policies.append(
                    BudgetPolicy(
                        min_think_units=int(spec.get("min", spec["budget"])),
                        max_think_units=int(spec.get("max", spec["budget"])),
                        max_wait_injections=int(spec.get("waits", 2)),
                    )
                )
        curve = scaling_sweep(
            items, policies, gw,
            provider_id=args.provider, model_id=args.model, k=args.k,
            sampling=sampling, image_base=image_base,
        )
        write_curve_csv(curve, report_dir / "curve.csv")
        print(f"curve written to {report_dir / 'curve.csv'}")
        return 0
    policy = _parse_policy(args.policy, args.no_budget_forcing)
    report = run_eval(
        items, gw,
        provider_id=args.provider, model_id=args.model, k=args.k,
        sampling=sampling, policy=policy, image_base=image_base,
        transcripts_path=report_dir / "transcripts.jsonl",
    )
    write_report(report, report_dir)
    print(f"pass@1 = {report.overall_pass_at_1:.4f} over {len(report.items)} items")
    for category, row in report.per_category().items():
        print(f"  {category}: {row['pass_at_1']:.4f} ({row['items']} items)")
    return 0


def cmd_serve_review(args) -> int:
    import uvicorn

    from .review_api import create_review_app

    ws = Workspace(args.workspace).ensure()
    ui_dir = Path(args.ui) if args.ui else None
    app = create_review_app(ws, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_usage(args) -> int:
    ws = Workspace(args.workspace)
    report = usage_report(ws)
    print(json.dumps(report, indent=2))
    return 0


def cmd_make_demo(args) -> int:
    from .synthcorpus import build_demo_corpus

    corpus = build_demo_corpus(args.out)
    fixture = corpus.fixture_path()
    providers_path = Path(args.out) / "providers.json"
    providers_path.write_text(
        json.dumps(
            {
                "providers": [
                    {
                        "provider_id": "mock-main",
                        "type": "mock",
                        "fixture": str(fixture),
                    }
                ]
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    print(f"demo corpus at {corpus.root} (providers config: {providers_path})")
    return 0


def _load_source_specs(path: str) -> list[SourceSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    specs = []
    for entry in data:
        schema = None
        if entry.get("bank_schema"):
            schema = BankSchema.from_dict(entry["bank_schema"])
        specs.append(
            SourceSpec(
                path=entry["path"],
                kind=entry["kind"],
                eval_pool=bool(entry.get("eval_pool", False)),
                language_hint=entry.get("language_hint", "und"),
                bank_schema=schema,
            )
        )
    return specs


def cmd_pipeline(args) -> int:
    ws = Workspace(args.workspace).ensure()
    if args.demo_corpus:
        from .synthcorpus import build_demo_corpus

        corpus = build_demo_corpus(args.demo_corpus)
        from .gateway import MockProvider

        gw = Gateway(ws)
        gw.register(MockProvider("mock-main", corpus.fixture))
        specs = corpus.specs()
        config = corpus.config()
        result = run_pipeline(
            ws, gw, specs, config, raster_backend=ImagePdfRasterBackend()
        )
    else:
        if not args.sources or not args.providers:
            print("pipeline needs --sources and --providers (or --demo-corpus)", file=sys.stderr)
            return 2
        gw = _gateway(args)
        specs = _load_source_specs(args.sources)
        config = PipelineConfig(
            provider_id=args.provider, model_id=args.model, review=args.review
        )
        result = run_pipeline(ws, gw, specs, config)
    print(
        f"pages={result.page_count} figures={result.figure_count} "
        f"raw={result.raw_records} curated={result.curated} "
        f"decontaminated={result.removed_contaminated}"
    )
    for name, count in result.split_counts.items():
        print(f"  {name}: {count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadforge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="register and rasterize a source")
    p.add_argument("--workspace", "--out", dest="workspace", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--kind", required=True,
                   choices=["book", "guideline", "paper", "question_bank", "public_dataset"])
    p.add_argument("--dpi", type=int, default=DEFAULT_DPI)
    p.add_argument("--eval-pool", action="store_true")
    p.add_argument("--language", default="und")
    p.add_argument("--raster", default="auto", choices=["auto", "image_pdf"])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ground", help="detect and crop figures on rendered pages")
    p.add_argument("--workspace", required=True)
    p.add_argument("--providers", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--debug-overlays", action="store_true")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("generate", help="generate raw QA records")
    p.add_argument("--workspace", required=True)
    p.add_argument("--providers", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--triplets", type=int, default=3)
    p.add_argument("--sources", help="source-spec JSON (for bank schema maps)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("curate", help="run the cleaning stages")
    p.add_argument("--workspace", required=True)
    p.add_argument("--providers", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--review", default="required", choices=["required", "optional", "off"])
    p.add_argument("--judge-threshold", type=int, default=4)
    p.add_argument("--no-judge", action="store_true")
    p.add_argument("--no-verify-mcq", action="store_true")
    p.add_argument("--keywords", help="file with one keyword per line")
    p.add_argument("--classifier", default="stats", choices=["stats", "none"])
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("dedup", help="decontaminate train records against test")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--n", type=int, default=DEFAULT_NGRAM)
    p.add_argument("--cosine", type=float, default=DEFAULT_COSINE_THRESHOLD)
    p.add_argument("--report", required=True)
    p.add_argument("--within-train", action="store_true")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("assemble", help="assign splits and emit dataset files")
    p.add_argument("--workspace", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("infer", help="budget-forced generation for one prompt")
    p.add_argument("--workspace", required=True)
    p.add_argument("--providers", required=True)
    p.add_argument("--endpoint", required=True, help="provider id")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt-file", required=True)
    p.add_argument("--policy", default="min=0,max=inf,waits=0")
    p.add_argument("--system", default="Reason inside <think></think> tags, then answer.")
    p.add_argument("--temperature", type=float, default=0.6)
    p.add_argument("--top-p", type=float, default=0.7)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="pass@1 evaluation over an item set")
    p.add_argument("--workspace", required=True)
    p.add_argument("--providers", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--top-p", type=float, default=DEFAULT_TOP_P)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--policy", default=None, help="min=..,max=..,waits=..")
    p.add_argument("--no-budget-forcing", action="store_true")
    p.add_argument("--sweep", help="budgets JSON for a scaling sweep")
    p.add_argument("--report", required=True)
    p.add_argument("--image-base", help="base dir for item image refs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve-review", help="serve the review API and UI")
    p.add_argument("--workspace", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--ui", help="directory with the built review UI")
    p.set_defaults(func=cmd_serve_review)

    p = sub.add_parser("usage", help="per-provider gateway usage report")
    p.add_argument("--workspace", required=True)
    p.set_defaults(func=cmd_usage)

    p = sub.add_parser("make-demo", help="write the synthetic demo corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_demo)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--workspace", required=True)
    p.add_argument("--demo-corpus", help="build/use the bundled synthetic corpus here")
    p.add_argument("--sources", help="source-spec JSON")
    p.add_argument("--providers")
    p.add_argument("--provider", default="mock-main")
    p.add_argument("--model", default="mock-model")
    p.add_argument("--review", default="auto", choices=["required", "optional", "auto", "off"])
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
