from __future__ import annotations

import csv
import json

import pytest

from quadforge.cli import main
from quadforge.records import make_record
from quadforge.workspace import read_jsonl

PROV = {"doc_id": "d", "page_index": 0, "source_kind": "book", "eval_pool": False}


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    corpus_dir = tmp_path_factory.mktemp("corpus")
    ws_dir = tmp_path_factory.mktemp("ws")
    assert main(["make-demo", "--out", str(corpus_dir)]) == 0
    assert main([
        "pipeline", "--workspace", str(ws_dir), "--demo-corpus", str(corpus_dir)
    ]) == 0
    return corpus_dir, ws_dir


def test_make_demo_writes_corpus_and_providers(demo_run):
    corpus_dir, _ = demo_run
    assert (corpus_dir / "train_book.pdf").exists()
    assert (corpus_dir / "eval_book.pdf").exists()
    assert (corpus_dir / "bank.csv").exists()
    assert (corpus_dir / "fixture.json").exists()
    providers = json.loads((corpus_dir / "providers.json").read_text())
    assert providers["providers"][0]["type"] == "mock"


def test_pipeline_emits_all_splits(demo_run):
    _, ws_dir = demo_run
    manifest = json.loads((ws_dir / "dataset" / "manifest.json").read_text())
    counts = {s["split_name"]: s["count"] for s in manifest["splits"]}
    assert len(counts) == 6
    assert all(c > 0 for c in counts.values())


def test_usage_reports_mock_provider(demo_run, capsys):
    _, ws_dir = demo_run
    assert main(["usage", "--workspace", str(ws_dir)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "mock-main" in out
    assert out["mock-main"]["calls"] > 0


def test_ingest_subcommand(tmp_path, demo_run):
    corpus_dir, _ = demo_run
    ws = tmp_path / "ws2"
    code = main([
        "ingest", "--workspace", str(ws), "--source", str(corpus_dir / "train_book.pdf"),
        "--kind", "book", "--dpi", "96", "--raster", "image_pdf",
    ])
    assert code == 0
    pages = list(read_jsonl(ws / "pages.jsonl"))
    assert len(pages) == 3


def test_dedup_subcommand(tmp_path):
    def rec(q, a):
        return make_record("text", "dialogue", q, a, provenance=dict(PROV)).to_dict()

    shared = " ".join(f"dup{i}" for i in range(20))
    train = tmp_path / "train.jsonl"
    test = tmp_path / "test.jsonl"
    report = tmp_path / "report.jsonl"
    train.write_text(
        "\n".join(json.dumps(r) for r in [rec(shared, "a1"), rec("fresh text", "a2")]) + "\n"
    )
    test.write_text(json.dumps(rec(shared, "b1")) + "\n")
    code = main([
        "dedup", "--train", str(train), "--test", str(test),
        "--n", "12", "--cosine", "0.92", "--report", str(report),
    ])
    assert code == 0
    rows = list(read_jsonl(report))
    assert len(rows) >= 1
    assert {"record_id_a", "record_id_b", "method", "evidence"} <= set(rows[0])


def test_infer_subcommand(tmp_path, capsys):
    fixture = tmp_path / "fixture.json"
    fixture.write_text(json.dumps({
        "sequence": ["<think>brief reasoning</think>The answer is 42."]
    }))
    providers = tmp_path / "providers.json"
    providers.write_text(json.dumps({
        "providers": [{"provider_id": "mock", "type": "mock", "fixture": str(fixture)}]
    }))
    prompt = tmp_path / "prompt.txt"
    prompt.write_text("What is the answer?")
    code = main([
        "infer", "--workspace", str(tmp_path / "ws"), "--providers", str(providers),
        "--endpoint", "mock", "--model", "m", "--prompt-file", str(prompt),
        "--policy", "min=0,max=inf,waits=0",
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["final_text"] == "<think>brief reasoning</think>The answer is 42."


def test_eval_subcommand_with_assembled_items(demo_run, tmp_path, capsys):
    corpus_dir, ws_dir = demo_run
    items_path = ws_dir / "eval_items" / "test_knowledge.jsonl"
    assert items_path.exists()
    fixture = tmp_path / "fixture.json"
    fixture.write_text(json.dumps({
        "default": "<think>checking the options</think>Answer: B"
    }))
    providers = tmp_path / "providers.json"
    providers.write_text(json.dumps({
        "providers": [{"provider_id": "mock", "type": "mock", "fixture": str(fixture)}]
    }))
    report_dir = tmp_path / "report"
    code = main([
        "eval", "--workspace", str(tmp_path / "ws"), "--providers", str(providers),
        "--provider", "mock", "--model", "m", "--set", str(items_path),
        "--k", "2", "--no-budget-forcing", "--report", str(report_dir),
        "--image-base", str(ws_dir),
    ])
    assert code == 0
    report = json.loads((report_dir / "report.json").read_text())
    assert report["k"] == 2
    assert 0.0 <= report["overall_pass_at_1"] <= 1.0
    assert (report_dir / "transcripts.jsonl").exists()


def test_eval_sweep_writes_curve(demo_run, tmp_path):
    _, ws_dir = demo_run
    items_path = ws_dir / "eval_items" / "test_knowledge.jsonl"
    fixture = tmp_path / "fixture.json"
    fixture.write_text(json.dumps({
        "default": "<think>think think</think>Answer: A"
    }))
    providers = tmp_path / "providers.json"
    providers.write_text(json.dumps({
        "providers": [{"provider_id": "mock", "type": "mock", "fixture": str(fixture)}]
    }))
    budgets = tmp_path / "budgets.json"
    budgets.write_text(json.dumps([50, 100, 150]))
    report_dir = tmp_path / "sweep"
    code = main([
        "eval", "--workspace", str(tmp_path / "ws"), "--providers", str(providers),
        "--provider", "mock", "--model", "m", "--set", str(items_path),
        "--k", "1", "--sweep", str(budgets), "--report", str(report_dir),
        "--image-base", str(ws_dir),
    ])
    assert code == 0
    with open(report_dir / "curve.csv") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["budget"]) for r in rows] == [50, 100, 150]
