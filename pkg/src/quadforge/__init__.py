"""quadforge: document corpora in, SFT quadruplets out.

Pipeline stages: ingest (rasterize + text), grounding (figure boxes + crops),
qagen (prompted generation into QA records), curate (quality / professionalism
/ diversity cleaning plus human review), dedup (train/test decontamination),
dataset (split assignment and JSONL emission), with a budget-forcing
inference controller and a pass@1 evaluation harness on the side.
"""

__version__ = "0.1.0"
