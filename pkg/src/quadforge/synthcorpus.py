"""Bundled synthetic corpus: scanned-style PDFs, a question bank, and the
scripted provider fixture that drives them through the whole pipeline offline.

The PDFs mimic OCR'd book scans: each page is one embedded JPEG (light
background with dark scan-like figure blobs at known coordinates) plus an
invisible text layer. The fixture scripts every model call the pipeline will
make: grounding boxes per page, generation triplets per chunk/template, judge
scores, and solver verdicts for the bank.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw
from reportlab.lib.pagesizes import letter
from reportlab.pdfgen import canvas as rl_canvas

from .pipeline import PipelineConfig, SourceSpec
from .qagen import BankSchema
from .workspace import hash_file

DEMO_DPI = 144
PROVIDER_ID = "mock-main"
MODEL_ID = "mock-model"


@dataclass
class SynthPage:
    paragraphs: list[str]
    figures: list[tuple[int, int, int, int]] = field(default_factory=list)
    seed: int = 0


def _draw_figure(draw: ImageDraw.ImageDraw, box: tuple[int, int, int, int], rng: random.Random):
    x0, y0, x1, y1 = box
    draw.rectangle([x0, y0, x1, y1], fill=(16, 16, 20))
    cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
    rx, ry = (x1 - x0) // 3, (y1 - y0) // 3
    for step in range(4, 0, -1):
        shade = 40 + step * 35
        draw.ellipse(
            [cx - rx * step // 4, cy - ry * step // 4, cx + rx * step // 4, cy + ry * step // 4],
            fill=(shade, shade, shade),
        )
    for _ in range(160):  # speckle
        px = rng.randint(x0 + 4, x1 - 4)
        py = rng.randint(y0 + 4, y1 - 4)
        g = rng.randint(30, 200)
        draw.point((px, py), fill=(g, g, g))


def _page_image(page: SynthPage, dpi: int) -> Image.Image:
    width = round(8.5 * dpi)
    height = round(11 * dpi)
    img = Image.new("RGB", (width, height), (247, 246, 242))
    draw = ImageDraw.Draw(img)
    rng = random.Random(page.seed)
    for i in range(0, height, 40):  # faint ruling so blank regions are not flat
        draw.line([(40, i), (width - 40, i)], fill=(240, 239, 235))
    for box in page.figures:
        _draw_figure(draw, box, rng)
    return img


def build_scanned_pdf(path: Path, pages: list[SynthPage], dpi: int = DEMO_DPI) -> Path:
    """Write an image-per-page PDF with an invisible OCR-style text layer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c = rl_canvas.Canvas(str(path), pagesize=letter)
    for idx, page in enumerate(pages):
        jpeg = path.with_suffix(f".p{idx}.jpg")
        _page_image(page, dpi).save(jpeg, "JPEG", quality=90)
        c.drawImage(str(jpeg), 0, 0, width=letter[0], height=letter[1])
        text = c.beginText(36, 740)
        text.setTextRenderMode(3)  # invisible, like an OCR layer
        for para in page.paragraphs:
            text.textLine(para)
        c.drawText(text)
        c.showPage()
    c.save()
    for idx in range(len(pages)):
        path.with_suffix(f".p{idx}.jpg").unlink(missing_ok=True)
    return path


# --- demo content ---

_TRAIN_PAGES = [
    SynthPage(
        paragraphs=[
            "Normal hepatic parenchyma shows a homogeneous medium-level echo "
            "pattern, and the hepatic portal vein runs with brightly echogenic "
            "walls that distinguish it from the thin-walled hepatic veins.",
            "Doppler interrogation of the hepatic artery demonstrates a "
            "low-resistance waveform, while focal fatty sparing near the "
            "gallbladder fossa must not be mistaken for a true hypoechoic mass.",
        ],
        figures=[(150, 300, 650, 800), (700, 900, 1100, 1300)],
        seed=11,
    ),
    SynthPage(
        paragraphs=[
            "The thyroid isthmus is measured in the transverse plane and "
            "normally stays below five millimeters in anteroposterior diameter "
            "in adults examined with a high-frequency linear transducer.",
            "Microcalcifications inside a solid nodule raise suspicion, whereas "
            "a spongiform composition of tiny cystic spaces is regarded as a "
            "strongly benign pattern in risk stratification systems.",
        ],
        figures=[(200, 400, 900, 1000)],
        seed=22,
    ),
    SynthPage(
        paragraphs=[
            "Assessment of breast lesion margins separates circumscribed rims "
            "from angular, indistinct, or spiculated contours, and margin "
            "analysis carries the greatest weight in lesion categorization.",
            "Posterior acoustic enhancement behind a simple cyst reflects the "
            "unimpeded sound transmission through fluid, while dense shadowing "
            "suggests a fibrotic or calcified process within the breast.",
        ],
        figures=[],
        seed=33,
    ),
]

_EVAL_PAGES = [
    SynthPage(
        paragraphs=[
            "The renal cortex is normally slightly hypoechoic relative to the "
            "adjacent liver in adults, and a cortex brighter than the liver "
            "signals parenchymal disease until proven otherwise.",
            "Corticomedullary differentiation fades with chronic injury, and "
            "kidney length under nine centimeters in an adult usually marks "
            "an irreversible stage of renal atrophy.",
        ],
        figures=[(150, 350, 750, 950)],
        seed=44,
    ),
    SynthPage(
        paragraphs=[
            "The gallbladder wall measures under three millimeters in the "
            "fasting state, and wall thickening combined with a sonographic "
            "Murphy sign supports acute cholecystitis at the bedside.",
            "Gallstones cast clean posterior shadows and roll with positional "
            "maneuvers, which separates them from polyps fixed to the wall.",
        ],
        figures=[(250, 450, 850, 1050)],
        seed=55,
    ),
]

_BANK_ROWS = [
    {
        "question": "Which transducer is preferred for imaging superficial structures?",
        "option_a": "Linear array",
        "option_b": "Phased array",
        "option_c": "Curved array",
        "option_d": "Pencil probe",
        "key": "A",
        "category": "thyroid",
    },
    {
        "question": "Which artifact appears behind a simple fluid-filled cyst?",
        "option_a": "Posterior shadowing",
        "option_b": "Posterior enhancement",
        "option_c": "Ring-down artifact",
        "option_d": "Mirror image",
        "key": "B",
        "category": "breast",
    },
    {
        "question": "Raising transducer frequency primarily improves which property?",
        "option_a": "Penetration depth",
        "option_b": "Frame rate",
        "option_c": "Axial resolution",
        "option_d": "Doppler angle",
        "key": "C",
        "category": "other",
    },
]

_SOLVER_REPLIES = {
    "Which transducer is preferred for imaging superficial structures?": (
        "High-frequency linear arrays trade penetration for resolution, which is "
        "exactly what superficial structures need, unlike curved or phased arrays "
        "built for depth.\nAnswer: A"
    ),
    "Which artifact appears behind a simple fluid-filled cyst?": (
        "Fluid attenuates almost nothing, so the region behind a simple cyst "
        "receives more sound than its neighbors and appears brighter, which is "
        "posterior enhancement.\nAnswer: B"
    ),
    "Raising transducer frequency primarily improves which property?": (
        "Higher frequency shortens the pulse, and a shorter pulse separates "
        "reflectors along the beam axis more finely, improving axial resolution.\n"
        "Answer: C"
    ),
}


def _boxes_json(boxes: list[tuple[int, int, int, int]], labels: list[str], captions: list[str]) -> str:
    return json.dumps(
        [
            {"bbox_2d": list(b), "label": l, "caption": c}
            for b, l, c in zip(boxes, labels, captions)
        ]
    )


def _grounding_rules(doc_id: str, pages: list[SynthPage], captions: dict[int, list[str]]) -> list[dict]:
    rules = []
    for idx, page in enumerate(pages):
        if page.figures:
            response = "```json\n" + _boxes_json(
                page.figures,
                ["ultrasound image"] * len(page.figures),
                captions.get(idx, ["scan region"] * len(page.figures)),
            ) + "\n```"
        else:
            response = "No figures found on this page."
        rules.append(
            {
                "contains": "Locate every figure",
                "image_suffix": f"{doc_id}/{idx}.png",
                "response": response,
            }
        )
    return rules


# per-page generation payloads, keyed by a phrase unique to that page's text
_TRAIN_TEXT_MCQ = {
    "hepatic": [
        {
            "question": "Which hepatic vessel is recognized by its brightly echogenic walls?",
            "options": ["Portal vein", "Hepatic vein", "Common bile duct", "Splenic artery"],
            "gold": "A",
            "think": "The material notes the portal vein runs with brightly echogenic walls, while hepatic veins are thin-walled, so the distinguishing vessel is the portal vein.",
            "answer": "A. Portal vein",
        },
        {
            "question": "What waveform does the hepatic artery show on Doppler interrogation?",
            "options": ["High-resistance", "Low-resistance", "Reversed", "Absent"],
            "gold": "B",
            "think": "Doppler interrogation of the hepatic artery demonstrates a low-resistance waveform per the passage, so option B follows directly.",
            "answer": "B. Low-resistance",
        },
    ],
    "thyroid isthmus": [
        {
            "question": "What is the normal upper limit for thyroid isthmus thickness in adults?",
            "options": ["Two millimeters", "Five millimeters", "Nine millimeters", "Twelve millimeters"],
            "gold": "B",
            "think": "The passage gives five millimeters as the normal anteroposterior ceiling for the isthmus in adults, measured transversely.",
            "answer": "B. Five millimeters",
        },
        {
            "question": "Which nodule composition is regarded as strongly benign?",
            "options": ["Solid with microcalcifications", "Spongiform", "Taller-than-wide", "Rim-calcified"],
            "gold": "B",
            "think": "Spongiform composition of tiny cystic spaces is described as a strongly benign pattern, unlike microcalcified solid nodules.",
            "answer": "B. Spongiform",
        },
    ],
    "breast lesion margins": [
        {
            "question": "Which feature carries the greatest weight when categorizing a breast lesion?",
            "options": ["Margin analysis", "Lesion depth", "Patient age", "Vascularity"],
            "gold": "A",
            "think": "Margin analysis is stated to carry the greatest weight in lesion categorization, separating circumscribed from spiculated contours.",
            "answer": "A. Margin analysis",
        },
        {
            "question": "What does posterior acoustic enhancement behind a lesion indicate?",
            "options": ["Calcification", "Fibrosis", "Fluid content", "Air"],
            "gold": "C",
            "think": "Enhancement reflects unimpeded transmission through fluid, as behind a simple cyst, so fluid content is the indicated reading.",
            "answer": "C. Fluid content",
        },
    ],
}

_TRAIN_TEXT_DIALOGUE = {
    "hepatic": [
        {
            "question": "How does normal liver tissue appear on ultrasound?",
            "answer": "It appears as a homogeneous medium-level echo pattern throughout the parenchyma.",
        },
        {
            "question": "What benign finding near the gallbladder fossa can mimic a mass?",
            "answer": "Focal fatty sparing there can be mistaken for a true hypoechoic lesion.",
        },
    ],
    "thyroid isthmus": [
        {
            "question": "In which plane is the thyroid isthmus measured?",
            "answer": "It is measured in the transverse plane with a high-frequency linear transducer.",
        },
        {
            "question": "Why do microcalcifications in a solid nodule matter?",
            "answer": "They raise suspicion for malignancy in risk stratification.",
        },
    ],
    "breast lesion margins": [
        {
            "question": "Which margin contours are considered suspicious in the breast?",
            "answer": "Angular, indistinct, or spiculated contours are the suspicious ones.",
        },
        {
            "question": "What does dense posterior shadowing behind a breast finding suggest?",
            "answer": "It suggests a fibrotic or calcified process.",
        },
    ],
}

_EVAL_TEXT_MCQ = {
    "renal cortex": [
        {
            "question": "Relative to the adjacent liver, how echogenic is a normal adult renal cortex?",
            "options": ["Markedly brighter", "Slightly hypoechoic", "Identical", "Anechoic"],
            "gold": "B",
            "think": "The text places the normal cortex slightly below liver echogenicity, and a brighter cortex signals parenchymal disease.",
            "answer": "B. Slightly hypoechoic",
        },
        {
            "question": "An adult kidney measuring under nine centimeters usually indicates what?",
            "options": ["Normal variant", "Acute swelling", "Irreversible atrophy", "Duplication"],
            "gold": "C",
            "think": "Length under nine centimeters is described as marking an irreversible stage of renal atrophy in adults.",
            "answer": "C. Irreversible atrophy",
        },
    ],
    "gallbladder wall": [
        {
            "question": "Which pair of findings supports acute cholecystitis at the bedside?",
            "options": [
                "Thin wall and empty lumen",
                "Wall thickening and sonographic Murphy sign",
                "Polyps and pericholecystic air",
                "Contracted lumen alone",
            ],
            "gold": "B",
            "think": "The passage pairs wall thickening with a sonographic Murphy sign as bedside support for acute cholecystitis.",
            "answer": "B. Wall thickening and sonographic Murphy sign",
        },
        {
            "question": "What behavior separates gallstones from wall polyps?",
            "options": ["Color flow", "Mobility with position", "Wall origin", "Comet-tail artifact"],
            "gold": "B",
            "think": "Stones roll with positional maneuvers and shadow cleanly, while polyps stay fixed to the wall, so mobility separates them.",
            "answer": "B. Mobility with position",
        },
    ],
}

_TRAIN_GROUNDED_DIAGNOSTIC = {
    "0.png": [
        {
            "question": "In the first marked scan region, what does the rounded hypoechoic focus most likely represent?",
            "think": "The focus sits within otherwise uniform parenchyma and has smooth rounded borders, favoring a simple focal lesion over diffuse disease.",
            "answer": "A well-defined focal liver lesion.",
        },
        {
            "question": "What does the second marked region's waveform pattern suggest about arterial resistance?",
            "think": "The traced envelope keeps persistent diastolic flow above baseline, the signature of a low-resistance arterial bed.",
            "answer": "Low arterial resistance.",
        },
    ],
    "1.png": [
        {
            "question": "Does the marked nodule's internal texture favor a benign or suspicious reading?",
            "think": "The region shows clustered tiny cystic spaces without a dominant solid component, the spongiform pattern regarded as strongly benign.",
            "answer": "A benign, spongiform-pattern nodule.",
        }
    ],
}

_TRAIN_GROUNDED_DIALOGUE = {
    "0.png": [
        {
            "question": "What organ is shown in the first marked region?",
            "answer": "A liver scan centered on the portal region.",
        },
        {
            "question": "What kind of display fills the second marked region?",
            "answer": "A spectral Doppler waveform strip.",
        },
    ],
    "1.png": [
        {
            "question": "What structure is outlined in the marked region?",
            "answer": "A thyroid nodule in transverse section.",
        }
    ],
}

_EVAL_GROUNDED_MCQ = {
    "0.png": [
        {
            "question": "The marked renal image shows a cortex brighter than the liver; what does this imply?",
            "options": ["Normal kidney", "Parenchymal disease", "Simple cyst", "Duplex collecting system"],
            "gold": "B",
            "think": "A cortex exceeding liver echogenicity is abnormal by the stated rule, pointing to parenchymal disease rather than a normal kidney.",
            "answer": "B. Parenchymal disease",
        }
    ],
    "1.png": [
        {
            "question": "The marked gallbladder image shows a mobile shadowing focus; what is it?",
            "options": ["Wall polyp", "Gallstone", "Adenomyomatosis", "Sludge ball"],
            "gold": "B",
            "think": "Clean posterior shadowing plus mobility with position is the stone signature; polyps are fixed and sludge rarely shadows.",
            "answer": "B. Gallstone",
        }
    ],
}

_GROUNDING_CAPTIONS = {
    "train": {
        0: ["liver scan with portal structures", "hepatic artery doppler strip"],
        1: ["thyroid nodule in transverse view"],
    },
    "eval": {
        0: ["renal cortex comparison view"],
        1: ["gallbladder with dependent focus"],
    },
}


@dataclass
class DemoCorpus:
    root: Path
    train_pdf: Path
    eval_pdf: Path
    bank_csv: Path
    train_doc_id: str
    eval_doc_id: str
    fixture: dict

    def specs(self) -> list[SourceSpec]:
        return [
            SourceSpec(path=str(self.train_pdf), kind="book"),
            SourceSpec(path=str(self.eval_pdf), kind="book", eval_pool=True),
            SourceSpec(
                path=str(self.bank_csv),
                kind="question_bank",
                bank_schema=BankSchema(
                    question="question",
                    options=["option_a", "option_b", "option_c", "option_d"],
                    gold="key",
                    category="category",
                ),
            ),
        ]

    def config(self) -> PipelineConfig:
        return PipelineConfig(
            provider_id=PROVIDER_ID,
            model_id=MODEL_ID,
            triplets_per_chunk=2,
            review="auto",
        )

    def fixture_path(self) -> Path:
        path = self.root / "fixture.json"
        if not path.exists():
            path.write_text(
                json.dumps(self.fixture, ensure_ascii=False, indent=2), encoding="utf-8"
            )
        return path


def _generation_rules(
    marker: str, payloads: dict[str, list[dict]], *, doc_id: str = "", by_image: bool = False
) -> list[dict]:
    rules = []
    for key, objs in payloads.items():
        rule: dict = {"response": json.dumps(objs, ensure_ascii=False)}
        if by_image:
            rule["contains"] = marker
            rule["image_suffix"] = f"{doc_id}/{key}"
        else:
            rule["contains"] = [marker, key]
        rules.append(rule)
    return rules


def build_demo_corpus(root: str | Path, dpi: int = DEMO_DPI) -> DemoCorpus:
    """Write the 5-page synthetic corpus (3-page train book, 2-page eval book,
    3-row question bank) plus the scripted provider fixture covering every
    call the pipeline makes over it."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train_pdf = build_scanned_pdf(root / "train_book.pdf", _TRAIN_PAGES, dpi)
    eval_pdf = build_scanned_pdf(root / "eval_book.pdf", _EVAL_PAGES, dpi)
    bank_csv = root / "bank.csv"
    with open(bank_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(_BANK_ROWS[0].keys()))
        writer.writeheader()
        writer.writerows(_BANK_ROWS)

    train_doc_id = hash_file(train_pdf)[:16]
    eval_doc_id = hash_file(eval_pdf)[:16]

    rules: list[dict] = []
    rules += _grounding_rules(train_doc_id, _TRAIN_PAGES, _GROUNDING_CAPTIONS["train"])
    rules += _grounding_rules(eval_doc_id, _EVAL_PAGES, _GROUNDING_CAPTIONS["eval"])
    rules.append(
        {
            "contains": "Score the record",
            "response": json.dumps(
                {"groundedness": 5, "image_text_match": 5, "rationale": "Fully supported."}
            ),
        }
    )
    rules += _generation_rules("multiple-choice questions from this material", _TRAIN_TEXT_MCQ)
    rules += _generation_rules("multiple-choice questions from this material", _EVAL_TEXT_MCQ)
    rules += _generation_rules("factual question-answer pairs", _TRAIN_TEXT_DIALOGUE)
    rules += _generation_rules(
        "one diagnostic question about the figure",
        _TRAIN_GROUNDED_DIAGNOSTIC,
        doc_id=train_doc_id,
        by_image=True,
    )
    rules += _generation_rules(
        "one factual question about the figure",
        _TRAIN_GROUNDED_DIALOGUE,
        doc_id=train_doc_id,
        by_image=True,
    )
    rules += _generation_rules(
        "one single-choice question about the figure",
        _EVAL_GROUNDED_MCQ,
        doc_id=eval_doc_id,
        by_image=True,
    )
    for question, reply in _SOLVER_REPLIES.items():
        rules.append({"contains": question, "response": reply})
    # answers for eval-harness runs over the assembled test splits
    for payloads in (_EVAL_TEXT_MCQ, _EVAL_GROUNDED_MCQ):
        for objs in payloads.values():
            for obj in objs:
                rules.append(
                    {
                        "contains": obj["question"],
                        "response": f"<think>{obj['think']}</think>Answer: {obj['gold']}",
                    }
                )

    fixture = {"rules": rules}
    return DemoCorpus(
        root=root,
        train_pdf=train_pdf,
        eval_pdf=eval_pdf,
        bank_csv=bank_csv,
        train_doc_id=train_doc_id,
        eval_doc_id=eval_doc_id,
        fixture=fixture,
    )
