"""Report aggregation and rendering: per-sample rows in, one
:class:`MetricsReport` out, serialized as JSON + CSV with a fixed,
versioned column order, plus a plain-text comparison table.

Every report header carries the protocol decisions that the source
material leaves open, so numbers are never read without them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

METRICS_SCHEMA_VERSION = "1"

PROTOCOL_NOTES = [
    "location label = grid cell of the binary-mask centroid; a centroid exactly on a cell boundary resolves to the lower index",
    "within-1 = Chebyshev grid distance <= 1",
    "unparsed location answers count as wrong and score Manhattan distance 4",
    "rouge_l = LCS F1 over lowercase whitespace tokens",
    "psnr is capped at 99.0 dB when MSE = 0",
    "efd_mask is a frozen-expert feature cosine-distance proxy, not a learned perceptual metric",
]

# Fixed CSV column order (schema-versioned; do not reorder within a version).
REPORT_CSV_COLUMNS = [
    "id",
    "loc_correct",
    "loc_within1",
    "loc_manhattan",
    "decision_pred",
    "decision_gt",
    "defect_type_correct",
    "rouge_l",
    "dice",
    "iou",
    "precision",
    "recall",
    "psnr_full",
    "psnr_bg",
    "psnr_mask",
    "ssim_mask",
    "efd_mask",
]

_SEG_KEYS = ["dice", "iou", "precision", "recall"]
_GEN_KEYS = ["psnr_full", "psnr_bg", "psnr_mask", "ssim_mask", "efd_mask"]

_RATE_KEYS = {
    "dice", "iou", "precision", "recall",
    "loc_acc", "within1", "decision_balanced_acc", "defect_type_acc", "rouge_l",
}


@dataclass
class MetricsReport:
    """Aggregated metrics for one evaluation run, with per-sample rows."""

    mode: str
    segmentation: dict[str, float] = field(default_factory=dict)
    understanding: dict[str, float] = field(default_factory=dict)
    generation: dict[str, float] = field(default_factory=dict)
    per_sample: list[dict[str, Any]] = field(default_factory=list)
    flags: dict[str, Any] = field(default_factory=dict)
    schema_version: str = METRICS_SCHEMA_VERSION
    notes: list[str] = field(default_factory=lambda: list(PROTOCOL_NOTES))

    def validate(self) -> None:
        for group in (self.segmentation, self.understanding, self.generation):
            for key, value in group.items():
                if value is None:
                    continue
                if key in _RATE_KEYS and not (0.0 <= value <= 1.0):
                    raise ValueError(f"rate metric {key}={value} outside [0, 1]")
                if key == "manhattan" and value < 0.0:
                    raise ValueError(f"manhattan={value} negative")
                if key.startswith("psnr_") and value > 99.0:
                    raise ValueError(f"{key}={value} exceeds the 99.0 cap")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "notes": self.notes,
            "segmentation": self.segmentation,
            "understanding": self.understanding,
            "generation": self.generation,
            "flags": self.flags,
            "per_sample": self.per_sample,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "MetricsReport":
        return cls(
            mode=raw["mode"],
            segmentation=raw.get("segmentation", {}),
            understanding=raw.get("understanding", {}),
            generation=raw.get("generation", {}),
            per_sample=raw.get("per_sample", []),
            flags=raw.get("flags", {}),
            schema_version=raw.get("schema_version", METRICS_SCHEMA_VERSION),
            notes=raw.get("notes", list(PROTOCOL_NOTES)),
        )

    def save(self, path: str | Path) -> Path:
        """Write the JSON report and its per-sample CSV next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        csv_path = path.with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=REPORT_CSV_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in self.per_sample:
                writer.writerow({k: row.get(k, "") for k in REPORT_CSV_COLUMNS})
        return path


def load_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _mean(rows: list[dict[str, Any]], key: str) -> float | None:
    values = [r[key] for r in rows if r.get(key) is not None]
    if not values:
        return None
    return float(sum(values) / len(values))


def aggregate_report(per_sample_rows: list[dict[str, Any]], mode: str) -> MetricsReport:
    """Aggregate per-sample rows into one report.

    Mean-able columns are averaged over the rows where they are present;
    decision balanced accuracy is recomputed from the per-sample
    prediction/label columns.
    """
    if not per_sample_rows:
        raise ValueError("no per-sample rows to aggregate")
    report = MetricsReport(mode=mode, per_sample=list(per_sample_rows))

    seg = {k: _mean(per_sample_rows, k) for k in _SEG_KEYS}
    report.segmentation = {k: v for k, v in seg.items() if v is not None}

    und: dict[str, float] = {}
    for out_key, row_key in (
        ("loc_acc", "loc_correct"),
        ("within1", "loc_within1"),
        ("manhattan", "loc_manhattan"),
        ("defect_type_acc", "defect_type_correct"),
        ("rouge_l", "rouge_l"),
    ):
        value = _mean(per_sample_rows, row_key)
        if value is not None:
            und[out_key] = value
    decision_rows = [
        r for r in per_sample_rows
        if r.get("decision_pred") is not None and r.get("decision_gt") is not None
    ]
    if decision_rows:
        from .text import balanced_accuracy

        ba = balanced_accuracy(
            [bool(r["decision_pred"]) for r in decision_rows],
            [bool(r["decision_gt"]) for r in decision_rows],
        )
        und["decision_balanced_acc"] = float(ba["balanced_acc"])
        if ba["partial"]:
            report.flags["decision_ba_partial"] = True
    report.understanding = und

    gen = {k: _mean(per_sample_rows, k) for k in _GEN_KEYS}
    report.generation = {k: v for k, v in gen.items() if v is not None}
    n_capped = sum(
        1 for r in per_sample_rows for k in ("psnr_full", "psnr_bg", "psnr_mask")
        if r.get(f"capped_{k[5:]}")
    )
    if n_capped:
        report.flags["psnr_capped_rows"] = n_capped

    report.validate()
    return report


def _fmt(value: float | None, pct: bool) -> str:
    if value is None:
        return "   -  "
    if pct:
        return f"{100.0 * value:6.2f}"
    return f"{value:6.2f}"


def render_table(reports: list[MetricsReport], title: str = "") -> str:
    """Plain-text comparison table, one row per report.

    Rate metrics are rendered x100; PSNR in dB; Manhattan as a bare mean.
    """
    columns: list[tuple[str, str, str, bool]] = [
        ("seg", "dice", "Dice", True),
        ("seg", "iou", "IoU", True),
        ("seg", "precision", "Prec", True),
        ("seg", "recall", "Rec", True),
        ("und", "loc_acc", "LocAcc", True),
        ("und", "within1", "Within1", True),
        ("und", "manhattan", "Manh", False),
        ("und", "decision_balanced_acc", "DecBA", True),
        ("und", "defect_type_acc", "TypeAcc", True),
        ("und", "rouge_l", "RougeL", True),
        ("gen", "psnr_full", "PSNRfull", False),
        ("gen", "psnr_bg", "PSNRbg", False),
        ("gen", "psnr_mask", "PSNRmask", False),
        ("gen", "ssim_mask", "SSIMmask", False),
        ("gen", "efd_mask", "EFDmask", False),
    ]
    used = [
        c for c in columns
        if any(_group(r, c[0]).get(c[1]) is not None for r in reports)
    ]
    lines = []
    if title:
        lines.append(title)
    for note in PROTOCOL_NOTES:
        lines.append(f"# {note}")
    header = f"{'mode':<16}" + "".join(f"{label:>9}" for _, _, label, _ in used)
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        row = f"{r.mode:<16}"
        for group, key, _, pct in used:
            row += f"{_fmt(_group(r, group).get(key), pct):>9}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def _group(report: MetricsReport, name: str) -> dict[str, float]:
    return {"seg": report.segmentation, "und": report.understanding, "gen": report.generation}[name]
