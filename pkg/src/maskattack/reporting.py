"""Run reports on disk, comparison tables, and mask overlays.

Result file (``report.json``), schema version 1::

    schema_version  int
    run_id          str
    task            {"kind": str, "parameters": {...}}
    config          merged run configuration (free-form mapping)
    config_digest   sha256 of the canonical config
    records         list of EvalRecord mappings
    aggregates      {"miou", "success_rate", "mean_linf", "count"}
    extra           task-specific scalars
    env             {"wall_time": float, "python": str, "torch": str, ...}
    content_digest  sha256 over everything above except env

``records.csv`` holds the same records with columns in ``CSV_COLUMNS``
order. ``env`` is excluded from the digest so reruns compare equal.

Overlays tint mask pixels with ``TINT`` at ``TINT_ALPHA`` and draw a green
plus-shaped marker of radius ``MARKER_RADIUS`` at the prompt.
"""

from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .core import BinaryMask, Image, PointPrompt, ValidationError, digest_json
from .metrics import EvalRecord

SCHEMA_VERSION = 1
REQUIRED_KEYS = ("schema_version", "run_id", "task", "config", "config_digest", "records",
                 "aggregates", "content_digest")
RECORD_KEYS = ("image_id", "prompt", "iou_clean_adv", "area_clean", "area_adv", "success",
               "iou_target_adv", "linf")
CSV_COLUMNS = ("image_id", "prompt_row", "prompt_col", "iou_clean_adv", "iou_target_adv",
               "area_clean", "area_adv", "success", "linf")

TINT = np.array([255, 0, 0], dtype=np.float64)
TINT_ALPHA = 0.5
MARKER = (0, 255, 0)
MARKER_RADIUS = 2


class SchemaError(ValidationError):
    pass


class DigestMismatch(ValidationError):
    pass


def aggregate(records: Sequence[EvalRecord]) -> dict:
    if not records:
        return {"miou": float("nan"), "success_rate": float("nan"), "mean_linf": float("nan"), "count": 0}
    return {
        "miou": float(np.mean([r.iou_clean_adv for r in records])),
        "success_rate": float(np.mean([r.success for r in records])),
        "mean_linf": float(np.mean([r.linf for r in records])),
        "count": len(records),
    }


@dataclass
class RunReport:
    run_id: str
    task: dict
    config: dict
    records: list[EvalRecord]
    aggregates: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = aggregate(self.records)

    @property
    def config_digest(self) -> str:
        return digest_json(self.config)

    @property
    def task_kind(self) -> str:
        return self.task["kind"]

    @property
    def miou(self) -> float:
        return self.aggregates["miou"]

    def payload(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "task": self.task,
            "config": self.config,
            "config_digest": self.config_digest,
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
            "extra": self.extra,
        }

    def digest(self) -> str:
        return digest_json(self.payload())

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return self.payload() == other.payload()


def make_report(outcome, config: dict, run_id: str | None = None, wall_time: float = 0.0) -> RunReport:
    import torch

    digest = digest_json(config)
    return RunReport(
        run_id=run_id or f"{outcome.task.kind}-{digest[:12]}",
        task=outcome.task.to_dict(),
        config=config,
        records=list(outcome.records),
        extra={**outcome.extra, "skipped": outcome.skipped, "failures": list(outcome.failures)},
        env={"wall_time": wall_time, "python": platform.python_version(), "torch": torch.__version__,
             "numpy": np.__version__},
    )


def _csv_text(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.image_id, r.prompt.row, r.prompt.col, repr(r.iou_clean_adv),
                         "" if r.iou_target_adv is None else repr(r.iou_target_adv),
                         r.area_clean, r.area_adv, int(r.success), repr(r.linf)])
    return buf.getvalue()


def persist(report: RunReport, path) -> Path:
    """Write ``report.json`` and ``records.csv`` into directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    doc = report.payload()
    doc["content_digest"] = report.digest()
    doc["env"] = report.env
    (root / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    (root / "records.csv").write_text(_csv_text(report.records))
    return root / "report.json"


def load_report(path) -> RunReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    doc = json.loads(path.read_text())
    for key in REQUIRED_KEYS:
        if key not in doc:
            raise SchemaError(f"report {path} is missing field {key!r}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']}")
    for i, rec in enumerate(doc["records"]):
        for key in RECORD_KEYS:
            if key not in rec:
                raise SchemaError(f"record {i} is missing field {key!r}")
    records = [EvalRecord.from_dict(r) for r in doc["records"]]
    report = RunReport(doc["run_id"], doc["task"], doc["config"], records,
                       dict(doc["aggregates"]), doc.get("extra", {}), doc.get("env", {}))
    if report.digest() != doc["content_digest"]:
        raise DigestMismatch(f"content digest mismatch in {path}")
    fresh = aggregate(records)
    for key, value in fresh.items():
        stored = report.aggregates.get(key)
        if stored is None:
            raise SchemaError(f"aggregates missing {key!r}")
        if not (np.isnan(value) and np.isnan(stored)) and abs(stored - value) > 1e-12:
            raise DigestMismatch(f"aggregate {key} = {stored} disagrees with records ({value})")
    return report


# ---------------------------------------------------------------------------
# tables

@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [list(self.columns)] + [
            [f"{v:.6f}" if isinstance(v, float) else str(v) for v in row] for row in self.rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(self.columns))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _label(report: RunReport) -> str:
    cfg = report.config.get("attack", report.config)
    params = report.task.get("parameters", {})
    if params.get("attack") == "none":
        return "no-attack"
    parts = [cfg.get("attacker", "?")]
    if cfg.get("attacker") == "pgd":
        parts[0] = f"pgd-{cfg.get('iterations')}"
    loss = cfg.get("loss", {}).get("kind") if isinstance(cfg.get("loss"), dict) else None
    if loss:
        parts.append(loss)
    if "K" in params:
        parts.append(f"K={params['K']}")
    if "epsilon" in cfg:
        parts.append(f"eps={cfg['epsilon'] * 255:.3g}/255")
    return " ".join(parts)


def tabulate(reports: Sequence[RunReport]) -> Table:
    if not reports:
        raise ValidationError("nothing to tabulate")
    kinds = {r.task_kind for r in reports}
    if len(kinds) > 1:
        raise ValidationError(f"cannot tabulate mixed task kinds {sorted(kinds)}")
    ordered = list(reports)
    if all("K" in r.task.get("parameters", {}) for r in ordered):
        ordered.sort(key=lambda r: int(r.task["parameters"]["K"]))
    rows = [(_label(r), r.aggregates["miou"], r.aggregates["success_rate"], r.aggregates["count"])
            for r in ordered]
    return Table(("setting", "miou", "success_rate", "pairs"), rows)


# ---------------------------------------------------------------------------
# overlays

def overlay_array(image: Image, mask: BinaryMask, prompt: PointPrompt | None) -> np.ndarray:
    if mask.shape != image.shape:
        raise ValidationError(f"mask {mask.shape} does not match image {image.shape}")
    base = image.data
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    rgb = np.round(base * 255.0)
    m = mask.data
    rgb[m] = np.round((1 - TINT_ALPHA) * rgb[m] + TINT_ALPHA * TINT)
    out = rgb.astype(np.uint8)
    if prompt is not None:
        prompt.check_bounds(image.shape)
        h, w = image.shape
        for d in range(-MARKER_RADIUS, MARKER_RADIUS + 1):
            for r, c in ((prompt.row + d, prompt.col), (prompt.row, prompt.col + d)):
                if 0 <= r < h and 0 <= c < w:
                    out[r, c] = MARKER
    return out


def render_overlay(image: Image, mask: BinaryMask, prompt: PointPrompt | None, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(overlay_array(image, mask, prompt), mode="RGB").save(path, format="PNG")
    return path
