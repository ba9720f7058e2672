"""IoU, mIoU and per-pair evaluation records."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import BinaryMask, PointPrompt, ValidationError

REMOVAL_IOU = 0.1
REMOVAL_AREA_RATIO = 0.1
TARGET_IOU = 0.5
ENLARGE_RATIO = 2.0

TARGETED_KINDS = frozenset({"shift_duplicate", "shift_translate", "flip_duplicate", "flip_replace",
                            "target_shape", "target_other_prompt", "target_other_image"})
REMOVAL_KINDS = frozenset({"removal", "cross_prompt", "cross_task"})


@dataclass(frozen=True)
class Thresholds:
    """Success thresholds. These are toolkit conventions, not published values."""

    removal_iou: float = REMOVAL_IOU
    removal_area_ratio: float = REMOVAL_AREA_RATIO
    target_iou: float = TARGET_IOU
    enlarge_ratio: float = ENLARGE_RATIO


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    prompt: PointPrompt
    iou_clean_adv: float
    area_clean: int
    area_adv: int
    success: bool = False
    iou_target_adv: float | None = None
    linf: float = 0.0

    def __post_init__(self):
        for name in ("iou_clean_adv", "iou_target_adv"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompt"] = [self.prompt.row, self.prompt.col]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        d = dict(d)
        d["prompt"] = PointPrompt(*d["prompt"])
        return cls(**d)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks count as identical (1.0)."""
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a.data, b.data).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.data, b.data).sum() / union)


def miou(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise ValidationError("mIoU of an empty record list is undefined")
    return float(np.mean([r.iou_clean_adv for r in records]))


def success(record: EvalRecord, task_kind: str, thresholds: Thresholds = Thresholds()) -> bool:
    if task_kind in REMOVAL_KINDS:
        return (record.iou_clean_adv < thresholds.removal_iou
                or record.area_adv < thresholds.removal_area_ratio * record.area_clean)
    if task_kind == "enlarge":
        return record.area_adv >= thresholds.enlarge_ratio * record.area_clean
    if task_kind in TARGETED_KINDS:
        if record.iou_target_adv is None:
            raise ValidationError(f"task {task_kind!r} needs iou_target_adv on the record")
        return record.iou_target_adv >= thresholds.target_iou
    raise ValidationError(f"unknown task kind {task_kind!r}")


def evaluate_pair(image_id: str, prompt: PointPrompt, mask_clean: BinaryMask, mask_adv: BinaryMask,
                  task_kind: str, target: BinaryMask | None = None, linf: float = 0.0,
                  thresholds: Thresholds = Thresholds()) -> EvalRecord:
    rec = EvalRecord(
        image_id=image_id, prompt=prompt,
        iou_clean_adv=iou(mask_clean, mask_adv),
        area_clean=mask_clean.area, area_adv=mask_adv.area,
        iou_target_adv=None if target is None else iou(target, mask_adv),
        linf=float(linf),
    )
    return EvalRecord(**{**rec.__dict__, "success": success(rec, task_kind, thresholds)})
