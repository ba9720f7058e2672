"""Task builders: turn an experiment into (loss, prompts, target mask).

Targeted tasks all use the two-sided ``region_target`` loss. For
``shift_translate`` and ``flip_replace`` the target is only the moved mask,
so the loss's background term is what erases the original region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, Image, PointPrompt, PromptSet, ValidationError, binarize, sample_prompts
from .losses import LossSpec

TASK_KINDS = ("removal", "cross_prompt", "cross_task", "enlarge", "shift_duplicate",
              "shift_translate", "flip_duplicate", "flip_replace", "target_shape",
              "target_other_prompt", "target_other_image")

_REQUIRED = {
    "removal": (),
    "cross_prompt": ("K",),
    "cross_task": (),
    "enlarge": (),
    "shift_duplicate": ("offset",),
    "shift_translate": ("offset",),
    "flip_duplicate": ("axis",),
    "flip_replace": ("axis",),
    "target_shape": ("shape",),
    "target_other_prompt": (),
    "target_other_image": (),
}

MANIPULATION_KINDS = {"shift_duplicate": "duplicate", "shift_translate": "translate",
                      "flip_duplicate": "flip_duplicate", "flip_replace": "flip_replace"}

CROSS_PROMPT_TARGETS = 16
CROSS_PROMPT_GRID = (1, 4, 16, 64)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValidationError(f"unknown task kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.parameters]
        if missing:
            raise ValidationError(f"task {self.kind!r} is missing parameter(s) {missing}")
        if self.kind == "cross_prompt" and int(self.parameters["K"]) < 1:
            raise ValidationError("cross_prompt needs K >= 1")
        if self.kind in ("flip_duplicate", "flip_replace") and \
                self.parameters["axis"] not in ("horizontal", "vertical"):
            raise ValidationError("flip axis must be 'horizontal' or 'vertical'")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parameters": dict(self.parameters)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        params = dict(d.get("parameters", {}))
        if "offset" in params:
            params["offset"] = tuple(params["offset"])
        return cls(d["kind"], params)


def build_removal(prompt: PointPrompt, loss_kind: str = "clipmse_removal",
                  neg_th: float = -10.0) -> tuple[LossSpec, PromptSet]:
    if loss_kind not in ("clipmse_removal", "mse_removal"):
        raise ValidationError(f"removal needs a removal loss, got {loss_kind!r}")
    return LossSpec(loss_kind, neg_th=neg_th), PromptSet((prompt,))


def is_vacuous(mask_clean: BinaryMask) -> bool:
    """A removal pair with nothing to remove is excluded from mIoU."""
    return mask_clean.area == 0


def build_cross_prompt(image: Image, K: int, seed: int, region: BinaryMask | None = None,
                       loss_kind: str = "clipmse_removal") -> tuple[LossSpec, PromptSet]:
    """K source prompts with an aggregated removal loss."""
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    sources = sample_prompts(image, K, seed, region)
    return LossSpec(loss_kind), sources


def cross_prompt_targets(image: Image, sources: PromptSet, count: int, seed: int,
                         region: BinaryMask | None = None) -> PromptSet:
    """Evaluation prompts disjoint from the source set."""
    targets = sample_prompts(image, count, seed, region, exclude=sources.coords())
    assert not set(targets.coords()) & set(sources.coords())
    return targets


def build_cross_task(classifier) -> TaskSpec:
    return TaskSpec("cross_task", {
        "source_task": "classification",
        "classifier": getattr(classifier, "checkpoint_digest", type(classifier).__name__),
        "pipeline": ["surrogate_attack", "segmenter_evaluation"],
    })


def build_enlarge(prompt: PointPrompt, pos_th: float = 10.0) -> tuple[LossSpec, PromptSet]:
    return LossSpec("clipmse_enlarge", pos_th=pos_th), PromptSet((prompt,))


def build_target_mask(kind: str, params: dict, geometry, model=None) -> BinaryMask:
    """Target mask for the arbitrary-mask tasks.

    ``circle``: ``center`` and ``radius``; ``square``: inclusive corners
    ``top_left`` and ``bottom_right``; ``other_prompt``: the model's mask for
    ``prompt`` on ``image``; ``other_image``: the same on a reference image.
    """
    h, w = geometry
    if kind == "circle":
        (ci, cj), r = params["center"], params["radius"]
        if r < 0:
            raise ValidationError("radius must be non-negative")
        rr, cc = np.mgrid[0:h, 0:w]
        data = (rr - ci) ** 2 + (cc - cj) ** 2 <= r ** 2
    elif kind == "square":
        (r0, c0), (r1, c1) = params["top_left"], params["bottom_right"]
        if not (0 <= r0 <= r1 < h and 0 <= c0 <= c1 < w):
            raise ValidationError(f"square corners {(r0, c0)}-{(r1, c1)} outside {h}x{w}")
        data = np.zeros((h, w), dtype=bool)
        data[r0:r1 + 1, c0:c1 + 1] = True
    elif kind in ("other_prompt", "other_image"):
        if model is None:
            raise ValidationError(f"{kind} targets need a model")
        image, prompt = params["image"], params["prompt"]
        if image.shape != (h, w):
            raise ValidationError("reference image geometry differs from the attacked image")
        data = binarize(model.forward(image, prompt)).data
    else:
        raise ValidationError(f"unknown target kind {kind!r}")
    mask = BinaryMask(data)
    if mask.area == 0:
        raise ValidationError(f"{kind} target mask is empty")
    return mask


def translate(mask: np.ndarray, offset) -> np.ndarray:
    """Shift by (dr, dc) with zero fill."""
    dr, dc = offset
    h, w = mask.shape
    out = np.zeros_like(mask)
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def flip(mask: np.ndarray, axis: str) -> np.ndarray:
    """Horizontal flips reverse columns, vertical flips reverse rows."""
    return mask[:, ::-1].copy() if axis == "horizontal" else mask[::-1, :].copy()


def build_manipulation(mask_clean: BinaryMask, kind: str, params: dict) -> BinaryMask:
    """Targets for mask shift and flip: translate, duplicate, flip_duplicate, flip_replace."""
    if mask_clean.area == 0:
        raise ValidationError("cannot manipulate an empty mask")
    src = mask_clean.data
    if kind in ("translate", "duplicate"):
        moved = translate(src, params["offset"])
        if not moved.any():
            raise ValidationError(f"offset {tuple(params['offset'])} moves the whole mask out of frame")
        out = moved if kind == "translate" else src | moved
    elif kind in ("flip_replace", "flip_duplicate"):
        flipped = flip(src, params["axis"])
        out = flipped if kind == "flip_replace" else src | flipped
    else:
        raise ValidationError(f"unknown manipulation {kind!r}")
    return BinaryMask(out)


def targeted_loss(target: BinaryMask, pos_th: float = 10.0, neg_th: float = -10.0) -> LossSpec:
    return LossSpec("region_target", neg_th=neg_th, pos_th=pos_th, target_mask=target)
