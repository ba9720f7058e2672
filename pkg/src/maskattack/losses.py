"""Attack objectives over logit maps.

Every loss is a mean over pixels of a squared distance to a logit threshold.
The clipped variants saturate once a pixel is past its threshold, so those
pixels contribute neither loss nor gradient. Functions accept numpy arrays,
:class:`LogitMap` or torch tensors; tensors stay on the autograd graph.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np
import torch

from .core import BinaryMask, Image, LogitMap, PromptSet, ValidationError

LOSS_KINDS = ("mse_removal", "clipmse_removal", "clipmse_enlarge", "region_target")
AGGREGATIONS = ("sum", "mean")
NEG_TH = -10.0
POS_TH = 10.0


@dataclass(frozen=True)
class LossSpec:
    kind: str = "clipmse_removal"
    neg_th: float = NEG_TH
    pos_th: float = POS_TH
    target_mask: BinaryMask | None = None
    aggregation: str = "sum"
    reduction: str = "mean"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss kind {self.kind!r}")
        if not self.neg_th < 0 < self.pos_th:
            raise ValidationError(f"thresholds must satisfy neg_th < 0 < pos_th, "
                                  f"got {self.neg_th}, {self.pos_th}")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation must be one of {AGGREGATIONS}")
        if self.reduction != "mean":
            raise ValidationError("reduction is fixed to 'mean' over pixels")
        if self.kind == "region_target" and self.target_mask is None:
            raise ValidationError("region_target requires a target_mask")
        if self.target_mask is not None and not isinstance(self.target_mask, BinaryMask):
            object.__setattr__(self, "target_mask", BinaryMask(self.target_mask))

    def check_shape(self, shape) -> None:
        if self.target_mask is not None and self.target_mask.shape != tuple(shape[:2]):
            raise ValidationError(f"target mask {self.target_mask.shape} does not match "
                                  f"logit shape {tuple(shape[:2])}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "neg_th": self.neg_th, "pos_th": self.pos_th,
               "aggregation": self.aggregation, "reduction": self.reduction}
        if self.target_mask is not None:
            out["target_mask"] = encode_mask(self.target_mask)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        d = dict(d)
        if d.get("target_mask") is not None:
            d["target_mask"] = decode_mask(d["target_mask"])
        return cls(**d)


def encode_mask(mask: BinaryMask) -> dict:
    packed = np.packbits(mask.data.ravel())
    return {"shape": list(mask.shape), "bits": base64.b64encode(packed.tobytes()).decode()}


def decode_mask(d: dict) -> BinaryMask:
    h, w = d["shape"]
    bits = np.unpackbits(np.frombuffer(base64.b64decode(d["bits"]), dtype=np.uint8))
    return BinaryMask(bits[: h * w].reshape(h, w).astype(bool))


def _as_tensor(logits):
    if isinstance(logits, torch.Tensor):
        return logits, True
    if isinstance(logits, LogitMap):
        return torch.tensor(logits.data), False
    arr = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("logits contain non-finite values")
    return torch.tensor(arr), False


def _finish(value: torch.Tensor, keep_tensor: bool):
    return value if keep_tensor else float(value)


def _removal_terms(y, neg_th):
    return (torch.clamp(y, min=neg_th) - neg_th) ** 2


def _enlarge_terms(y, pos_th):
    return (torch.clamp(y, max=pos_th) - pos_th) ** 2


def mse_removal(logits, neg_th: float = NEG_TH):
    y, keep = _as_tensor(logits)
    return _finish(((y - neg_th) ** 2).mean(), keep)


def clipmse_removal(logits, neg_th: float = NEG_TH):
    y, keep = _as_tensor(logits)
    return _finish(_removal_terms(y, neg_th).mean(), keep)


def clipmse_enlarge(logits, pos_th: float = POS_TH):
    y, keep = _as_tensor(logits)
    return _finish(_enlarge_terms(y, pos_th).mean(), keep)


def region_target(logits, target, pos_th: float = POS_TH, neg_th: float = NEG_TH):
    """Two-sided clipped loss: push target pixels above ``pos_th``, the rest below ``neg_th``."""
    y, keep = _as_tensor(logits)
    t = target.data if isinstance(target, BinaryMask) else np.asarray(target, dtype=bool)
    if t.shape != tuple(y.shape[-2:]):
        raise ValidationError(f"target mask {t.shape} does not match logits {tuple(y.shape[-2:])}")
    t = torch.tensor(t)
    terms = torch.where(t, _enlarge_terms(y, pos_th), _removal_terms(y, neg_th))
    return _finish(terms.mean(), keep)


def pixel_terms(y: torch.Tensor, spec: LossSpec) -> torch.Tensor:
    if spec.kind == "mse_removal":
        return (y - spec.neg_th) ** 2
    if spec.kind == "clipmse_removal":
        return _removal_terms(y, spec.neg_th)
    if spec.kind == "clipmse_enlarge":
        return _enlarge_terms(y, spec.pos_th)
    spec.check_shape(tuple(y.shape[-2:]))
    t = torch.tensor(spec.target_mask.data)
    return torch.where(t, _enlarge_terms(y, spec.pos_th), _removal_terms(y, spec.neg_th))


def loss_value(logits, spec: LossSpec):
    """Single-prompt loss for a HxW logit map under ``spec``."""
    y, keep = _as_tensor(logits)
    return _finish(pixel_terms(y, spec).mean(), keep)


def per_prompt_tensor(logits: torch.Tensor, spec: LossSpec) -> torch.Tensor:
    """(K,) losses for a (K, H, W) logit stack."""
    return pixel_terms(logits, spec).mean(dim=(-2, -1))


def aggregate_tensor(logits: torch.Tensor, spec: LossSpec) -> torch.Tensor:
    per = per_prompt_tensor(logits, spec)
    return per.sum() if spec.aggregation == "sum" else per.mean()


def aggregate_over_prompts(model, prompt_set: PromptSet, image: Image, spec: LossSpec) -> float:
    prompt_set.check_bounds(image.shape)
    with torch.no_grad():
        logits = model.logits_tensor(torch.tensor(image.data), list(prompt_set))
        return float(aggregate_tensor(logits, spec))


def logit_gradient(logits, spec: LossSpec) -> np.ndarray:
    """Closed-form derivative of :func:`loss_value` with respect to each logit."""
    y = np.asarray(logits.data if isinstance(logits, LogitMap) else logits, dtype=np.float64)
    n = y.size
    removal = np.where(y > spec.neg_th, 2.0 * (y - spec.neg_th) / n, 0.0)
    enlarge = np.where(y < spec.pos_th, 2.0 * (y - spec.pos_th) / n, 0.0)
    if spec.kind == "mse_removal":
        return 2.0 * (y - spec.neg_th) / n
    if spec.kind == "clipmse_removal":
        return removal
    if spec.kind == "clipmse_enlarge":
        return enlarge
    spec.check_shape(y.shape)
    return np.where(spec.target_mask.data, enlarge, removal)
