"""Value types shared across the toolkit.

Images live on a [0, 1] float scale, prompts are integer (row, col) pixel
indices, and masks come from thresholding logits strictly above zero.
All types are frozen; array payloads are copied and marked read-only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


class CapabilityError(RuntimeError):
    """Raised when a backend cannot provide a requested capability."""


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    data: np.ndarray
    id: str = ""

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim == 2:
            data = _frozen(data[..., None], np.float64)
        if data.ndim != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"image must be HxWxC, got shape {data.shape}")
        if data.shape[2] not in (1, 3):
            raise ValidationError(f"image must have 1 or 3 channels, got {data.shape[2]}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def digest(self) -> str:
        return hashlib.sha256(self.data.tobytes()).hexdigest()


@dataclass(frozen=True)
class PointPrompt:
    row: int
    col: int

    def __post_init__(self):
        object.__setattr__(self, "row", int(self.row))
        object.__setattr__(self, "col", int(self.col))

    def check_bounds(self, shape: Sequence[int]) -> None:
        h, w = shape[:2]
        if not (0 <= self.row < h and 0 <= self.col < w):
            raise ValidationError(f"prompt ({self.row}, {self.col}) outside {h}x{w} image")

    def as_tuple(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[PointPrompt, ...]
    seed: int | None = None

    def __post_init__(self):
        prompts = tuple(p if isinstance(p, PointPrompt) else PointPrompt(*p) for p in self.prompts)
        if not prompts:
            raise ValidationError("prompt set must be non-empty")
        coords = [p.as_tuple() for p in prompts]
        if len(set(coords)) != len(coords):
            raise ValidationError("prompt set contains duplicate coordinates")
        object.__setattr__(self, "prompts", prompts)

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def check_bounds(self, shape: Sequence[int]) -> None:
        for p in self.prompts:
            p.check_bounds(shape)

    def coords(self) -> list[tuple[int, int]]:
        return [p.as_tuple() for p in self.prompts]


@dataclass(frozen=True)
class LogitMap:
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 2:
            raise ValidationError(f"logit map must be HxW, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("logit map contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, bool)
        if data.ndim != 2:
            raise ValidationError(f"mask must be HxW, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


@dataclass(frozen=True)
class AttackBudget:
    """L-infinity budget on the [0, 1] pixel scale.

    ``epsilon == 0`` is allowed as a degenerate no-op budget, in which case
    ``step_size`` must also be zero.
    """

    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    iterations: int = 10
    norm: str = "Linf"

    def __post_init__(self):
        eps, step = float(self.epsilon), float(self.step_size)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "step_size", step)
        if self.norm != "Linf":
            raise ValidationError(f"only the Linf norm is supported, got {self.norm!r}")
        if not 0.0 <= eps <= 1.0:
            raise ValidationError(f"epsilon must lie in [0, 1], got {eps}")
        if eps == 0.0:
            if step != 0.0:
                raise ValidationError("a zero epsilon budget requires step_size = 0")
        elif not 0.0 < step <= eps:
            raise ValidationError(f"step_size must satisfy 0 < step_size <= epsilon, got {step}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValidationError(f"iterations must be a positive integer, got {self.iterations}")
        object.__setattr__(self, "iterations", int(self.iterations))


@dataclass(frozen=True)
class AttackResult:
    adversarial_image: Image
    perturbation_linf: float
    loss_trace: tuple[float, ...]
    metrics: dict = field(default_factory=dict)
    config_digest: str = ""


def binarize(logits) -> BinaryMask:
    """Pixels with strictly positive logits are foreground."""
    if not isinstance(logits, LogitMap):
        logits = LogitMap(logits)
    return BinaryMask(logits.data > 0)


def sample_prompts(image: Image, count: int, seed: int, region: BinaryMask | None = None,
                   exclude: Iterable[tuple[int, int]] = ()) -> PromptSet:
    """Draw ``count`` distinct prompts uniformly from ``region`` (or the whole image)."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    h, w = image.shape
    if region is None:
        allowed = np.ones((h, w), dtype=bool)
    else:
        if region.shape != (h, w):
            raise ValidationError(f"region shape {region.shape} does not match image {(h, w)}")
        allowed = region.data.copy()
    for r, c in exclude:
        allowed[r, c] = False
    candidates = np.flatnonzero(allowed)
    if candidates.size < count:
        raise ValidationError(
            f"region too small: need {count} pixels, only {candidates.size} available")
    rng = np.random.default_rng(seed)
    picks = rng.choice(candidates, size=count, replace=False)
    rows, cols = np.unravel_index(picks, (h, w))
    return PromptSet(tuple(PointPrompt(r, c) for r, c in zip(rows, cols)), seed=seed)


def digest_json(obj) -> str:
    """sha256 over a canonical JSON encoding."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


# PNG ingestion / export

def load_image(path, id: str | None = None) -> Image:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return Image(arr.astype(np.float64) / 255.0, id=id if id is not None else Path(path).stem)


def save_image(image: Image, path) -> None:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[..., 0]
    PILImage.fromarray(arr).save(path, format="PNG")


def save_mask(mask: BinaryMask, path) -> None:
    PILImage.fromarray(mask.data.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 127)
