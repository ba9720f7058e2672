"""Promptable segmenters, the surrogate classifier, and their training.

The toy segmenter is a small U-Net that takes the image plus a Gaussian
prompt heatmap and returns one logit per pixel. It uses smooth activations
and strided convolutions so image gradients pass finite-difference checks.
Training regresses logits toward +/-``logit_scale`` which keeps background
logits near -10, the removal threshold the attacks aim at.
"""

from __future__ import annotations

import copy
import hashlib
import io
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import (BinaryMask, CapabilityError, Image, LogitMap, PointPrompt, PromptSet,
                   ValidationError, binarize, digest_json)
from .data import SHAPE_KINDS, SyntheticDataset, interior

log = logging.getLogger(__name__)

CACHE_ENV = "MASKATTACK_CACHE"


class TrainingError(RuntimeError):
    def __init__(self, message, miou=None):
        super().__init__(message)
        self.miou = miou


def cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV)
    path = Path(root) if root else Path.home() / ".cache" / "maskattack"
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# backend contract

class Segmenter(Protocol):
    """What the attacks need from a promptable segmenter.

    ``forward`` returns logits at image resolution; ``logits_tensor`` is the
    differentiable path used for white-box gradients. External backends
    (e.g. a full-scale SAM adapter) must resample their logits to the
    input resolution themselves.
    """

    resolution: tuple[int, int]
    differentiable: bool

    def forward(self, image: Image, prompt: PointPrompt) -> LogitMap: ...

    def logits_tensor(self, pixels: torch.Tensor, prompts: Sequence[PointPrompt]) -> torch.Tensor: ...


_ADAPTERS: dict[str, type] = {}


def register_adapter(name: str):
    """Class decorator registering a segmenter backend under ``name``."""
    def wrap(cls):
        _ADAPTERS[name] = cls
        return cls
    return wrap


def get_adapter(name: str):
    try:
        return _ADAPTERS[name]
    except KeyError:
        raise ValidationError(f"unknown segmenter adapter {name!r}; "
                              f"registered: {sorted(_ADAPTERS)}") from None


def registered_adapters() -> list[str]:
    return sorted(_ADAPTERS)


# ---------------------------------------------------------------------------
# networks

def prompt_heatmaps(prompts: Sequence[PointPrompt], shape, sigma: float, dtype=torch.float32):
    h, w = shape
    rows = torch.arange(h, dtype=dtype).view(1, h, 1)
    cols = torch.arange(w, dtype=dtype).view(1, 1, w)
    pr = torch.tensor([p.row for p in prompts], dtype=dtype).view(-1, 1, 1)
    pc = torch.tensor([p.col for p in prompts], dtype=dtype).view(-1, 1, 1)
    return torch.exp(-((rows - pr) ** 2 + (cols - pc) ** 2) / (2 * sigma ** 2))


def _block(cin, cout):
    # BatchNorm is affine at inference, so the eval-mode network stays smooth
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.SiLU(),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.SiLU())


class UNet(nn.Module):
    """Encoder-decoder with strided downsampling and bilinear upsampling."""

    def __init__(self, in_channels: int, widths: Sequence[int]):
        super().__init__()
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        cin = in_channels
        for w in widths:
            self.enc.append(_block(cin, w))
            self.down.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            cin = w
        self.mid = _block(widths[-1], widths[-1])
        self.dec = nn.ModuleList()
        for w in reversed(widths):
            self.dec.append(_block(cin + w, w))
            cin = w
        self.head = nn.Conv2d(cin, 1, 1)

    def forward(self, x):
        skips = []
        for enc, down in zip(self.enc, self.down):
            x = enc(x)
            skips.append(x)
            x = F.silu(down(x))
        x = self.mid(x)
        for dec, skip in zip(self.dec, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)[:, 0]


class ConvClassifier(nn.Module):
    def __init__(self, in_channels: int, widths: Sequence[int], n_classes: int):
        super().__init__()
        layers, cin = [], in_channels
        for w in widths:
            layers += [_block(cin, w), nn.Conv2d(w, w, 3, stride=2, padding=1), nn.SiLU()]
            cin = w
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(2 * cin, n_classes)

    def forward(self, x):
        # max pooling keeps small-object evidence that the mean washes out at low contrast
        f = self.features(x)
        return self.fc(torch.cat([f.mean(dim=(-2, -1)), f.amax(dim=(-2, -1))], dim=1))


def _to_nchw(pixels: torch.Tensor) -> torch.Tensor:
    if pixels.dim() == 3:
        pixels = pixels.unsqueeze(0)
    return pixels.permute(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# toy segmenter

@dataclass(frozen=True)
class ToyModelSpec:
    prompt_sigma: float = 2.0
    widths: tuple[int, ...] = (12, 24, 48, 64)
    seed: int = 0
    image_size: int = 64
    channels: int = 3
    logit_scale: float = 10.0
    steps: int = 2500
    batch_size: int = 24
    learning_rate: float = 3e-3
    background_prompt_rate: float = 0.1
    gate_miou: float = 0.9
    max_rounds: int = 2

    def __post_init__(self):
        if self.prompt_sigma <= 0:
            raise ValidationError("prompt_sigma must be positive")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValidationError("widths must be a non-empty list of positive integers")

    def digest(self) -> str:
        return digest_json(asdict(self))


def state_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().to(torch.float64).numpy().tobytes())
    return h.hexdigest()


@register_adapter("toy")
class ToySegmenter:
    """Inference wrapper around a trained :class:`UNet`."""

    differentiable = True

    def __init__(self, spec: ToyModelSpec, net: UNet | None = None, dtype=torch.float64):
        self.spec = spec
        self.net = net if net is not None else UNet(spec.channels + 1, spec.widths)
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.dtype = dtype
        self.net.to(dtype)
        self.resolution = (spec.image_size, spec.image_size)

    @property
    def checkpoint_digest(self) -> str:
        return state_digest(self.net)

    def clone(self) -> "ToySegmenter":
        net = UNet(self.spec.channels + 1, self.spec.widths)
        net.load_state_dict(self.net.state_dict())
        return ToySegmenter(self.spec, net, self.dtype)

    def _check(self, shape):
        if tuple(shape[:2]) != self.resolution or shape[2] != self.spec.channels:
            raise ValidationError(
                f"model expects {self.resolution[0]}x{self.resolution[1]}x{self.spec.channels}, "
                f"got {tuple(shape)}")

    def logits_tensor(self, pixels: torch.Tensor, prompts: Sequence[PointPrompt]) -> torch.Tensor:
        """(K, H, W) logits for one HxWxC image under K prompts."""
        self._check(pixels.shape)
        pixels = pixels.to(self.dtype)
        heat = prompt_heatmaps(prompts, self.resolution, self.spec.prompt_sigma, self.dtype)
        x = _to_nchw(pixels).expand(len(prompts), -1, -1, -1)
        return self.net(torch.cat([x, heat.unsqueeze(1)], dim=1))

    def forward(self, image: Image, prompt: PointPrompt) -> LogitMap:
        prompt.check_bounds(image.shape)
        with torch.no_grad():
            out = self.logits_tensor(torch.tensor(image.data), [prompt])
        return LogitMap(out[0].to(torch.float64).numpy())

    def predict(self, image: Image, prompt: PointPrompt) -> BinaryMask:
        return binarize(self.forward(image, prompt))

    def predict_many(self, image: Image, prompts: Sequence[PointPrompt]) -> list[BinaryMask]:
        with torch.no_grad():
            out = self.logits_tensor(torch.tensor(image.data), list(prompts))
        return [BinaryMask(o.numpy() > 0) for o in out]

    def save(self, path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        torch.save({"spec": asdict(self.spec), "state": self.net.state_dict()}, buf)
        path.write_bytes(buf.getvalue())
        return self.checkpoint_digest

    @classmethod
    def load(cls, path, dtype=torch.float64) -> "ToySegmenter":
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
        spec_d = dict(blob["spec"])
        spec_d["widths"] = tuple(spec_d["widths"])
        spec = ToyModelSpec(**spec_d)
        net = UNet(spec.channels + 1, spec.widths)
        net.load_state_dict(blob["state"])
        return cls(spec, net, dtype)


def forward(model: Segmenter, prompt: PointPrompt, image: Image) -> LogitMap:
    return model.forward(image, prompt)


def loss_gradient(model: Segmenter, prompt_set: PromptSet, image: Image | np.ndarray, loss) -> tuple[float, np.ndarray]:
    """Value and image-gradient of the aggregated attack loss.

    Returns ``(loss, grad)`` with ``grad`` shaped like the image (HxWxC, float64).
    """
    from .losses import aggregate_tensor

    if not getattr(model, "differentiable", False):
        raise CapabilityError(f"{type(model).__name__} does not expose image gradients")
    data = image.data if isinstance(image, Image) else np.asarray(image)
    prompt_set.check_bounds(data.shape)
    pixels = torch.tensor(data, dtype=model.dtype, requires_grad=True)
    logits = model.logits_tensor(pixels, list(prompt_set))
    value = aggregate_tensor(logits, loss)
    (grad,) = torch.autograd.grad(value, pixels)
    return float(value.detach()), grad.to(torch.float64).numpy()


# ---------------------------------------------------------------------------
# training

def _training_pairs(dataset: SyntheticDataset, rng: np.random.Generator, n: int,
                    background_rate: float):
    """Random (scene index, prompt, target mask) triples."""
    out = []
    scenes = dataset.scenes
    for _ in range(n):
        s = scenes[int(rng.integers(len(scenes)))]
        h, w = s.image.shape
        if not s.objects or rng.random() < background_rate:
            bg = np.flatnonzero(~s.union_mask().data)
            flat = int(rng.choice(bg))
            target = np.zeros((h, w), dtype=bool)
        else:
            obj = s.objects[int(rng.integers(len(s.objects)))]
            flat = int(rng.choice(np.flatnonzero(obj.mask.data)))
            target = obj.mask.data
        out.append((s, PointPrompt(*np.unravel_index(flat, (h, w))), target))
    return out


def _segmenter_batch(pairs, spec):
    imgs = torch.tensor(np.stack([s.image.data for s, _, _ in pairs]), dtype=torch.float32)
    heat = prompt_heatmaps([p for _, p, _ in pairs], imgs.shape[1:3], spec.prompt_sigma)
    x = torch.cat([imgs.permute(0, 3, 1, 2), heat.unsqueeze(1)], dim=1)
    y = torch.tensor(np.stack([t for _, _, t in pairs]), dtype=torch.float32)
    return x, y


def evaluate_segmenter(model: ToySegmenter, dataset: SyntheticDataset, pairs: int = 200,
                       seed: int = 12345) -> float:
    """Clean mIoU against ground truth for prompts inside object interiors."""
    from .data import make_benchmark
    from .metrics import iou

    per_scene = max(1, pairs // max(1, len(dataset)))
    manifest = make_benchmark(dataset.scenes, per_scene, seed)
    scores = []
    for row in manifest.rows[:pairs]:
        scene = manifest.scene(row)
        scores.append(iou(model.predict(scene.image, row.prompt), manifest.ground_truth(row)))
    return float(np.mean(scores))


def train_toy(spec: ToyModelSpec, dataset: SyntheticDataset, heldout: SyntheticDataset | None = None,
              checkpoint: str | os.PathLike | None = None, enforce_gate: bool = True) -> ToySegmenter:
    """Train the toy segmenter; raises :class:`TrainingError` if the gate is unmet.

    Training repeats in rounds of ``spec.steps`` (up to ``spec.max_rounds``)
    until held-out clean mIoU reaches ``spec.gate_miou``.
    """
    torch.manual_seed(spec.seed)
    rng = np.random.default_rng(spec.seed)
    net = UNet(spec.channels + 1, spec.widths)
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    heldout = heldout if heldout is not None else dataset
    miou = 0.0
    step = 0
    for round_ in range(spec.max_rounds):
        net.train()
        # each round is a fresh one-cycle schedule, so round 1 is independent of max_rounds
        sched = torch.optim.lr_scheduler.OneCycleLR(opt, spec.learning_rate, total_steps=spec.steps)
        for _ in range(spec.steps):
            x, y = _segmenter_batch(
                _training_pairs(dataset, rng, spec.batch_size, spec.background_prompt_rate), spec)
            logits = net(x)
            target = spec.logit_scale * (2 * y - 1)
            # regression pins the logit scale; BCE sharpens boundaries
            loss = F.mse_loss(logits, target) / spec.logit_scale ** 2 \
                + F.binary_cross_entropy_with_logits(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            if step % 100 == 0:
                log.info("toy segmenter step %d loss %.4f", step, loss.item())
        model = ToySegmenter(spec, copy.deepcopy(net))
        miou = evaluate_segmenter(model, heldout)
        log.info("toy segmenter round %d held-out mIoU %.4f", round_ + 1, miou)
        if miou >= spec.gate_miou:
            break
    else:
        if enforce_gate:
            raise TrainingError(f"toy segmenter reached mIoU {miou:.4f} < gate {spec.gate_miou}", miou)
    model.train_miou = miou
    if checkpoint is not None:
        model.save(checkpoint)
    return model


# ---------------------------------------------------------------------------
# surrogate classifier

@dataclass(frozen=True)
class ClassifierSpec:
    widths: tuple[int, ...] = (16, 32, 64)
    labels: tuple[str, ...] = SHAPE_KINDS
    seed: int = 0
    image_size: int = 64
    channels: int = 3
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 3e-3

    def digest(self) -> str:
        return digest_json(asdict(self))


class ToyClassifier:
    """Dominant-shape classifier standing in for a label-prediction model."""

    differentiable = True

    def __init__(self, spec: ClassifierSpec, net: ConvClassifier | None = None, dtype=torch.float64):
        self.spec = spec
        self.net = net if net is not None else ConvClassifier(spec.channels, spec.widths, len(spec.labels))
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.dtype = dtype
        self.net.to(dtype)
        self.resolution = (spec.image_size, spec.image_size)
        self.labels = spec.labels

    @property
    def checkpoint_digest(self) -> str:
        return state_digest(self.net)

    def logits_tensor(self, pixels: torch.Tensor) -> torch.Tensor:
        shape = tuple(pixels.shape[-3:])
        if shape[:2] != self.resolution or shape[2] != self.spec.channels:
            raise ValidationError(f"classifier expects {self.resolution}x{self.spec.channels}, got {shape}")
        return self.net(_to_nchw(pixels.to(self.dtype)))

    def classify_forward(self, image: Image) -> np.ndarray:
        with torch.no_grad():
            out = self.logits_tensor(torch.tensor(image.data))
        return out[0].to(torch.float64).numpy()

    def predict_label(self, image: Image) -> str:
        return self.labels[int(np.argmax(self.classify_forward(image)))]

    def save(self, path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        torch.save({"spec": asdict(self.spec), "state": self.net.state_dict()}, buf)
        path.write_bytes(buf.getvalue())
        return self.checkpoint_digest

    @classmethod
    def load(cls, path, dtype=torch.float64) -> "ToyClassifier":
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
        d = dict(blob["spec"])
        d["widths"], d["labels"] = tuple(d["widths"]), tuple(d["labels"])
        spec = ClassifierSpec(**d)
        net = ConvClassifier(spec.channels, spec.widths, len(spec.labels))
        net.load_state_dict(blob["state"])
        return cls(spec, net, dtype)


def classify_forward(model: ToyClassifier, image: Image) -> np.ndarray:
    return model.classify_forward(image)


def scene_label(scene, labels: Sequence[str]) -> int | None:
    kind = scene.dominant_kind()
    return None if kind is None else labels.index(kind)


def train_classifier(spec: ClassifierSpec, dataset: SyntheticDataset,
                     checkpoint: str | os.PathLike | None = None) -> ToyClassifier:
    torch.manual_seed(spec.seed)
    rng = np.random.default_rng(spec.seed)
    usable = [s for s in dataset.scenes if s.objects]
    images = torch.tensor(np.stack([s.image.data for s in usable]), dtype=torch.float32)
    labels = torch.tensor([scene_label(s, spec.labels) for s in usable])
    net = ConvClassifier(spec.channels, spec.widths, len(spec.labels))
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, spec.learning_rate, total_steps=spec.steps)
    net.train()
    for step in range(spec.steps):
        idx = torch.from_numpy(rng.integers(0, len(usable), size=spec.batch_size))
        logits = net(images[idx].permute(0, 3, 1, 2))
        loss = F.cross_entropy(logits, labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if (step + 1) % 200 == 0:
            log.info("classifier step %d loss %.4f", step + 1, loss.item())
    model = ToyClassifier(spec, net)
    if checkpoint is not None:
        model.save(checkpoint)
    return model


def classifier_accuracy(model: ToyClassifier, scenes) -> float:
    scenes = [s for s in scenes if s.objects]
    hits = [model.predict_label(s.image) == s.dominant_kind() for s in scenes]
    return float(np.mean(hits))


# ---------------------------------------------------------------------------
# cached defaults

DEFAULT_TRAIN = (1500, 1)
DEFAULT_HELDOUT = (100, 2)


def default_datasets():
    from .data import generate_dataset

    return (generate_dataset(*DEFAULT_TRAIN, prefix="train"),
            generate_dataset(*DEFAULT_HELDOUT, prefix="heldout"))


BUNDLED = Path(__file__).parent / "weights"


def default_segmenter(spec: ToyModelSpec | None = None) -> ToySegmenter:
    """Pretrained toy segmenter for ``spec``.

    The default spec ships with the package; other specs are trained on
    first use and cached under :func:`cache_dir`.
    """
    spec = spec or ToyModelSpec()
    bundled = BUNDLED / "toy-segmenter.pt"
    if spec == ToyModelSpec() and bundled.exists():
        return ToySegmenter.load(bundled)
    path = cache_dir() / f"toy-segmenter-{spec.digest()[:16]}.pt"
    if path.exists():
        return ToySegmenter.load(path)
    log.info("training toy segmenter into %s", path)
    train, held = default_datasets()
    return train_toy(spec, train, held, checkpoint=path)


def default_classifier(spec: ClassifierSpec | None = None) -> ToyClassifier:
    spec = spec or ClassifierSpec()
    bundled = BUNDLED / "toy-classifier.pt"
    if spec == ClassifierSpec() and bundled.exists():
        return ToyClassifier.load(bundled)
    path = cache_dir() / f"toy-classifier-{spec.digest()[:16]}.pt"
    if path.exists():
        return ToyClassifier.load(path)
    log.info("training surrogate classifier into %s", path)
    train, _ = default_datasets()
    return train_classifier(spec, train, checkpoint=path)
