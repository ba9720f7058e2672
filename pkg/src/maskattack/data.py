"""Synthetic shape scenes, benchmark manifests and their on-disk format."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (BinaryMask, Image, PointPrompt, ValidationError, digest_json, load_image,
                   load_mask, save_image, save_mask)

log = logging.getLogger(__name__)

SHAPE_KINDS = ("circle", "square", "triangle")
MANIFEST_VERSION = 1


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    channels: int = 3
    min_objects: int = 1
    max_objects: int = 3
    radius_range: tuple[float, float] = (6.0, 12.0)
    kinds: tuple[str, ...] = SHAPE_KINDS
    min_area: int = 30
    gap: int = 3
    max_retries: int = 200
    texture_amplitude: float = 0.03
    noise_amplitude: float = 0.02
    # per-channel |object - background|; kept small so that an 8/255 budget is meaningful
    contrast_range: tuple[float, float] = (0.05, 0.08)

    def __post_init__(self):
        if self.size < 8:
            raise ValidationError(f"scene size must be >= 8, got {self.size}")
        if self.channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {self.channels}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValidationError("object count range must satisfy 0 <= min <= max")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValidationError(f"invalid radius range {self.radius_range}")
        unknown = set(self.kinds) - set(SHAPE_KINDS)
        if unknown or not self.kinds:
            raise ValidationError(f"unknown shape kinds {sorted(unknown)}")
        c_lo, c_hi = self.contrast_range
        if not 0 < c_lo <= c_hi < 0.5:
            raise ValidationError(f"invalid contrast range {self.contrast_range}")


@dataclass(frozen=True)
class SceneObject:
    kind: str
    params: dict
    mask: BinaryMask


@dataclass(frozen=True)
class SyntheticScene:
    image: Image
    objects: tuple[SceneObject, ...]
    seed: int

    @property
    def id(self) -> str:
        return self.image.id

    def union_mask(self) -> BinaryMask:
        out = np.zeros(self.image.shape, dtype=bool)
        for obj in self.objects:
            out |= obj.mask.data
        return BinaryMask(out)

    def dominant_kind(self) -> str | None:
        if not self.objects:
            return None
        return max(self.objects, key=lambda o: o.mask.area).kind


def shape_mask(kind: str, params: dict, size: int) -> np.ndarray:
    """Rasterize a shape by testing pixel centers."""
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    r0, c0, rad = params["row"], params["col"], params["radius"]
    if kind == "circle":
        return (rr - r0) ** 2 + (cc - c0) ** 2 <= rad ** 2
    if kind == "square":
        return (np.abs(rr - r0) <= rad) & (np.abs(cc - c0) <= rad)
    if kind == "triangle":
        theta = params.get("angle", 0.0)
        angles = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        vr = r0 - rad * np.cos(angles)
        vc = c0 + rad * np.sin(angles)
        inside = np.ones((size, size), dtype=bool)
        for k in range(3):
            a, b = k, (k + 1) % 3
            # every point of a counter-clockwise polygon lies on the same side of each edge
            cross = (vc[b] - vc[a]) * (rr - vr[a]) - (vr[b] - vr[a]) * (cc - vc[a])
            ref = (vc[b] - vc[a]) * (r0 - vr[a]) - (vr[b] - vr[a]) * (c0 - vc[a])
            inside &= cross * np.sign(ref) >= 0
        return inside
    raise ValidationError(f"unknown shape kind {kind!r}")


def _background(rng, config: SceneConfig) -> np.ndarray:
    size, ch = config.size, config.channels
    base = rng.uniform(0.3, 0.7, size=ch)
    coarse = rng.normal(0.0, 1.0, size=(8, 8, ch))
    smooth = ndimage.zoom(coarse, (size / 8, size / 8, 1), order=1, mode="nearest")
    smooth /= max(np.abs(smooth).max(), 1e-9)
    return base + config.texture_amplitude * smooth


def interior(mask: np.ndarray, margin: int = 2) -> np.ndarray:
    """Pixels at least ``margin`` steps from the mask boundary."""
    if margin <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, iterations=margin, border_value=0)


def generate_scene(seed: int, config: SceneConfig | None = None, id: str | None = None) -> SyntheticScene:
    """Deterministic scene with non-overlapping shapes on a textured background."""
    config = config or SceneConfig()
    rng = np.random.default_rng(seed)
    size = config.size
    canvas = _background(rng, config)
    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    occupied = np.zeros((size, size), dtype=bool)
    objects = []
    for _ in range(n_objects):
        for _attempt in range(config.max_retries):
            kind = config.kinds[int(rng.integers(len(config.kinds)))]
            rad = float(rng.uniform(*config.radius_range))
            margin = int(np.ceil(rad)) + 1
            if 2 * margin >= size:
                continue
            params = {
                "row": float(rng.uniform(margin, size - margin)),
                "col": float(rng.uniform(margin, size - margin)),
                "radius": rad,
            }
            if kind == "triangle":
                params["angle"] = float(rng.uniform(0, 2 * np.pi))
            mask = shape_mask(kind, params, size)
            if mask.sum() < config.min_area or not interior(mask).any():
                continue
            grown = ndimage.binary_dilation(mask, iterations=config.gap)
            if (grown & occupied).any():
                continue
            break
        else:
            raise PlacementError(
                f"could not place object {len(objects) + 1} of {n_objects} "
                f"after {config.max_retries} attempts (seed={seed})")
        bg_mean = canvas[mask].mean(axis=0)
        delta = rng.uniform(*config.contrast_range, size=config.channels)
        sign = np.where(rng.random(config.channels) < 0.5, -1.0, 1.0)
        # flip channels that would leave the unit range
        sign = np.where((bg_mean + sign * delta < 0.02) | (bg_mean + sign * delta > 0.98), -sign, sign)
        canvas[mask] = bg_mean + sign * delta
        occupied |= mask
        objects.append(SceneObject(kind, params, BinaryMask(mask)))
    canvas += rng.normal(0.0, config.noise_amplitude, size=canvas.shape)
    image = Image(np.clip(canvas, 0.0, 1.0), id=id if id is not None else f"scene-{seed}")
    return SyntheticScene(image, tuple(objects), int(seed))


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class SyntheticDataset:
    scenes: list[SyntheticScene]
    config: SceneConfig
    seed: int

    def __len__(self):
        return len(self.scenes)

    def digest(self) -> str:
        return digest_json({
            "config": asdict(self.config),
            "seed": self.seed,
            "images": [s.image.digest() for s in self.scenes],
        })


def generate_dataset(count: int, seed: int, config: SceneConfig | None = None,
                     prefix: str = "scene") -> SyntheticDataset:
    config = config or SceneConfig()
    scenes = [generate_scene(scene_seed(seed, i), config, id=f"{prefix}-{seed}-{i:05d}")
              for i in range(count)]
    return SyntheticDataset(scenes, config, seed)


@dataclass(frozen=True)
class ManifestRow:
    scene_id: str
    prompt: PointPrompt
    object_index: int
    split: str = "test"


@dataclass
class BenchmarkManifest:
    rows: list[ManifestRow]
    seed: int
    skipped: int = 0
    scenes: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.rows)

    def scene(self, row: ManifestRow) -> SyntheticScene:
        return self.scenes[row.scene_id]

    def ground_truth(self, row: ManifestRow) -> BinaryMask:
        return self.scenes[row.scene_id].objects[row.object_index].mask


def make_benchmark(scenes, pairs_per_scene: int, seed: int, split: str = "test",
                   margin: int = 2) -> BenchmarkManifest:
    """Sample (scene, prompt, object) pairs with prompts inside object interiors."""
    scenes = list(scenes)
    if not scenes:
        raise ValidationError("make_benchmark needs at least one scene")
    if pairs_per_scene < 1:
        raise ValidationError("pairs_per_scene must be >= 1")
    rng = np.random.default_rng(seed)
    rows, skipped = [], 0
    for scene in scenes:
        if not scene.objects:
            skipped += 1
            continue
        inner = [np.flatnonzero(interior(o.mask.data, margin)) for o in scene.objects]
        valid = [i for i, pix in enumerate(inner) if pix.size]
        if not valid:
            skipped += 1
            continue
        used = set()
        for _ in range(pairs_per_scene):
            obj = valid[int(rng.integers(len(valid)))]
            pix = np.array([p for p in inner[obj] if p not in used])
            if pix.size == 0:
                break
            flat = int(rng.choice(pix))
            used.add(flat)
            r, c = np.unravel_index(flat, scene.image.shape)
            rows.append(ManifestRow(scene.id, PointPrompt(r, c), obj, split))
    if skipped:
        log.warning("make_benchmark skipped %d scene(s) without usable objects", skipped)
    return BenchmarkManifest(rows, seed, skipped, {s.id: s for s in scenes})


# persistence: PNG per image/mask plus a JSON sidecar

def save_dataset(dataset: SyntheticDataset, root, manifest: BenchmarkManifest | None = None) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    scenes_meta = []
    for scene in dataset.scenes:
        save_image(scene.image, root / "images" / f"{scene.id}.png")
        objs = []
        for k, obj in enumerate(scene.objects):
            mask_name = f"{scene.id}_obj{k}.png"
            save_mask(obj.mask, root / "masks" / mask_name)
            objs.append({"kind": obj.kind, "params": obj.params, "mask": f"masks/{mask_name}"})
        scenes_meta.append({"id": scene.id, "seed": scene.seed,
                            "image": f"images/{scene.id}.png", "objects": objs})
    meta = {
        "manifest_version": MANIFEST_VERSION,
        "seed": dataset.seed,
        "config": asdict(dataset.config),
        "digest": dataset.digest(),
        "scenes": scenes_meta,
        "pairs": [] if manifest is None else [
            {"scene_id": r.scene_id, "row": r.prompt.row, "col": r.prompt.col,
             "object_index": r.object_index, "split": r.split} for r in manifest.rows],
        "pairs_seed": None if manifest is None else manifest.seed,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_dataset(root) -> tuple[SyntheticDataset, BenchmarkManifest | None]:
    """Read a dataset directory written by :func:`save_dataset`.

    Images are re-read from 8-bit PNG, so pixel values are quantized; use
    :func:`generate_dataset` with the recorded seed for bit-exact scenes.
    """
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    meta = json.loads(path.read_text())
    for key in ("manifest_version", "seed", "config", "scenes", "pairs"):
        if key not in meta:
            raise ValidationError(f"manifest missing field {key!r}")
    cfg = meta["config"]
    cfg["radius_range"] = tuple(cfg["radius_range"])
    cfg["kinds"] = tuple(cfg["kinds"])
    cfg["contrast_range"] = tuple(cfg["contrast_range"])
    config = SceneConfig(**cfg)
    scenes = []
    for s in meta["scenes"]:
        image = load_image(root / s["image"], id=s["id"])
        objs = tuple(SceneObject(o["kind"], o["params"], load_mask(root / o["mask"]))
                     for o in s["objects"])
        scenes.append(SyntheticScene(image, objs, s["seed"]))
    dataset = SyntheticDataset(scenes, config, meta["seed"])
    manifest = None
    if meta["pairs"]:
        rows = [ManifestRow(p["scene_id"], PointPrompt(p["row"], p["col"]), p["object_index"],
                            p.get("split", "test")) for p in meta["pairs"]]
        manifest = BenchmarkManifest(rows, meta.get("pairs_seed") or 0, 0,
                                     {s.id: s for s in scenes})
    return dataset, manifest
