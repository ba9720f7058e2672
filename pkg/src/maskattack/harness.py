"""Run tasks over a benchmark and collect evaluation records.

Every function takes a segmenter, a manifest (or scenes) and an
:class:`AttackConfig` whose loss is overridden per task where the task
dictates it. Records compare the model's own clean prediction with its
prediction on the adversarial image, as mIoU is defined on predictions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, run_attack, surrogate_attack
from .core import BinaryMask, PointPrompt, PromptSet, sample_prompts
from .data import BenchmarkManifest, ManifestRow, interior, scene_seed
from .losses import LossSpec
from .metrics import EvalRecord, evaluate_pair, iou, miou
from .tasks import (CROSS_PROMPT_TARGETS, MANIPULATION_KINDS, TaskSpec, build_cross_prompt,
                    build_enlarge, build_manipulation, build_removal, build_target_mask,
                    cross_prompt_targets, is_vacuous, targeted_loss)

log = logging.getLogger(__name__)


@dataclass
class TaskOutcome:
    task: TaskSpec
    records: list[EvalRecord]
    skipped: int = 0
    failures: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def miou(self) -> float:
        return miou(self.records)

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.records])) if self.records else 0.0


def _map_rows(fn, rows, model, workers: int):
    """Apply ``fn(model, row)`` keeping row order; each worker gets its own model clone."""
    if workers <= 1 or len(rows) <= 1:
        return [fn(model, r) for r in rows]
    chunks = [rows[i::workers] for i in range(workers)]
    models = [model] + [model.clone() for _ in range(workers - 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda mc: [fn(mc[0], r) for r in mc[1]], zip(models, chunks)))
    out = [None] * len(rows)
    for w, part in enumerate(parts):
        for j, res in enumerate(part):
            out[w + j * workers] = res
    return out


def _collect(task, results) -> TaskOutcome:
    outcome = TaskOutcome(task, [])
    for res in results:
        if res is None:
            outcome.skipped += 1
        elif isinstance(res, str):
            outcome.failures.append(res)
        else:
            outcome.records.append(res)
    return outcome


def _guard(fn):
    def wrapped(model, row):
        try:
            return fn(model, row)
        except Exception as exc:  # per-pair failures are recorded, the run continues
            log.exception("pair %s failed", getattr(row, "scene_id", row))
            return f"{getattr(row, 'scene_id', row)}: {type(exc).__name__}: {exc}"
    return wrapped


# ---------------------------------------------------------------------------
# white-box removal and enlargement

def run_removal(model, manifest: BenchmarkManifest, config: AttackConfig,
                loss_kind: str = "clipmse_removal", workers: int = 1) -> TaskOutcome:
    def one(m, row: ManifestRow):
        image = manifest.scene(row).image
        clean = m.predict(image, row.prompt)
        if is_vacuous(clean):
            return None
        loss, prompts = build_removal(row.prompt, loss_kind, config.loss.neg_th)
        res = run_attack(m, prompts, image, config.with_loss(loss))
        adv = m.predict(res.adversarial_image, row.prompt)
        return evaluate_pair(image.id, row.prompt, clean, adv, "removal", linf=res.perturbation_linf)

    task = TaskSpec("removal", {"loss": loss_kind})
    return _collect(task, _map_rows(_guard(one), manifest.rows, model, workers))


def run_enlarge(model, manifest: BenchmarkManifest, config: AttackConfig, workers: int = 1) -> TaskOutcome:
    def one(m, row):
        image = manifest.scene(row).image
        clean = m.predict(image, row.prompt)
        loss, prompts = build_enlarge(row.prompt, config.loss.pos_th)
        res = run_attack(m, prompts, image, config.with_loss(loss))
        adv = m.predict(res.adversarial_image, row.prompt)
        return evaluate_pair(image.id, row.prompt, clean, adv, "enlarge", linf=res.perturbation_linf)

    return _collect(TaskSpec("enlarge"), _map_rows(_guard(one), manifest.rows, model, workers))


# ---------------------------------------------------------------------------
# transfer attacks

def _scene_list(manifest: BenchmarkManifest):
    seen, scenes = set(), []
    for row in manifest.rows:
        if row.scene_id not in seen:
            seen.add(row.scene_id)
            scenes.append(manifest.scene(row))
    return scenes


def _interiors(scene) -> BinaryMask:
    out = np.zeros(scene.image.shape, dtype=bool)
    for obj in scene.objects:
        out |= interior(obj.mask.data)
    return BinaryMask(out)


def _evaluate_targets(model, scene, adv_image, targets: PromptSet, task_kind: str, linf: float):
    clean_masks = model.predict_many(scene.image, list(targets))
    adv_masks = model.predict_many(adv_image, list(targets))
    records = []
    for p, mc, ma in zip(targets, clean_masks, adv_masks):
        if is_vacuous(mc):
            continue
        records.append(evaluate_pair(scene.id, p, mc, ma, task_kind, linf=linf))
    return records


def run_cross_prompt(model, manifest: BenchmarkManifest, config: AttackConfig, K: int,
                     n_targets: int = CROSS_PROMPT_TARGETS, seed: int = 0,
                     workers: int = 1) -> TaskOutcome:
    """Attack with K source prompts, evaluate on fresh target prompts.

    Sources are drawn from the union of object masks; targets from object
    interiors, excluding every source pixel (fewer than ``n_targets`` when
    the interiors are small). Target draws depend only on
    the scene and ``seed`` up to the exclusion, so sweeps over K compare
    near-identical target sets.
    """
    def one(m, scene_idx):
        scene = scenes[scene_idx]
        s = scene_seed(seed, scene_idx)
        loss, sources = build_cross_prompt(scene.image, K, s, scene.union_mask(), config.loss.kind)
        region = _interiors(scene)
        free = region.area - sum(region.data[r, c] for r, c in sources.coords())
        if free < 1:
            return []
        targets = cross_prompt_targets(scene.image, sources, min(n_targets, free), s + 1, region)
        res = run_attack(m, sources, scene.image, config.with_loss(replace(loss, neg_th=config.loss.neg_th)))
        return _evaluate_targets(m, scene, res.adversarial_image, targets, "cross_prompt",
                                 res.perturbation_linf)

    scenes = _scene_list(manifest)
    task = TaskSpec("cross_prompt", {"K": K, "targets": n_targets, "seed": seed})
    results = _map_rows(_guard(one), list(range(len(scenes))), model, workers)
    outcome = TaskOutcome(task, [])
    for res in results:
        if isinstance(res, str):
            outcome.failures.append(res)
        else:
            outcome.records.extend(res)
    return outcome


def run_cross_task(model, classifier, manifest: BenchmarkManifest, config: AttackConfig,
                   n_targets: int = CROSS_PROMPT_TARGETS, seed: int = 0) -> TaskOutcome:
    """Craft on the surrogate classifier, evaluate on the segmenter over several prompts."""
    from .tasks import build_cross_task

    scenes = _scene_list(manifest)
    outcome = TaskOutcome(build_cross_task(classifier), [])
    flips = []
    for idx, scene in enumerate(scenes):
        try:
            res = surrogate_attack(classifier, scene.image, config)
            region = _interiors(scene)
            count = min(n_targets, region.area)
            targets = sample_prompts(scene.image, count, scene_seed(seed, idx) + 1, region)
            outcome.records.extend(_evaluate_targets(model, scene, res.adversarial_image, targets,
                                                     "cross_task", res.perturbation_linf))
            flips.append(res.metrics["label_flipped"])
        except Exception as exc:
            log.exception("cross-task scene %s failed", scene.id)
            outcome.failures.append(f"{scene.id}: {type(exc).__name__}: {exc}")
    outcome.extra["surrogate_flip_rate"] = float(np.mean(flips)) if flips else 0.0
    return outcome


# ---------------------------------------------------------------------------
# targeted generation and manipulation

def random_shape_target(kind: str, shape, rng: np.random.Generator) -> BinaryMask:
    h, w = shape
    if kind == "circle":
        r = int(rng.integers(5, 10))
        center = (int(rng.integers(r, h - r)), int(rng.integers(r, w - r)))
        return build_target_mask("circle", {"center": center, "radius": r}, shape)
    side = int(rng.integers(9, 17))
    r0, c0 = int(rng.integers(0, h - side + 1)), int(rng.integers(0, w - side + 1))
    return build_target_mask("square", {"top_left": (r0, c0),
                                        "bottom_right": (r0 + side - 1, c0 + side - 1)}, shape)


def _target_for(model, manifest, row, kind, params, rng, scenes):
    scene = manifest.scene(row)
    image = scene.image
    if kind == "target_shape":
        return random_shape_target(params.get("shape", "circle"), image.shape, rng)
    if kind == "target_other_prompt":
        others = [k for k in range(len(scene.objects)) if k != row.object_index]
        if not others:
            return None
        obj = scene.objects[others[int(rng.integers(len(others)))]]
        pix = np.flatnonzero(interior(obj.mask.data))
        p = PointPrompt(*np.unravel_index(int(rng.choice(pix)), image.shape))
        return build_target_mask("other_prompt", {"image": image, "prompt": p}, image.shape, model)
    if kind == "target_other_image":
        candidates = [s for s in scenes if s.id != scene.id and s.objects]
        if not candidates:
            return None
        ref = candidates[int(rng.integers(len(candidates)))]
        obj = ref.objects[int(rng.integers(len(ref.objects)))]
        pix = np.flatnonzero(interior(obj.mask.data))
        p = PointPrompt(*np.unravel_index(int(rng.choice(pix)), image.shape))
        return build_target_mask("other_image", {"image": ref.image, "prompt": p}, image.shape, model)
    clean = model.predict(image, row.prompt)
    if is_vacuous(clean):
        return None
    m_params = dict(params)
    if "offset" in m_params:
        m_params["offset"] = tuple(m_params["offset"])
    return build_manipulation(clean, MANIPULATION_KINDS[kind], m_params)


def run_targeted(model, manifest: BenchmarkManifest, config: AttackConfig, task: TaskSpec,
                 seed: int = 0, workers: int = 1) -> TaskOutcome:
    scenes = _scene_list(manifest)
    index = {id(r): i for i, r in enumerate(manifest.rows)}

    def one(m, row):
        rng = np.random.default_rng(scene_seed(seed, index[id(row)]))
        try:
            target = _target_for(m, manifest, row, task.kind, task.parameters, rng, scenes)
        except ValueError as exc:
            log.info("skipping %s: %s", row.scene_id, exc)
            return None
        if target is None:
            return None
        image = manifest.scene(row).image
        clean = m.predict(image, row.prompt)
        loss = targeted_loss(target, config.loss.pos_th, config.loss.neg_th)
        res = run_attack(m, PromptSet((row.prompt,)), image, config.with_loss(loss))
        adv = m.predict(res.adversarial_image, row.prompt)
        return evaluate_pair(image.id, row.prompt, clean, adv, task.kind, target=target,
                             linf=res.perturbation_linf)

    return _collect(task, _map_rows(_guard(one), manifest.rows, model, workers))


def no_attack(model, manifest: BenchmarkManifest) -> TaskOutcome:
    """Baseline: clean predictions compared with themselves."""
    records = []
    for row in manifest.rows:
        image = manifest.scene(row).image
        clean = model.predict(image, row.prompt)
        if is_vacuous(clean):
            continue
        records.append(evaluate_pair(image.id, row.prompt, clean, model.predict(image, row.prompt),
                                     "removal"))
    return TaskOutcome(TaskSpec("removal", {"attack": "none"}), records)


def run_task(model, manifest: BenchmarkManifest, task: TaskSpec, config: AttackConfig,
             classifier=None, seed: int = 0, workers: int = 1) -> TaskOutcome:
    kind = task.kind
    if kind == "removal":
        return run_removal(model, manifest, config, task.parameters.get("loss", config.loss.kind), workers)
    if kind == "enlarge":
        return run_enlarge(model, manifest, config, workers)
    if kind == "cross_prompt":
        return run_cross_prompt(model, manifest, config, int(task.parameters["K"]),
                                int(task.parameters.get("targets", CROSS_PROMPT_TARGETS)), seed, workers)
    if kind == "cross_task":
        if classifier is None:
            raise ValueError("cross_task needs a surrogate classifier")
        return run_cross_task(model, classifier, manifest, config,
                              int(task.parameters.get("targets", CROSS_PROMPT_TARGETS)), seed)
    return run_targeted(model, manifest, config, task, seed, workers)
