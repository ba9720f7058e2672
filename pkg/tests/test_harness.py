import numpy as np
import pytest

from maskattack.attacks import AttackConfig
from maskattack.data import SceneConfig, generate_dataset, make_benchmark
from maskattack.harness import (no_attack, random_shape_target, run_cross_prompt, run_removal,
                                run_targeted, run_task)
from maskattack.model import ToySegmenter
from maskattack.tasks import TaskSpec

from conftest import TINY_SIZE


@pytest.fixture(scope="module")
def model(tiny_checkpoint):
    return ToySegmenter.load(tiny_checkpoint)


@pytest.fixture(scope="module")
def manifest():
    cfg = SceneConfig(size=TINY_SIZE, max_objects=2, radius_range=(4, 6), min_area=20, gap=2)
    return make_benchmark(generate_dataset(4, 0, cfg).scenes, 1, seed=0)


def test_no_attack_is_one(model, manifest):
    out = no_attack(model, manifest)
    assert out.records and out.miou == 1.0


def test_zero_budget_removal_is_identity(model, manifest):
    out = run_removal(model, manifest, AttackConfig.pgd_default(epsilon=0.0, step_size=0.0))
    assert out.miou == 1.0 and all(r.linf == 0.0 for r in out.records)


def test_workers_preserve_order_and_values(model, manifest):
    cfg = AttackConfig.pgd_default(iterations=2)
    a = run_removal(model, manifest, cfg)
    b = run_removal(model, manifest, cfg, workers=3)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_cross_prompt_targets_exclude_sources(model, manifest):
    out = run_cross_prompt(model, manifest, AttackConfig.pgd_default(iterations=1), K=4, n_targets=5)
    assert not out.failures
    assert all(r.linf <= 8 / 255 + 1e-12 for r in out.records)
    again = run_cross_prompt(model, manifest, AttackConfig.pgd_default(iterations=1), K=4, n_targets=5)
    assert [r.to_dict() for r in again.records] == [r.to_dict() for r in out.records]


def test_failures_are_recorded_not_raised(model, manifest):
    class Broken:
        def __getattr__(self, name):
            return getattr(model, name)

        def predict(self, image, prompt):
            raise RuntimeError("boom")

        def clone(self):
            return self

    out = run_removal(Broken(), manifest, AttackConfig.pgd_default(iterations=1))
    assert len(out.failures) == len(manifest.rows) and not out.records
    assert "boom" in out.failures[0]


def test_random_shape_targets_fit():
    rng = np.random.default_rng(0)
    for kind in ("circle", "square"):
        for _ in range(20):
            m = random_shape_target(kind, (64, 64), rng)
            assert m.area > 0


def test_targeted_records_carry_target_iou(model, manifest):
    task = TaskSpec("target_shape", {"shape": "square"})
    out = run_targeted(model, manifest, AttackConfig.pgd_default(iterations=1), task)
    assert out.records and all(r.iou_target_adv is not None for r in out.records)


def test_cross_task_requires_classifier(model, manifest):
    with pytest.raises(ValueError):
        run_task(model, manifest, TaskSpec("cross_task", {"source_task": "classification"}),
                 AttackConfig.pgd_default())
