import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from maskattack.attacks import AttackConfig, fgsm, pgd, project_linf, run_attack, surrogate_attack
from maskattack.core import AttackBudget, CapabilityError, Image, PromptSet, ValidationError
from maskattack.losses import LossSpec
from maskattack.model import ClassifierSpec, ToyClassifier, ToyModelSpec, ToySegmenter

from fakes import LinearSegmenter, NoGradSegmenter

P = PromptSet(((1, 1),))


@pytest.fixture(scope="module")
def tiny():
    torch.manual_seed(0)
    return ToySegmenter(ToyModelSpec(widths=(4, 8), image_size=16))


@pytest.fixture(scope="module")
def tiny_classifier():
    torch.manual_seed(0)
    return ToyClassifier(ClassifierSpec(widths=(4, 8), image_size=16))


def rand_image(seed, shape=(16, 16, 3)):
    return Image(np.random.default_rng(seed).uniform(0, 1, size=shape))


def test_fgsm_config_rules():
    with pytest.raises(ValidationError):
        AttackConfig(AttackBudget(8 / 255, 2 / 255, 1), attacker="fgsm")
    with pytest.raises(ValidationError):
        AttackConfig(AttackBudget(8 / 255, 8 / 255, 3), attacker="fgsm")
    with pytest.raises(ValidationError):
        AttackConfig(attacker="cw")


def test_defaults():
    cfg = AttackConfig.pgd_default()
    assert (cfg.budget.epsilon, cfg.budget.step_size, cfg.budget.iterations) == (8 / 255, 2 / 255, 10)
    assert not cfg.random_start and cfg.loss.kind == "clipmse_removal" and cfg.loss.neg_th == -10
    f = AttackConfig.fgsm_default()
    assert f.budget.step_size == f.budget.epsilon == 8 / 255 and f.budget.iterations == 1


def test_config_round_trip():
    cfg = AttackConfig.pgd_default(iterations=7, loss=LossSpec("mse_removal"), random_start=True, seed=4)
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg


def test_fgsm_positive_gradient_descends_by_epsilon():
    # y = sum(x) + 5 > -10 everywhere, so d(mse)/dx > 0 at every pixel
    model = LinearSegmenter()
    x = np.random.default_rng(0).uniform(0.1, 0.9, size=(8, 8, 3))
    cfg = AttackConfig.fgsm_default(loss=LossSpec("mse_removal"))
    res = fgsm(model, P, Image(x), cfg)
    assert np.array_equal(res.adversarial_image.data, x - 8 / 255)
    assert len(res.loss_trace) == 1


def test_fgsm_zero_gradient_is_noop():
    model = LinearSegmenter(bias=-30.0)
    x = np.random.default_rng(1).uniform(0, 1, size=(8, 8, 3)) * 0.1
    res = fgsm(model, P, Image(x), AttackConfig.fgsm_default())
    assert np.array_equal(res.adversarial_image.data, x)
    assert res.perturbation_linf == 0.0


def test_pgd_single_step_equals_fgsm(tiny):
    img = rand_image(2)
    prompts = PromptSet(((5, 5), (9, 3)))
    f = fgsm(tiny, prompts, img, AttackConfig.fgsm_default())
    p = pgd(tiny, prompts, img, AttackConfig(AttackBudget(8 / 255, 8 / 255, 1), attacker="pgd"))
    assert np.array_equal(f.adversarial_image.data, p.adversarial_image.data)
    assert f.loss_trace == p.loss_trace


def test_projection_arithmetic():
    out = project_linf(np.array([0.05, -0.05, 0.01]), 8 / 255)
    assert out[0] == pytest.approx(8 / 255) and out[0] == pytest.approx(0.03137, abs=1e-5)
    assert out[1] == -8 / 255 and out[2] == 0.01


def test_pgd_trace_length_and_digest(tiny):
    cfg = AttackConfig.pgd_default(iterations=4)
    res = pgd(tiny, P, rand_image(3), cfg)
    assert len(res.loss_trace) == 4
    assert res.metrics["final_loss"] == res.loss_trace[-1]
    assert res.config_digest == pgd(tiny, P, rand_image(3), cfg).config_digest


def test_wrong_attacker_rejected(tiny):
    with pytest.raises(ValidationError):
        fgsm(tiny, P, rand_image(0), AttackConfig.pgd_default())
    with pytest.raises(ValidationError):
        pgd(tiny, P, rand_image(0), AttackConfig.fgsm_default())


def test_capability_error_propagates():
    with pytest.raises(CapabilityError):
        fgsm(NoGradSegmenter(), P, Image(np.zeros((8, 8, 3))), AttackConfig.fgsm_default())


def test_determinism_with_random_start(tiny):
    cfg = AttackConfig.pgd_default(iterations=3, random_start=True, seed=9)
    a = pgd(tiny, P, rand_image(4), cfg)
    b = pgd(tiny, P, rand_image(4), cfg)
    assert np.array_equal(a.adversarial_image.data, b.adversarial_image.data)
    assert a.loss_trace == b.loss_trace
    c = pgd(tiny, P, rand_image(4), AttackConfig.pgd_default(iterations=3, random_start=True, seed=10))
    assert not np.array_equal(a.adversarial_image.data, c.adversarial_image.data)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.05, 1.0), st.integers(1, 4), st.booleans(),
       st.sampled_from(["mse_removal", "clipmse_removal", "clipmse_enlarge"]), st.integers(0, 10**6))
def test_budget_safety_fuzz(tiny, eps, frac, iters, random_start, kind, seed):
    budget = AttackBudget(eps, eps * frac if eps > 0 else 0.0, iters)
    cfg = AttackConfig(budget, LossSpec(kind), "pgd", random_start, seed)
    img = rand_image(seed)
    res = run_attack(tiny, P, img, cfg)
    adv = res.adversarial_image.data
    assert np.abs(adv - img.data).max() <= eps + 1e-8
    assert adv.min() >= 0.0 and adv.max() <= 1.0
    assert res.perturbation_linf <= eps + 1e-8
    if eps == 0:
        assert np.array_equal(adv, img.data)


def test_surrogate_budget_and_zero_eps(tiny_classifier):
    img = rand_image(5)
    res = surrogate_attack(tiny_classifier, img, AttackConfig.pgd_default(iterations=3))
    assert res.perturbation_linf <= 8 / 255 + 1e-8
    assert len(res.loss_trace) == 3
    # ascent on cross-entropy of the clean label
    assert res.loss_trace[-1] >= res.metrics["initial_loss"]
    zero = surrogate_attack(tiny_classifier, img, AttackConfig(AttackBudget(0.0, 0.0, 3)))
    assert np.array_equal(zero.adversarial_image.data, img.data)


def test_loss_trace_mostly_non_increasing(tiny):
    cfg = AttackConfig.pgd_default(iterations=10, step_size=0.5 / 255)
    res = pgd(tiny, PromptSet(((8, 8),)), rand_image(6), cfg)
    trace = (res.metrics["initial_loss"],) + res.loss_trace
    assert trace[-1] <= trace[0]
