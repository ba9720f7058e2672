"""FGSM and PGD under an L-infinity budget.

Mask attacks are posed as loss *minimization* (drive logits toward a
threshold), so both attackers step along ``-sign(grad)``. The surrogate
attack on a classifier is the classic untargeted form and steps along
``+sign(grad)`` of the cross-entropy.

Each PGD iteration applies: sign step, projection onto the epsilon ball,
clamp to [0, 1]. A zero gradient component takes no step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .core import AttackBudget, AttackResult, Image, PromptSet, ValidationError, digest_json
from .losses import LossSpec
from .model import loss_gradient

ATTACKERS = ("fgsm", "pgd")

FGSM_STEP = 8 / 255
PGD_STEP = 2 / 255
EPSILON = 8 / 255
PGD_ITERATIONS = 10
# PGD-100 for targeted masks; 2/255 steps overshoot and stall with 100 iterations
TARGETED_ITERATIONS = 100
TARGETED_STEP = 0.5 / 255


@dataclass(frozen=True)
class AttackConfig:
    budget: AttackBudget = field(default_factory=AttackBudget)
    loss: LossSpec = field(default_factory=LossSpec)
    attacker: str = "pgd"
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.attacker not in ATTACKERS:
            raise ValidationError(f"attacker must be one of {ATTACKERS}, got {self.attacker!r}")
        if self.attacker == "fgsm":
            b = self.budget
            if b.iterations != 1 or b.step_size != b.epsilon:
                raise ValidationError("fgsm requires iterations = 1 and step_size = epsilon")

    @classmethod
    def fgsm_default(cls, epsilon: float = EPSILON, loss: LossSpec | None = None, **kw) -> "AttackConfig":
        return cls(AttackBudget(epsilon, epsilon, 1), loss or LossSpec(), "fgsm", **kw)

    @classmethod
    def pgd_default(cls, epsilon: float = EPSILON, step_size: float = PGD_STEP,
                    iterations: int = PGD_ITERATIONS, loss: LossSpec | None = None, **kw) -> "AttackConfig":
        step = min(step_size, epsilon)
        return cls(AttackBudget(epsilon, step, iterations), loss or LossSpec(), "pgd", **kw)

    @classmethod
    def pgd_targeted(cls, epsilon: float = EPSILON, **kw) -> "AttackConfig":
        """PGD-100 with a 0.5/255 step, used for targeted mask generation."""
        kw.setdefault("step_size", min(TARGETED_STEP, epsilon))
        kw.setdefault("iterations", TARGETED_ITERATIONS)
        return cls.pgd_default(epsilon, **kw)

    def with_loss(self, loss: LossSpec) -> "AttackConfig":
        return replace(self, loss=loss)

    def to_dict(self) -> dict:
        b = self.budget
        return {
            "attacker": self.attacker,
            "epsilon": b.epsilon, "step_size": b.step_size, "iterations": b.iterations,
            "norm": b.norm, "random_start": self.random_start, "seed": self.seed,
            "loss": self.loss.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        budget = AttackBudget(d["epsilon"], d["step_size"], d["iterations"], d.get("norm", "Linf"))
        return cls(budget, LossSpec.from_dict(d["loss"]), d["attacker"],
                   bool(d.get("random_start", False)), int(d.get("seed", 0)))

    def digest(self) -> str:
        return digest_json(self.to_dict())


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(delta, -epsilon, epsilon)


def _digest(config: AttackConfig, model) -> str:
    return digest_json({"config": config.to_dict(),
                        "checkpoint": getattr(model, "checkpoint_digest", type(model).__name__)})


def _result(clean: np.ndarray, adv: np.ndarray, image: Image, trace, config, model,
            initial_loss: float) -> AttackResult:
    linf = float(np.abs(adv - clean).max())
    return AttackResult(
        adversarial_image=Image(adv, id=f"{image.id}-adv"),
        perturbation_linf=linf,
        loss_trace=tuple(float(v) for v in trace),
        metrics={"initial_loss": float(initial_loss), "final_loss": float(trace[-1]),
                 "linf": linf},
        config_digest=_digest(config, model),
    )


def fgsm(model, prompt_set: PromptSet, image: Image, config: AttackConfig) -> AttackResult:
    """One signed descent step of size epsilon on the mask loss."""
    if config.attacker != "fgsm":
        raise ValidationError("fgsm called with a non-fgsm config")
    x = np.array(image.data)
    eps = config.budget.epsilon
    loss0, grad = loss_gradient(model, prompt_set, x, config.loss)
    adv = np.clip(x - eps * np.sign(grad), 0.0, 1.0)
    loss1, _ = loss_gradient(model, prompt_set, adv, config.loss)
    return _result(x, adv, image, [loss1], config, model, loss0)


def pgd(model, prompt_set: PromptSet, image: Image, config: AttackConfig) -> AttackResult:
    """Iterated signed descent with projection; ``loss_trace[i]`` is the loss after step i."""
    if config.attacker != "pgd":
        raise ValidationError("pgd called with a non-pgd config")
    b = config.budget
    x = np.array(image.data)
    delta = np.zeros_like(x)
    if config.random_start and b.epsilon > 0:
        rng = np.random.default_rng(config.seed)
        delta = rng.uniform(-b.epsilon, b.epsilon, size=x.shape)
        delta = np.clip(x + delta, 0.0, 1.0) - x
    adv = x + delta
    loss, grad = loss_gradient(model, prompt_set, adv, config.loss)
    initial = loss
    trace = []
    for _ in range(b.iterations):
        delta = project_linf(delta - b.step_size * np.sign(grad), b.epsilon)
        adv = np.clip(x + delta, 0.0, 1.0)
        delta = adv - x
        loss, grad = loss_gradient(model, prompt_set, adv, config.loss)
        trace.append(loss)
    return _result(x, adv, image, trace, config, model, initial)


def run_attack(model, prompt_set: PromptSet, image: Image, config: AttackConfig) -> AttackResult:
    attack = fgsm if config.attacker == "fgsm" else pgd
    return attack(model, prompt_set, image, config)


def _ce_gradient(classifier, pixels: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    t = torch.tensor(pixels, dtype=classifier.dtype, requires_grad=True)
    logits = classifier.logits_tensor(t)
    loss = F.cross_entropy(logits, torch.tensor([label]))
    (grad,) = torch.autograd.grad(loss, t)
    return float(loss.detach()), grad.to(torch.float64).numpy()


def surrogate_attack(classifier, image: Image, config: AttackConfig) -> AttackResult:
    """Untargeted attack on a classifier: ascend cross-entropy of its clean prediction."""
    b = config.budget
    x = np.array(image.data)
    label = int(np.argmax(classifier.classify_forward(image)))
    delta = np.zeros_like(x)
    if config.random_start and b.epsilon > 0:
        rng = np.random.default_rng(config.seed)
        delta = np.clip(x + rng.uniform(-b.epsilon, b.epsilon, size=x.shape), 0.0, 1.0) - x
    adv = x + delta
    loss, grad = _ce_gradient(classifier, adv, label)
    initial = loss
    trace = []
    for _ in range(b.iterations):
        delta = project_linf(delta + b.step_size * np.sign(grad), b.epsilon)
        adv = np.clip(x + delta, 0.0, 1.0)
        delta = adv - x
        loss, grad = _ce_gradient(classifier, adv, label)
        trace.append(loss)
    result = _result(x, adv, image, trace, config, classifier, initial)
    adv_label = int(np.argmax(classifier.classify_forward(result.adversarial_image)))
    result.metrics.update({"clean_label": label, "adv_label": adv_label,
                           "label_flipped": float(adv_label != label)})
    return result
