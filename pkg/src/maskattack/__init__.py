"""Adversarial attacks on promptable segmentation models.

Removal, enlargement and targeted mask attacks (FGSM and PGD under an
L-infinity budget) against a segmenter that maps (image, point prompt) to a
logit map, plus a small pretrained toy segmenter and synthetic shapes
benchmark to run them on.
"""

from .attacks import AttackConfig, fgsm, pgd, run_attack, surrogate_attack
from .core import (AttackBudget, AttackResult, BinaryMask, CapabilityError, Image, LogitMap,
                   PointPrompt, PromptSet, ValidationError, binarize, sample_prompts)
from .data import SceneConfig, generate_dataset, generate_scene, make_benchmark
from .losses import LossSpec, clipmse_enlarge, clipmse_removal, mse_removal, region_target
from .metrics import EvalRecord, iou, miou
from .model import (ToyClassifier, ToyModelSpec, ToySegmenter, default_classifier,
                    default_segmenter, loss_gradient)
from .tasks import TaskSpec

__version__ = "0.1.0"

__all__ = [
    "AttackBudget", "AttackConfig", "AttackResult", "BinaryMask", "CapabilityError", "EvalRecord",
    "Image", "LogitMap", "LossSpec", "PointPrompt", "PromptSet", "SceneConfig", "TaskSpec",
    "ToyClassifier", "ToyModelSpec", "ToySegmenter", "ValidationError", "binarize",
    "clipmse_enlarge", "clipmse_removal", "default_classifier", "default_segmenter", "fgsm",
    "generate_dataset", "generate_scene", "iou", "loss_gradient", "make_benchmark", "miou",
    "mse_removal", "pgd", "region_target", "run_attack", "sample_prompts", "surrogate_attack",
]
