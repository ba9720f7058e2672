"""
Forcing a chosen mask
=====================

With the region loss the attacker decides what the mask should be: a
circle in the middle of the image, a shifted copy of the original, or the
original plus its mirror image. PGD-100 with small steps, same 8/255 budget.
"""

import numpy as np

from maskattack import AttackConfig, PromptSet, default_segmenter, generate_scene, iou, pgd
from maskattack.core import PointPrompt
from maskattack.data import interior
from maskattack.reporting import render_overlay
from maskattack.tasks import build_manipulation, build_target_mask, targeted_loss

model = default_segmenter()
scene = generate_scene(seed=21)
rows, cols = np.nonzero(interior(scene.objects[0].mask.data))
prompt = PointPrompt(int(rows[len(rows) // 2]), int(cols[len(cols) // 2]))
clean = model.predict(scene.image, prompt)

targets = {
    "circle": build_target_mask("circle", {"center": (32, 32), "radius": 8}, scene.image.shape),
    "shifted": build_manipulation(clean, "translate", {"offset": (0, 6)}),
    "flipped": build_manipulation(clean, "flip_duplicate", {"axis": "horizontal"}),
}

config = AttackConfig.pgd_targeted()
for name, target in targets.items():
    res = pgd(model, PromptSet((prompt,)), scene.image, config.with_loss(targeted_loss(target)))
    adv = model.predict(res.adversarial_image, prompt)
    print(f"{name:8s} target area {target.area:4d}  IoU(adv, target) {iou(adv, target):.3f}"
          f"  IoU(adv, clean) {iou(adv, clean):.3f}")
    render_overlay(res.adversarial_image, adv, prompt, f"targeted_{name}.png")
