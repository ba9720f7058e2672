"""
Removing a mask with PGD
========================

A point prompt on a synthetic scene, the toy segmenter's mask before and
after a PGD-10 attack under an 8/255 budget.
"""

import numpy as np

from maskattack import (AttackConfig, LossSpec, PointPrompt, PromptSet, default_segmenter, generate_scene,
                        iou, pgd)
from maskattack.data import interior
from maskattack.reporting import render_overlay

model = default_segmenter()
scene = generate_scene(seed=11)

# put the prompt in the middle of the first object
obj = scene.objects[0]
rows, cols = np.nonzero(interior(obj.mask.data))
prompt = PointPrompt(int(np.median(rows)), int(np.median(cols)))
if not interior(obj.mask.data)[prompt.row, prompt.col]:
    prompt = PointPrompt(int(rows[0]), int(cols[0]))
print("object:", obj.kind, "prompt:", prompt.as_tuple())

clean = model.predict(scene.image, prompt)
print("clean mask area:", clean.area)

for kind in ("mse_removal", "clipmse_removal"):
    cfg = AttackConfig.pgd_default(loss=LossSpec(kind))
    result = pgd(model, PromptSet((prompt,)), scene.image, cfg)
    adv = model.predict(result.adversarial_image, prompt)
    print(f"{kind:16s} loss {result.metrics['initial_loss']:8.2f} -> {result.loss_trace[-1]:8.2f}"
          f"   adv area {adv.area:4d}   IoU {iou(clean, adv):.3f}   Linf*255 {result.perturbation_linf * 255:.2f}")

# overlays for the last run
render_overlay(scene.image, clean, prompt, "remove_clean.png")
render_overlay(result.adversarial_image, adv, prompt, "remove_adv.png")
print("wrote remove_clean.png, remove_adv.png")
