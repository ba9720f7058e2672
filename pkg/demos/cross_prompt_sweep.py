"""
Attacking many prompts at once
==============================

The perturbation is optimised against K source prompts and then judged on
fresh target prompts the attack never saw. More source prompts spread the
attack over the image and remove masks for unseen prompts too.
"""

from maskattack import AttackConfig, default_segmenter, generate_dataset, make_benchmark
from maskattack.harness import run_cross_prompt
from maskattack.reporting import make_report, tabulate

model = default_segmenter()
scenes = generate_dataset(8, seed=3, prefix="demo")
bench = make_benchmark(scenes.scenes, 1, seed=3)
config = AttackConfig.pgd_default()

reports = []
for K in (1, 4, 16, 64):
    outcome = run_cross_prompt(model, bench, config, K, n_targets=16, seed=0)
    print(f"K={K:3d}  target pairs {len(outcome.records):4d}  mIoU {outcome.miou:.4f}")
    reports.append(make_report(outcome, {"attack": config.to_dict()}))

print()
print(tabulate(reports).to_text())
