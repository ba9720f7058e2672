"""
Transfer from a classifier
==========================

Adversarial images crafted against a small shape classifier, with no
access to the segmenter, then fed to the segmenter. Some masks break,
most survive.
"""

from maskattack import AttackConfig, default_classifier, default_segmenter, generate_dataset, make_benchmark
from maskattack.harness import run_cross_task, run_removal

segmenter = default_segmenter()
classifier = default_classifier()
bench = make_benchmark(generate_dataset(8, seed=5, prefix="demo").scenes, 1, seed=5)
config = AttackConfig.pgd_default()

transfer = run_cross_task(segmenter, classifier, bench, config)
white_box = run_removal(segmenter, bench, config)
print(f"classifier label flips   {transfer.extra['surrogate_flip_rate']:.2f}")
print(f"segmenter mIoU, transfer {transfer.miou:.4f}")
print(f"segmenter mIoU, white-box {white_box.miou:.4f}")
