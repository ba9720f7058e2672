"""Command-line front end: gen-data, train-toy, attack, sweep, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Config files are JSON; explicit flags override file keys. The merged,
canonical config is embedded in every report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .core import ValidationError, digest_json

log = logging.getLogger("maskattack")

OUTPUT_ENV = "MASKATTACK_OUTPUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_number(text: str) -> float:
    """Accept plain floats and fractions such as ``8/255``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a number: {text!r}") from None


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# run configuration

ATTACK_DEFAULTS = {
    "attacker": "pgd", "epsilon": 8 / 255, "step_size": 2 / 255, "iterations": 10,
    "random_start": False, "seed": 0,
    "loss": {"kind": "clipmse_removal", "neg_th": -10.0, "pos_th": 10.0, "aggregation": "sum"},
}


@dataclass
class RunConfig:
    dataset: dict
    model: dict
    task: dict
    attack: dict
    seed: int = 0
    output: str = ""
    workers: int = 1
    overlays: int = 0
    classifier: dict | None = None

    def canonical(self) -> dict:
        """Everything that influences results; output location and worker count do not."""
        d = asdict(self)
        for key in ("output", "workers", "overlays"):
            d.pop(key)
        return json.loads(json.dumps(d, sort_keys=True))

    def digest(self) -> str:
        return digest_json(self.canonical())

    def validate(self):
        from .attacks import AttackConfig
        from .tasks import TaskSpec

        if not self.dataset.get("path"):
            raise UsageError("a dataset path is required (--data or config 'dataset.path')")
        if not Path(self.dataset["path"]).exists():
            raise UsageError(f"dataset path {self.dataset['path']} does not exist")
        if not self.model.get("checkpoint") and self.model.get("adapter", "toy") != "toy":
            raise UsageError("non-toy adapters need an explicit checkpoint")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        try:
            task = TaskSpec.from_dict(self.task)
            attack = AttackConfig.from_dict(self.attack)
        except (ValidationError, KeyError, TypeError) as exc:
            raise UsageError(f"invalid configuration: {exc}") from None
        if task.kind == "cross_task" and not (self.classifier or {}).get("checkpoint"):
            raise UsageError("cross_task needs --classifier CHECKPOINT")
        return task, attack


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def build_run_config(args) -> RunConfig:
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    attack = _merge(ATTACK_DEFAULTS, file_cfg.get("attack", {}))
    attack = _merge(attack, {
        "attacker": args.attacker, "epsilon": args.epsilon, "step_size": args.step_size,
        "iterations": args.iters, "seed": args.seed,
        "random_start": True if args.random_start else None,
        "loss": {"kind": args.loss, "neg_th": args.neg_th, "pos_th": args.pos_th,
                 "aggregation": args.aggregation},
    })
    if attack["attacker"] == "fgsm":
        attack["iterations"] = 1
        attack["step_size"] = attack["epsilon"]
    elif attack["epsilon"] == 0:
        attack["step_size"] = 0.0
    else:
        attack["step_size"] = min(attack["step_size"], attack["epsilon"])

    task = dict(file_cfg.get("task", {"kind": "removal", "parameters": {}}))
    if args.task:
        task = {"kind": args.task, "parameters": dict(task.get("parameters", {}))
                if task.get("kind") == args.task else {}}
    params = task.setdefault("parameters", {})
    for key, value in (("K", args.K), ("targets", args.targets), ("shape", args.shape),
                       ("axis", args.axis)):
        if value is not None:
            params[key] = value
    if args.offset is not None:
        params["offset"] = list(args.offset)
    kind = task["kind"]
    if kind == "cross_prompt":
        params.setdefault("K", 1)
    if kind in ("shift_duplicate", "shift_translate"):
        params.setdefault("offset", [0, 16])
    if kind in ("flip_duplicate", "flip_replace"):
        params.setdefault("axis", "horizontal")
    if kind == "target_shape":
        params.setdefault("shape", "circle")
    if kind in ("enlarge",):
        attack["loss"]["kind"] = "clipmse_enlarge"
    elif kind in ("shift_duplicate", "shift_translate", "flip_duplicate", "flip_replace",
                  "target_shape", "target_other_prompt", "target_other_image"):
        attack["loss"]["kind"] = "region_target"
    elif kind == "removal":
        params.setdefault("loss", attack["loss"]["kind"])
        attack["loss"]["kind"] = params["loss"]

    dataset = _merge(file_cfg.get("dataset", {}), {"path": args.data})
    model = _merge(file_cfg.get("model", {"adapter": "toy"}),
                   {"checkpoint": args.checkpoint, "adapter": args.adapter})
    classifier = _merge(file_cfg.get("classifier") or {}, {"checkpoint": args.classifier}) or None
    return RunConfig(
        dataset=dataset, model=model, task=task, attack=attack,
        seed=args.seed if args.seed is not None else file_cfg.get("seed", 0),
        output=args.out or file_cfg.get("output") or "",
        workers=args.workers if args.workers is not None else file_cfg.get("workers", 1),
        overlays=args.overlays if args.overlays is not None else file_cfg.get("overlays", 0),
        classifier=classifier,
    )


def _load_segmenter(model_cfg: dict):
    from .model import ToySegmenter, default_segmenter, get_adapter

    adapter = model_cfg.get("adapter", "toy")
    path = model_cfg.get("checkpoint")
    if adapter == "toy":
        seg = ToySegmenter.load(path) if path else default_segmenter()
    else:
        seg = get_adapter(adapter).load(path)
    model_cfg["digest"] = getattr(seg, "checkpoint_digest", adapter)
    return seg


def _load_dataset(path):
    from .data import load_dataset, make_benchmark

    dataset, manifest = load_dataset(path)
    if manifest is None:
        manifest = make_benchmark(dataset.scenes, 1, dataset.seed)
    return dataset, manifest


def execute_run(cfg: RunConfig):
    """Run one configured attack; returns (report, outcome)."""
    from .attacks import AttackConfig
    from .harness import run_task
    from .model import ToyClassifier
    from .reporting import make_report
    from .tasks import TaskSpec

    task, attack = cfg.validate()
    dataset, manifest = _load_dataset(cfg.dataset["path"])
    cfg.dataset["digest"] = dataset.digest()
    model = _load_segmenter(cfg.model)
    classifier = None
    if task.kind == "cross_task":
        classifier = ToyClassifier.load(cfg.classifier["checkpoint"])
        cfg.classifier["digest"] = classifier.checkpoint_digest
    start = time.perf_counter()
    outcome = run_task(model, manifest, task, attack, classifier=classifier, seed=cfg.seed,
                       workers=cfg.workers)
    report = make_report(outcome, cfg.canonical(), wall_time=time.perf_counter() - start)
    return report, outcome, model, manifest


def _write_overlays(cfg: RunConfig, report, model, manifest, out: Path):
    """Clean and adversarial overlays for the first ``cfg.overlays`` manifest rows."""
    from .attacks import AttackConfig, run_attack
    from .core import PromptSet
    from .reporting import render_overlay
    from .tasks import build_removal

    attack = AttackConfig.from_dict(cfg.attack)
    if report.task_kind != "removal":
        return
    for row in manifest.rows[: cfg.overlays]:
        image = manifest.scene(row).image
        loss, prompts = build_removal(row.prompt, attack.loss.kind, attack.loss.neg_th)
        res = run_attack(model, prompts, image, attack.with_loss(loss))
        render_overlay(image, model.predict(image, row.prompt), row.prompt,
                       out / "overlays" / f"{image.id}_clean.png")
        render_overlay(res.adversarial_image, model.predict(res.adversarial_image, row.prompt),
                       row.prompt, out / "overlays" / f"{image.id}_adv.png")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    from .data import PlacementError, SceneConfig, generate_dataset, make_benchmark, save_dataset

    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    try:
        config = SceneConfig(size=args.size, min_objects=args.min_objects, max_objects=args.max_objects)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else output_root() / f"data-{args.seed}"
    try:
        dataset = generate_dataset(args.scenes, args.seed, config)
    except PlacementError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    manifest = make_benchmark(dataset.scenes, args.pairs_per_scene, args.seed)
    save_dataset(dataset, out, manifest)
    print(json.dumps({"path": str(out), "scenes": len(dataset), "pairs": len(manifest),
                      "digest": dataset.digest()}))
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .data import SyntheticDataset, load_dataset
    from .model import (ClassifierSpec, ToyModelSpec, TrainingError, classifier_accuracy,
                        train_classifier, train_toy)

    if not args.data or not Path(args.data).exists():
        raise UsageError("--data must point to a dataset directory written by gen-data")
    dataset, _ = load_dataset(args.data)
    n_held = max(1, int(round(len(dataset) * args.heldout_fraction)))
    if len(dataset) - n_held < 1:
        raise UsageError("dataset too small to split off a held-out set")
    train = SyntheticDataset(dataset.scenes[:-n_held], dataset.config, dataset.seed)
    held = SyntheticDataset(dataset.scenes[-n_held:], dataset.config, dataset.seed)
    out = Path(args.out)
    geometry = {"image_size": dataset.config.size, "channels": dataset.config.channels}
    if args.kind == "classifier":
        spec = ClassifierSpec(seed=args.seed, steps=args.steps or ClassifierSpec.steps, **geometry)
        model = train_classifier(spec, train, checkpoint=out)
        summary = {"accuracy": classifier_accuracy(model, held.scenes)}
    else:
        kw = {"seed": args.seed, **geometry}
        if args.steps:
            kw["steps"] = args.steps
        spec = ToyModelSpec(**kw)
        try:
            model = train_toy(spec, train, held, checkpoint=out)
        except TrainingError as exc:
            log.error("%s", exc)
            return EXIT_FAIL
        summary = {"heldout_miou": model.train_miou}
    print(json.dumps({"checkpoint": str(out), "digest": model.checkpoint_digest, **summary}))
    return EXIT_OK


def cmd_attack(args) -> int:
    from .reporting import persist

    cfg = build_run_config(args)
    report, outcome, model, manifest = execute_run(cfg)
    out = Path(cfg.output) if cfg.output else output_root() / report.run_id
    persist(report, out)
    if cfg.overlays:
        _write_overlays(cfg, report, model, manifest, out)
    print(json.dumps({"report": str(out / "report.json"), "miou": report.miou,
                      "success_rate": report.aggregates["success_rate"],
                      "failures": len(outcome.failures), "digest": report.digest()}))
    return EXIT_FAIL if outcome.failures else EXIT_OK


SWEEP_PARAMS = ("K", "epsilon", "iters", "step_size")


def cmd_sweep(args) -> int:
    from .reporting import persist, tabulate

    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    if len(set(values)) != len(values):
        raise UsageError(f"duplicate sweep values in {args.values!r}")
    numbers = [parse_number(v) for v in values]
    if len(set(numbers)) != len(numbers):
        raise UsageError(f"duplicate sweep values in {args.values!r}")
    if args.param == "K" and not args.task:
        args.task = "cross_prompt"
    root = Path(args.out) if args.out else output_root() / f"sweep-{args.param}"
    reports, failed = [], False
    for text, value in zip(values, numbers):
        if args.param == "K":
            args.K = int(value)
        elif args.param == "epsilon":
            args.epsilon = value
        elif args.param == "iters":
            args.iters = int(value)
        else:
            args.step_size = value
        cfg = build_run_config(args)
        cfg.output = str(root / f"{args.param}={text.replace('/', '_')}")
        report, outcome, _, _ = execute_run(cfg)
        persist(report, cfg.output)
        reports.append(report)
        failed |= bool(outcome.failures)
    table = tabulate(reports)
    (root / "table.csv").write_text(table.to_csv())
    (root / "table.txt").write_text(table.to_text())
    print(table.to_text(), end="")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    from .reporting import load_report, tabulate

    try:
        reports = [load_report(p) for p in args.runs]
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    try:
        table = tabulate(reports)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    text = table.to_csv() if args.format == "csv" else table.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _attack_flags(p):
    p.add_argument("--config", help="JSON run-config file; flags override its keys")
    p.add_argument("--data", help="dataset directory from gen-data")
    p.add_argument("--checkpoint", help="toy segmenter checkpoint (default: cached pretrained)")
    p.add_argument("--adapter", default=None, help="segmenter backend registration name")
    p.add_argument("--classifier", help="surrogate classifier checkpoint (cross_task)")
    p.add_argument("--task", choices=None)
    p.add_argument("--attacker", choices=("fgsm", "pgd"))
    p.add_argument("--epsilon", type=parse_number)
    p.add_argument("--step-size", type=parse_number)
    p.add_argument("--iters", type=int)
    p.add_argument("--loss", choices=("mse_removal", "clipmse_removal"))
    p.add_argument("--neg-th", type=float)
    p.add_argument("--pos-th", type=float)
    p.add_argument("--aggregation", choices=("sum", "mean"))
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--K", type=int)
    p.add_argument("--targets", type=int)
    p.add_argument("--shape", choices=("circle", "square"))
    p.add_argument("--axis", choices=("horizontal", "vertical"))
    p.add_argument("--offset", type=int, nargs=2)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--overlays", type=int, help="render overlays for the first N pairs")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    from .tasks import TASK_KINDS

    parser = _Parser(prog="maskattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark")
    p.add_argument("--scenes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=3)
    p.add_argument("--pairs-per-scene", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-toy", help="train the toy segmenter or surrogate classifier")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("segmenter", "classifier"), default="segmenter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--heldout-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("attack", help="attack every manifest pair and write a report")
    _attack_flags(p)
    p.set_defaults(func=cmd_attack)
    for action in p._actions:
        if action.dest == "task":
            action.choices = TASK_KINDS

    p = sub.add_parser("sweep", help="repeat an attack over a parameter grid")
    _attack_flags(p)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--values", required=True, help="comma-separated; fractions like 8/255 allowed")
    p.set_defaults(func=cmd_sweep)
    for action in p._actions:
        if action.dest == "task":
            action.choices = TASK_KINDS

    p = sub.add_parser("report", help="tabulate stored runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--format", choices=("csv", "txt"), default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"maskattack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
