"""``acdepth`` command-line driver: synth, train, eval, ablate, gradcheck.

Every command writes its outputs plus one ``manifest.json`` into ``--out``.
Data goes to files, diagnostics to stderr. Exit status is 0 on success, 1
when a gradient check fails and 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gradcheck, model
from .config import ConfigError, format_config, load_config, load_matrix
from .dataset import load_dataset, write_dataset
from .synth import KIND_TAGS, SceneError, generate_triplets, load_scene
from .trainer import (
    ABLATION_TOGGLES, PRNG_ALGORITHM, REPORT_KEYS, TrainConfig, evaluate_predictor, predict_depth,
    run_ablation, train_student, train_teacher,
)

MANIFEST_NAME = "manifest.json"
THREADS_ENV = "ACDEPTH_THREADS"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: str | None
    seeds: list
    inputs: dict
    outputs: list
    tool_version: str = __version__
    prng: str = PRNG_ALGORITHM
    wall_clock_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, out: Path) -> Path:
        path = out / MANIFEST_NAME
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _write_csv(path: Path, rows, as_json: bool = False) -> list:
    if not rows:
        raise UsageError(f"nothing to write to {path}")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    written = [path.name]
    if as_json:
        jpath = path.with_suffix(".json")
        jpath.write_text(json.dumps(rows, indent=2) + "\n")
        written.append(jpath.name)
    return written


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _apply_toggles(cfg: TrainConfig, args) -> TrainConfig:
    changes = {}
    for flag, name in (("no_dl", "dl"), ("no_ogd", "ogd"), ("no_fcc", "fcc"), ("no_global", "use_global"),
                       ("no_local", "use_local"), ("no_window", "use_window")):
        if getattr(args, flag, False):
            changes[name] = False
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    return _apply_toggles(cfg, args)


def _conditions(args, kinds) -> list:
    available = ["clear", *kinds]
    if not args.conditions:
        return available
    wanted = _csv_list(args.conditions)
    for c in wanted:
        if c not in KIND_TAGS:
            raise UsageError(f"unknown condition {c!r} (choose from {', '.join(KIND_TAGS)})")
        if c not in available:
            raise UsageError(f"condition {c!r} absent from the dataset (has {', '.join(available)})")
    return wanted


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, out: Path) -> RunManifest:
    scene = load_scene(args.scene)
    kinds = _csv_list(args.kinds)
    for k in kinds:
        if k not in KIND_TAGS or k == "clear":
            raise UsageError(f"unknown degradation kind {k!r}")
    seed = 0 if args.seed is None else args.seed
    triplets = generate_triplets(scene)
    index = write_dataset(out, triplets, kinds, seed)
    outputs = ["dataset.json"] + sorted({f for e in index["triplets"] for f in e["files"].values()})
    return RunManifest("synth", None, [seed], {"scene": str(args.scene)}, outputs,
                       extra={"triplets": len(triplets), "kinds": kinds})


def cmd_train(args, out: Path) -> RunManifest:
    cfg = _config(args)
    inputs = {"data": str(args.data)}
    if args.role == "student":
        if not args.teacher:
            raise UsageError("student training needs --teacher CHECKPOINT")
        if not Path(args.teacher).exists():
            raise UsageError(f"teacher checkpoint {args.teacher} not found")
        inputs["teacher"] = str(args.teacher)
    data = load_dataset(args.data)
    if args.role == "teacher":
        net, rows = train_teacher(data.triplets, cfg, steps=args.steps)
    else:
        teacher = model.load_checkpoint(args.teacher)
        net, rows = train_student(data.samples, teacher, cfg)
    ckpt = out / f"{args.role}.ckpt"
    model.save_checkpoint(ckpt, net)
    (out / "config.cfg").write_text(format_config(cfg))
    outputs = [ckpt.name, "config.cfg"] + _write_csv(out / f"{args.role}_log.csv", rows, args.json)
    return RunManifest(f"train {args.role}", args.config and str(args.config), [cfg.seed], inputs, outputs,
                       extra={"steps": len(rows)})


def _predictor(args):
    if args.debug_predictor == "gt":
        base = lambda img, s: s.depth
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint (or --debug-predictor gt)")
        net = model.load_checkpoint(args.checkpoint)
        base = lambda img, s: predict_depth(net, img)
    if args.debug_scale is None:
        return base
    return lambda img, s: args.debug_scale * base(img, s)


def cmd_eval(args, out: Path) -> RunManifest:
    predict = _predictor(args)
    data = load_dataset(args.data)
    conditions = _conditions(args, data.kinds)
    results = evaluate_predictor(predict, data.samples, conditions, scale=not args.no_scale)
    rows = [{"condition": c, **results[c], "frames": len(data.samples)} for c in conditions]
    outputs = _write_csv(out / "metrics.csv", rows, args.json)
    inputs = {"data": str(args.data), "checkpoint": args.checkpoint and str(args.checkpoint)}
    return RunManifest("eval", None, [], inputs, outputs,
                       extra={"scaled": not args.no_scale, "debug_predictor": args.debug_predictor,
                              "debug_scale": args.debug_scale})


def cmd_ablate(args, out: Path) -> RunManifest:
    for p in (args.teacher, args.data, args.eval_data):
        if not Path(p).exists():
            raise UsageError(f"{p} not found")
    base = _config(args)
    matrix = load_matrix(args.matrix, base)
    teacher = model.load_checkpoint(args.teacher)
    train, evals = load_dataset(args.data), load_dataset(args.eval_data)
    conditions = _conditions(args, evals.kinds)
    seeds = [int(s) for s in _csv_list(args.seeds)]
    per_seed = []

    def log(label, seed, result):
        row = {"label": label, "seed": seed}
        for c in conditions:
            for k in REPORT_KEYS:
                row[f"{c}_{k}"] = result[c][k]
        per_seed.append(row)
        print(f"[ablate] {label} seed={seed} done", file=sys.stderr, flush=True)

    rows = run_ablation(matrix, train.samples, teacher, evals.samples, conditions, seeds, log)
    outputs = _write_csv(out / "ablation.csv", rows, args.json)
    outputs += _write_csv(out / "ablation_seeds.csv", per_seed, args.json)
    inputs = {"matrix": str(args.matrix), "data": str(args.data), "eval_data": str(args.eval_data),
              "teacher": str(args.teacher)}
    return RunManifest("ablate", args.config and str(args.config), seeds, inputs, outputs,
                       extra={"rows": [label for label, _ in matrix], "toggles": list(ABLATION_TOGGLES)})


def cmd_gradcheck(args, out: Path) -> RunManifest:
    seed = 0 if args.seed is None else args.seed
    sizes = [int(s) for s in _csv_list(args.sizes)]
    paths = _csv_list(args.paths) if args.paths else None
    if paths:
        unknown = [p for p in paths if p not in gradcheck.CHECKS]
        if unknown:
            raise UsageError(f"unknown gradient path(s): {', '.join(unknown)}")
    if args.inject_fault and args.inject_fault not in gradcheck.CHECKS:
        raise UsageError(f"unknown gradient path {args.inject_fault!r}")
    rows, failed = [], []
    for size in sizes:
        for r in gradcheck.run_checks(seed, size, paths, args.inject_fault):
            rows.append({"path": r.path, "size": size, "rel_error": r.rel_error, "entries": r.entries,
                         "passed": int(r.passed)})
            print(f"{r.path:<20} size={size:<3} rel_error={r.rel_error:.3e} {'PASS' if r.passed else 'FAIL'}")
            if not r.passed:
                failed.append(f"{r.path}@{size}")
    outputs = _write_csv(out / "gradcheck.csv", rows, args.json)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
    m = RunManifest("gradcheck", None, [seed], {}, outputs,
                    extra={"sizes": sizes, "tolerance": gradcheck.TOLERANCE, "failed": failed,
                           "inject_fault": args.inject_fault})
    m.extra["exit_code"] = 1 if failed else 0
    return m


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, config=True):
    p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true", help="also write JSON mirrors of every CSV")
    if config:
        p.add_argument("--config", type=Path, default=None, help="key = value TrainConfig file")


def _toggles(p):
    for name in ("dl", "ogd", "fcc", "global", "local", "window"):
        p.add_argument(f"--no-{name}", action="store_true", help=f"disable {name.upper()}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acdepth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"acdepth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a scene file into a triplet dataset")
    _common(p, config=False)
    p.add_argument("--scene", required=True, type=Path)
    p.add_argument("--kinds", default="night,rain,fog", help="comma-separated degradations")

    p = sub.add_parser("train", help="train the teacher or distil a student")
    p.add_argument("role", choices=("teacher", "student"))
    _common(p)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--teacher", type=Path, default=None, help="teacher checkpoint (student role)")
    p.add_argument("--steps", type=int, default=None, help="cap on teacher optimisation steps")
    _toggles(p)

    p = sub.add_parser("eval", help="per-condition depth metrics")
    _common(p, config=False)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--conditions", default=None, help="comma-separated subset of clear,night,rain,fog")
    p.add_argument("--no-scale", action="store_true", help="skip per-frame median scaling")
    p.add_argument("--debug-predictor", choices=("gt",), default=None, help=argparse.SUPPRESS)
    p.add_argument("--debug-scale", type=float, default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("ablate", help="train and evaluate every row of a matrix file")
    _common(p)
    p.add_argument("--matrix", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path, help="training dataset")
    p.add_argument("--eval-data", required=True, type=Path)
    p.add_argument("--teacher", required=True, type=Path)
    p.add_argument("--seeds", default="0", help="comma-separated student seeds")
    p.add_argument("--conditions", default=None)
    _toggles(p)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _common(p, config=False)
    p.add_argument("--sizes", default="8", help="comma-separated instance sizes")
    p.add_argument("--paths", default=None, help="comma-separated subset of paths")
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck}


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            args.out.mkdir(parents=True, exist_ok=True)
            t0 = time.perf_counter()
            manifest = COMMANDS[args.command](args, args.out)
            manifest.wall_clock_seconds = round(time.perf_counter() - t0, 3)
            manifest.write(args.out)
    except (UsageError, ConfigError, SceneError, FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"acdepth {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return int(manifest.extra.get("exit_code", 0))


if __name__ == "__main__":
    sys.exit(main())
