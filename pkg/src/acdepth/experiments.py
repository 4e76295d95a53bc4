"""The desk-scale experiment pipeline, driven through the CLI.

``run_pipeline(out)`` renders the training and held-out datasets, trains the
teacher, evaluates it, and runs the component and sampling ablations. Every
stage lands in its own subdirectory of ``out`` with a manifest.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cli import main

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEGRADED = ("night", "fog")


@dataclass
class PipelineResult:
    out: Path
    seconds: dict = field(default_factory=dict)

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def csv_files(self):
        return sorted(p.relative_to(self.out) for p in self.out.rglob("*.csv"))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run(argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"acdepth {' '.join(map(str, argv))} exited with {code}")


def run_pipeline(out, seeds=DEFAULT_SEEDS, config_dir=CONFIG_DIR, stages=("data", "teacher", "components", "sampling"),
                 log=print) -> PipelineResult:
    out, cfg = Path(out), Path(config_dir)
    res = PipelineResult(out)
    kinds = ",".join(DEGRADED)
    seeds = ",".join(str(s) for s in seeds)

    def stage(name, *argvs):
        t0 = time.perf_counter()
        for argv in argvs:
            _run(argv)
        res.seconds[name] = time.perf_counter() - t0
        if log is not None:
            log(f"[pipeline] {name}: {res.seconds[name]:.1f} s")

    if "data" in stages:
        stage("data",
              ["synth", "--scene", cfg / "desk_train.scene", "--out", out / "data" / "train", "--kinds", kinds,
               "--seed", 0],
              ["synth", "--scene", cfg / "desk_eval.scene", "--out", out / "data" / "eval", "--kinds", kinds,
               "--seed", 1])
    teacher = out / "teacher" / "teacher.ckpt"
    if "teacher" in stages:
        stage("teacher",
              ["train", "teacher", "--config", cfg / "teacher.cfg", "--data", out / "data" / "train",
               "--out", out / "teacher"])
        stage("teacher_eval",
              ["eval", "--checkpoint", teacher, "--data", out / "data" / "train", "--out", out / "teacher" / "eval_train",
               "--conditions", "clear"],
              ["eval", "--checkpoint", teacher, "--data", out / "data" / "eval", "--out", out / "teacher" / "eval_heldout"])
    common = ["--config", cfg / "student.cfg", "--data", out / "data" / "train", "--eval-data", out / "data" / "eval",
              "--teacher", teacher, "--seeds", seeds, "--conditions", "clear," + kinds]
    if "components" in stages:
        stage("components", ["ablate", "--matrix", cfg / "components.matrix", "--out", out / "components", *common])
    if "sampling" in stages:
        stage("sampling", ["ablate", "--matrix", cfg / "sampling.matrix", "--out", out / "sampling", *common])
    return res
