"""Sweep the ranking and consistency weights of the full student.

Needs a finished pipeline directory (data and teacher) from run_experiments.py.

    python3 scripts/lambda_sweep.py --run runs/desk --scales 1,10,50 --seeds 0,1
"""

import argparse

from acdepth import model, trainer
from acdepth.config import load_config
from acdepth.dataset import load_dataset
from acdepth.experiments import CONFIG_DIR


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--run", required=True)
    ap.add_argument("--scales", default="1,10,50", help="multipliers applied to lambda1 and lambda2")
    ap.add_argument("--seeds", default="0")
    args = ap.parse_args()
    train = load_dataset(f"{args.run}/data/train")
    evals = load_dataset(f"{args.run}/data/eval")
    teacher = model.load_checkpoint(f"{args.run}/teacher/teacher.ckpt")
    base = load_config(CONFIG_DIR / "student.cfg")
    matrix = [("DL", base.replace(ogd=False, fcc=False))]
    for m in (float(s) for s in args.scales.split(",")):
        matrix.append((f"full x{m:g}", base.replace(lambda1=base.lambda1 * m, lambda2=base.lambda2 * m)))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = trainer.run_ablation(matrix, train.samples, teacher, evals.samples, ("clear", "night", "fog"), seeds)
    print(f"{'row':<12}{'clear':>10}{'night':>10}{'fog':>10}{'degraded':>10}")
    for r in rows:
        print(f"{r['label']:<12}" + "".join(f"{r[k]:>10.5f}" for k in
                                            ("clear_absRel", "night_absRel", "fog_absRel", "degraded_absRel")))


if __name__ == "__main__":
    main()
