"""Run the full desk-scale pipeline and print the ablation tables.

    python3 scripts/run_experiments.py --out runs/desk
    python3 scripts/run_experiments.py --out runs/desk --stages components --seeds 0,1
"""

import argparse

from acdepth.experiments import CONFIG_DIR, DEFAULT_SEEDS, read_csv, run_pipeline

STAGES = ("data", "teacher", "components", "sampling")


def print_table(title, rows, cols=("clear_absRel", "night_absRel", "fog_absRel", "degraded_absRel")):
    print(f"\n{title}")
    print(f"{'row':<14}" + "".join(f"{c:>17}" for c in cols))
    for r in rows:
        print(f"{r['label']:<14}" + "".join(f"{float(r[c]):>17.6f}" for c in cols))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", default=",".join(map(str, DEFAULT_SEEDS)))
    ap.add_argument("--stages", default=",".join(STAGES))
    ap.add_argument("--configs", default=str(CONFIG_DIR))
    args = ap.parse_args()
    seeds = tuple(int(s) for s in args.seeds.split(","))
    stages = tuple(args.stages.split(","))
    res = run_pipeline(args.out, seeds, args.configs, stages)
    if "teacher" in stages:
        for split in ("eval_train", "eval_heldout"):
            print_table(f"teacher {split}", [dict(r, label=r["condition"]) for r in
                                             read_csv(res.path("teacher", split, "metrics.csv"))],
                        cols=("absRel", "sqRel", "RMSE", "delta1"))
    for stage in ("components", "sampling"):
        if stage in stages:
            print_table(f"{stage} (mean over {len(seeds)} seeds)", read_csv(res.path(stage, "ablation.csv")))
    print("\n" + ", ".join(f"{k} {v:.0f} s" for k, v in res.seconds.items()))


if __name__ == "__main__":
    main()
