"""Track clear-image absRel of the teacher as training proceeds.

    python3 scripts/teacher_convergence.py --steps 2000 --every 250
"""

import argparse
import time

import numpy as np

from acdepth import synth, trainer
from acdepth.config import load_config
from acdepth.experiments import CONFIG_DIR
from acdepth.metrics import evaluate_depth


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene", default=str(CONFIG_DIR / "desk_train.scene"))
    ap.add_argument("--config", default=str(CONFIG_DIR / "teacher.cfg"))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--every", type=int, default=250)
    args = ap.parse_args()
    triplets = synth.generate_triplets(synth.load_scene(args.scene))
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    done = 0
    print(f"{'step':>6} {'absRel':>9} {'seconds':>8}")
    while done < args.steps:
        done = min(done + args.every, args.steps)
        # retrained from scratch each time so every row is a genuine run of that length
        net, _ = trainer.train_teacher(triplets, cfg, steps=done)
        ab = np.mean([evaluate_depth(trainer.predict_depth(net, t.cur), t.depth).absRel for t in triplets])
        print(f"{done:>6} {ab:>9.5f} {time.perf_counter() - t0:>8.0f}", flush=True)


if __name__ == "__main__":
    main()
