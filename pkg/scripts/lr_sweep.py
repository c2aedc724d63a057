"""Sweep the curriculum lr multiplier for the standard schedule at a reduced step scale.

Scores every (lr_scale, seed) run on a validation corpus drawn with its own
eval seed, so the choice never looks at the acceptance evaluation corpus.

    python scripts/lr_sweep.py --scale 1000 --lr-scales 30 50 100 200 400 --seeds 0 1 2
"""

import argparse
import json
import time

import numpy as np

from emofuse import config
from emofuse.train import build_model, evaluate, run_curriculum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1000)
    ap.add_argument("--lr-scales", type=float, nargs="+", default=[30, 50, 100, 200, 400])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--mode", default="standard")
    ap.add_argument("--val-seed", type=int, default=7)
    ap.add_argument("-n", type=int, default=56, help="validation samples per task")
    ap.add_argument("--out", help="append JSON rows here")
    args = ap.parse_args()
    for lr_scale in args.lr_scales:
        for seed in args.seeds:
            cfg = config.from_dict({"run": {"seed": seed}, "eval": {"seed": args.val_seed},
                                    "curriculum": {"scale": args.scale, "lr_scale": lr_scale, "mode": args.mode}})
            t0 = time.perf_counter()
            res = run_curriculum(cfg, build_model(cfg))
            final = res.phase_losses("3") or res.phase_losses("joint")
            rows = evaluate(res.model, ["MER", "OV_MER", "MIR"], args.n)
            scores = {f"{r['task']}.{r['metric']}": round(r["value"], 4) for r in rows}
            row = {"lr_scale": lr_scale, "seed": seed, "mode": args.mode,
                   "final_nll": round(float(np.mean(final[-20:])), 4),
                   "seconds": round(time.perf_counter() - t0, 1), **scores}
            print(json.dumps(row), flush=True)
            if args.out:
                with open(args.out, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
