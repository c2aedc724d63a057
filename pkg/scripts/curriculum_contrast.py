"""Standard vs reverse vs joint curriculum on the shared evaluation corpora.

    python scripts/curriculum_contrast.py --scale 1000 --lr-scale 200 --seeds 0 1 2
"""

import argparse
import json
from collections import defaultdict

import numpy as np

from emofuse import config
from emofuse.curriculum import MODES
from emofuse.train import build_model, evaluate, run_curriculum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1000)
    ap.add_argument("--lr-scale", type=float, default=200.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--modes", nargs="+", default=list(MODES))
    ap.add_argument("--tasks", nargs="+", default=["MER", "OV_MER", "MIR", "ERI", "ERG"])
    ap.add_argument("-n", type=int, default=56)
    args = ap.parse_args()
    table = defaultdict(list)
    for mode in args.modes:
        for seed in args.seeds:
            cfg = config.from_dict({"run": {"seed": seed},
                                    "curriculum": {"scale": args.scale, "lr_scale": args.lr_scale, "mode": mode}})
            res = run_curriculum(cfg, build_model(cfg))
            for r in evaluate(res.model, args.tasks, args.n):
                key = (mode, f"{r['task']}.{r['metric']}")
                table[key].append(r["value"])
                print(json.dumps({"mode": mode, "seed": seed, **r}), flush=True)
    metrics = sorted({k[1] for k in table})
    print(f"\n{'metric':<18}" + "".join(f"{m:>16}" for m in args.modes))
    for metric in metrics:
        cells = [np.mean(table[(m, metric)]) if (m, metric) in table else float("nan") for m in args.modes]
        print(f"{metric:<18}" + "".join(f"{c:16.3f}" for c in cells))


if __name__ == "__main__":
    main()
