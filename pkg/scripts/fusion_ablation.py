"""Fusion variants and layer pairings under the standard curriculum.

Reports eval metrics plus the mean gate weight per expert, which shows
whether the gate learned to prefer one speech/visual layer pairing.

    python scripts/fusion_ablation.py --scale 1000 --lr-scale 200 --seeds 0
"""

import argparse
import json

import numpy as np

from emofuse import config
from emofuse import tensor as T
from emofuse.train import build_model, eval_corpus, evaluate, run_curriculum

VARIANTS = {
    "gated": {"fusion": {"mode": "experts_gated"}},
    "average": {"fusion": {"mode": "average_weighting"}},
    "single_attention": {"fusion": {"mode": "attention_fusion"}},
    "no_fusion": {"fusion": {"mode": "none"}},
    "gated_cross_layer": {"fusion": {"mode": "experts_gated", "pairing": "cross_layer"}},
}


def gate_means(model, cfg, n):
    ws = []
    with T.no_grad():
        for task in ("MER", "MIR"):
            for s in eval_corpus(cfg, task, n):
                _, w = model.prefix_blocks(s, return_gates=True)
                ws.append(np.asarray(w.data, dtype=np.float64).mean(axis=0))
    return np.round(np.mean(ws, axis=0), 4).tolist()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1000)
    ap.add_argument("--lr-scale", type=float, default=200.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("-n", type=int, default=56)
    args = ap.parse_args()
    for name in args.variants:
        for seed in args.seeds:
            data = {"run": {"seed": seed}, "curriculum": {"scale": args.scale, "lr_scale": args.lr_scale}}
            data.update(VARIANTS[name])
            cfg = config.from_dict(data)
            res = run_curriculum(cfg, build_model(cfg))
            row = {"variant": name, "seed": seed,
                   "final_nll": round(float(np.mean(res.phase_losses("3")[-20:])), 4)}
            row.update({f"{r['task']}.{r['metric']}": round(r["value"], 4)
                        for r in evaluate(res.model, ["MER", "OV_MER", "MIR"], args.n)})
            if cfg.fusion.mode in ("experts_gated", "average_weighting"):
                row["gate_mean"] = gate_means(res.model, cfg, 8)
            print(json.dumps(row), flush=True)


if __name__ == "__main__":
    main()
