"""Command line: train, eval, gradcheck, trace-schedule, inspect-gates, sample.

Exit codes: 0 success, 1 invalid configuration or input, 2 non-finite
numerics during a run, 3 failed verification.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .checkpoint import CheckpointError
from .tensor import ConfigError, NonFiniteError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


def _config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    data = cfg.to_dict()
    if args.seed is not None:
        data["run"]["seed"] = args.seed
    if args.scale is not None:
        data["curriculum"]["scale"] = args.scale
    if getattr(args, "out", None):
        data["run"]["out_dir"] = args.out
    return config_mod.from_dict(data)


def _emit(rows, fh=None) -> None:
    fh = fh or sys.stdout
    for r in rows:
        fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    from .train import train
    cfg = _config(args)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "run.log").open("a", encoding="utf-8") as log_fh:
        def log(row):
            log_fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {json.dumps(row, sort_keys=True)}\n")
            log_fh.flush()
        result = train(cfg, out, log=log)
    last = result.losses[-1] if result.losses else {}
    print(json.dumps({"out_dir": str(out), "steps": len(result.losses), "final_loss": last.get("loss")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import write_report
    from .train import build_model, evaluate, load_model
    cfg = _config(args)
    model = load_model(cfg, args.checkpoint) if args.checkpoint else build_model(cfg)
    tasks = args.tasks.split(",") if args.tasks else None
    rows = evaluate(model, tasks, args.n)
    _emit(rows)
    if args.report:
        write_report(rows, args.report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_all
    t0 = time.perf_counter()
    results = run_all(seed=args.seed or 0)
    print(format_table(results))
    print(f"total {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_trace_schedule(args) -> int:
    from .curriculum import trace_schedule
    cfg = _config(args)
    trace = trace_schedule(cfg)
    sys.stdout.write(trace.dumps())
    if args.out_file:
        trace.write(args.out_file)
    return EXIT_OK


def cmd_inspect_gates(args) -> int:
    from . import tensor as T
    from .train import build_model, eval_corpus, load_model
    cfg = _config(args)
    if cfg.fusion.mode not in ("experts_gated", "average_weighting"):
        raise ConfigError(f"fusion.mode '{cfg.fusion.mode}' has no gate to inspect")
    model = load_model(cfg, args.checkpoint) if args.checkpoint else build_model(cfg)
    tasks = args.tasks.split(",") if args.tasks else list(cfg.eval.tasks)
    rows = []
    with T.no_grad():
        for task in tasks:
            for s in eval_corpus(cfg, task, args.n):
                _, w = model.prefix_blocks(s, return_gates=True)
                for pos, g in enumerate(np.asarray(w.data, dtype=np.float64)):
                    row = {"sample_id": s.sample_id, "position": pos}
                    row.update({f"g{i + 1}": float(x) for i, x in enumerate(g)})
                    rows.append(row)
    _emit(rows)
    return EXIT_OK


def cmd_sample(args) -> int:
    from .tasks import TaskForge, write_corpus
    cfg = _config(args)
    forge = TaskForge(cfg.data)
    rng = np.random.default_rng(args.seed or 0)
    samples = [forge.generate(args.task, rng, sample_id=f"{args.task}-{i}") for i in range(args.n)]
    path = write_corpus(samples, args.out or cfg.run.out_dir)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emofuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scale", type=int, help="step divisor for the curriculum budgets")
        return sp

    sp = common(sub.add_parser("train", help="run the configured curriculum"))
    sp.add_argument("--out", help="output directory (overrides run.out_dir)")
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("eval", help="metric report on seeded eval corpora"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--tasks", help="comma separated task list")
    sp.add_argument("-n", type=int, default=None, help="samples per task")
    sp.add_argument("--report", help="also write the JSONL report here")
    sp.set_defaults(fn=cmd_eval)

    sp = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"))
    sp.set_defaults(fn=cmd_gradcheck)

    sp = common(sub.add_parser("trace-schedule", help="print the step-by-step schedule trace"))
    sp.add_argument("--out-file")
    sp.set_defaults(fn=cmd_trace_schedule)

    sp = common(sub.add_parser("inspect-gates", help="dump per-position fusion gate weights"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--tasks")
    sp.add_argument("-n", type=int, default=4)
    sp.set_defaults(fn=cmd_inspect_gates)

    sp = common(sub.add_parser("sample", help="write a synthetic corpus"))
    sp.add_argument("--task", required=True)
    sp.add_argument("-n", type=int, default=8)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_sample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
