"""Command line entry point: ``realdiff <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import SynthConfig, generate_synthetic_cohort, load_cohort_dir, write_cohort


def _gen_data(args) -> int:
    cohort = generate_synthetic_cohort(args.n, args.seed, SynthConfig(n_slices=args.slices))
    write_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} patients to {args.out}")
    return 0


def _train(args) -> int:
    from .experiment import run_experiment
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    log = run_experiment(cfg, load_cohort_dir(args.data), args.out, data_dir=str(Path(args.data).resolve()))
    print(json.dumps(log.metrics, indent=2, sort_keys=True))
    return 0


def _evaluate(args) -> int:
    from .experiment import evaluate, load_run
    run = load_run(args.run, load_cohort_dir(args.data) if args.data else None)
    print(json.dumps(evaluate(run.model, run.prepared), indent=2, sort_keys=True))
    return 0


def _ablate(args) -> int:
    from .experiment import render_tables, run_ablation_grid
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    tables = run_ablation_grid(cfg, load_cohort_dir(args.data), args.out, workers=args.workers,
                               data_dir=str(Path(args.data).resolve()))
    print(render_tables(tables))
    return 0


def _gradcheck(args) -> int:
    from .gradcheck_suite import run_suite
    worst = 0.0
    for name, err, tol in run_suite(seed=args.seed):
        status = "ok" if err < tol else "FAIL"
        worst = max(worst, err / tol)
        print(f"{name:<28} {err:.3e}  (tol {tol:.0e})  {status}")
    return 0 if worst < 1.0 else 1


def _plot_data(args) -> int:
    from .experiment import emit_plot_data, load_run
    run = load_run(args.run, load_cohort_dir(args.data) if args.data else None)
    out = args.out or str(Path(args.run) / "plot_data")
    for f in emit_plot_data(run, out, args.patient):
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="realdiff", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic cohort")
    g.add_argument("--n", type=int, default=40)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--slices", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_gen_data)

    t = sub.add_parser("train", help="train and evaluate one configuration")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_train)

    e = sub.add_parser("evaluate", help="recompute metrics for a saved run")
    e.add_argument("--run", required=True)
    e.add_argument("--data", help="cohort directory (defaults to the one recorded in the run)")
    e.set_defaults(fn=_evaluate)

    a = sub.add_parser("ablate", help="run the ablation grid and write its tables")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(fn=_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op and composed model")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=_gradcheck)

    p = sub.add_parser("plot-data", help="write actual-vs-predicted and trajectory CSVs")
    p.add_argument("--run", required=True)
    p.add_argument("--patient", action="append", default=[])
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(fn=_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
