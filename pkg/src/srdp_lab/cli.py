"""Command-line entry points: gen-data, train, eval, plot, report."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bandit
from .config import ExperimentConfig, config_from_text, load_config
from .harness import read_csv, rng_for, run_experiment, summarize, STREAM_DATA
from .metrics import grouped_chamfer, quadrant_accuracy
from .plots import emit_scatter_svg, plot_chamfer_curves
from .policy import load_policy


def _cmd_gen_data(args):
    spec = bandit.get_preset(args.preset)
    rng = rng_for(args.seed, STREAM_DATA)
    ds = bandit.generate_dataset(spec, args.n, args.box, rng, seed=args.seed)
    bandit.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def _cmd_train(args):
    if args.config:
        cfg = load_config(args.config, overrides=args.set)
    else:
        cfg = config_from_text("\n".join(args.set or []),
                               base=ExperimentConfig())
    if args.out_dir:
        cfg.out_dir = args.out_dir
    out = run_experiment(cfg)
    for seed, msg in out["failures"].items():
        print(f"seed {seed} FAILED: {msg}", file=sys.stderr)
    for row in out["summary"]:
        print(f"iter {row['iter']}: chamfer {row['chamfer_mean']:.4f} "
              f"+/- {row['chamfer_std']:.4f} over {row['n_seeds']} seeds")
    return 1 if out["failures"] else 0


def _cmd_eval(args):
    spec = bandit.get_preset(args.preset)
    policy, _, _ = load_policy(args.checkpoint, action_box=spec.action_box)
    rng = np.random.default_rng([args.seed])
    report = grouped_chamfer(policy, spec, n_eval=args.n_eval, m_ref=args.m_ref,
                             rng=rng)
    acc = quadrant_accuracy(policy, spec, n=args.n_eval,
                            rng=np.random.default_rng([args.seed, 1]))
    for q in (1, 2, 3, 4):
        print(f"group {q}: chamfer {report.per_group[q]:.4f}")
    print(f"total: {report.total:.4f}")
    print(f"quadrant accuracy: {acc:.3f}")
    return 0


def _cmd_plot(args):
    spec = bandit.get_preset(args.preset)
    policy, _, _ = load_policy(args.checkpoint, action_box=spec.action_box)
    emit_scatter_svg(policy, spec, args.n, args.seed, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_report(args):
    summaries = {}
    for run_dir in args.run_dirs:
        path = os.path.join(run_dir, "results.csv")
        _, rows = read_csv(path)
        label = os.path.basename(os.path.normpath(run_dir))
        summaries[label] = summarize(rows)
    out_csv = os.path.join(args.out_dir, "report_summary.csv")
    os.makedirs(args.out_dir, exist_ok=True)
    with open(out_csv, "w") as fh:
        fh.write("run,iter,n_seeds,chamfer_mean,chamfer_std\n")
        for label, rows in summaries.items():
            for r in rows:
                fh.write(f"{label},{r['iter']},{r['n_seeds']},"
                         f"{r['chamfer_mean']:.17g},{r['chamfer_std']:.17g}\n")
    fig_path = os.path.join(args.out_dir, "report_chamfer.svg")
    plot_chamfer_curves(summaries, fig_path)
    print(f"wrote {out_csv}")
    print(f"wrote {fig_path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="srdp-lab",
        description="Multimodal contextual-bandit laboratory for "
                    "reconstruction-regularized diffusion policies.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a bandit dataset CSV")
    g.add_argument("--preset", default="unit008",
                   choices=sorted(bandit.PRESETS))
    g.add_argument("--box", default="train", choices=("train", "test"))
    g.add_argument("--n", type=int, default=10000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="run a training experiment")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.add_argument("--out-dir", help="override the output directory")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a policy checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--preset", default="unit008",
                   choices=sorted(bandit.PRESETS))
    e.add_argument("--n-eval", type=int, default=1000)
    e.add_argument("--m-ref", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    pl = sub.add_parser("plot", help="render the evaluation scatter SVG")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--preset", default="unit008",
                    choices=sorted(bandit.PRESETS))
    pl.add_argument("--n", type=int, default=1000)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)

    r = sub.add_parser("report", help="aggregate run directories into "
                                      "figures and a summary table")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out-dir", default="report")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
