"""Command-line interface.

Verbs: ``optimize`` (synthesize a strategy), ``sweep`` (repeat the synthesis
over a grid of one builtin-objective parameter), ``check-gradients``
(validate tape gradients against finite differences), and ``eval`` (score a
strategy file against an objective).  Exit codes: 0 success, 1 I/O failure,
2 all trials undefined, 64 usage error.
"""
from __future__ import annotations

import argparse
import sys

from .harness import EXIT_USAGE, RunManifest, SweepSpec, check_gradients, eval_strategy, run_optimize, run_sweep


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser, with_out: bool = True):
    p.add_argument("--graph", required=True, help="graph JSON file")
    p.add_argument("--objective", required=True, help="objective JSON file")
    p.add_argument("--memory", type=int, default=1, help="number of memory states (default 1)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    p.add_argument("--steps", type=int, default=None, help="gradient steps per trial")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--cutoff", type=float, default=None, help="probability cutoff threshold")
    p.add_argument("--direction", choices=["minimize", "maximize"], default=None,
                   help="override the objective file's direction")
    if with_out:
        p.add_argument("--out", required=True, help="output directory")


def _manifest(args, out_required: bool = True) -> RunManifest:
    overrides = {"seed": args.seed}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.cutoff is not None:
        overrides["cutoff_threshold"] = args.cutoff
    return RunManifest(
        graph_path=args.graph,
        objective_path=args.objective,
        out_dir=getattr(args, "out", "."),
        memory_count=args.memory,
        n_trials=getattr(args, "trials", 1),
        direction=args.direction,
        overrides=overrides,
    )


def main(argv=None) -> int:
    parser = _Parser(prog="stratsyn", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_opt = sub.add_parser("optimize", help="synthesize a strategy")
    _add_common(p_opt)
    p_opt.add_argument("--trials", type=int, default=1, help="independent restarts (default 1)")

    p_sweep = sub.add_parser("sweep", help="synthesize across a parameter grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--trials", type=int, default=100, help="trials per value (default 100)")
    p_sweep.add_argument("--param", required=True, help="swept objective parameter (e.g. beta)")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated parameter values, e.g. 0,0.2,0.4")

    p_grad = sub.add_parser("check-gradients", help="finite-difference gradient check")
    _add_common(p_grad, with_out=False)
    p_grad.add_argument("--samples", type=int, default=20, help="random points to test (default 20)")

    p_eval = sub.add_parser("eval", help="evaluate a strategy file")
    _add_common(p_eval, with_out=False)
    p_eval.add_argument("--strategy", required=True, help="strategy JSON file")

    args = parser.parse_args(argv)
    if args.verb == "optimize":
        return run_optimize(_manifest(args))
    if args.verb == "sweep":
        try:
            values = tuple(float(x) for x in args.values.split(",") if x.strip() != "")
        except ValueError:
            print("error: --values must be comma-separated numbers", file=sys.stderr)
            return EXIT_USAGE
        return run_sweep(_manifest(args), SweepSpec(args.param, values, args.trials))
    if args.verb == "check-gradients":
        return check_gradients(_manifest(args, out_required=False), samples=args.samples)
    if args.verb == "eval":
        return eval_strategy(_manifest(args, out_required=False), args.strategy)
    return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
