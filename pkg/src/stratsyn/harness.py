"""Run manifests, result export, and the sweep harness.

All outputs are flat files: ``best_strategy.json`` (full per-configuration
distributions), ``trials.csv`` (one row per trial), ``summary.json`` (best
value plus a config echo), and for sweeps ``sweep.csv`` / ``sweep_summary.csv``
with objective-specific decomposition columns (mp/dmp for mean payoff,
max_eren/max_devren for renewal).  Exit codes follow scripting conventions:
0 success, 1 I/O failure, 2 every trial undefined, 64 usage error.

Outputs are byte-reproducible for identical manifests; the trials.csv
``wall_ms`` column is therefore reserved and always written as 0.
"""
from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__ as _version
from . import expr as E
from .evaluate import AtomCache, eval_in_bscc, sigma_value
from .formats import (
    ObjectiveSpec,
    ParseError,
    load_graph,
    load_objective,
    load_strategy,
    objective_from_json,
    write_strategy,
)
from .gradient import compile_relaxed, finite_diff_check
from .model import Coefficients, Strategy, build_config_graph
from .objectives import PayoffSpec
from .optimize import OptimizerConfig, TrialResult, run_trials
from .relax import relax

EXIT_OK = 0
EXIT_IO = 1
EXIT_UNDEFINED = 2
EXIT_USAGE = 64


@dataclass(frozen=True)
class RunManifest:
    """Everything one synthesis run needs: inputs, budget, output directory."""

    graph_path: str
    objective_path: str
    out_dir: str
    memory_count: int = 1
    n_trials: int = 1
    direction: str | None = None  # default comes from the objective file
    overrides: dict = field(default_factory=dict)  # OptimizerConfig fields


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter sweep of a builtin objective."""

    parameter: str
    values: tuple[float, ...]
    trials_per_value: int = 100


def _optimizer_config(m: RunManifest) -> OptimizerConfig:
    try:
        return OptimizerConfig(**m.overrides)
    except TypeError as err:
        raise ParseError(f"bad optimizer override: {err}") from None


def _load_problem(m: RunManifest):
    g = load_graph(m.graph_path)
    cg = build_config_graph(g, m.memory_count)
    spec = load_objective(m.objective_path, cg)
    direction = m.direction or spec.direction
    problem = E.Problem(g, m.memory_count, direction, spec.expression)
    E.validate_expr(spec.expression, cg)
    return problem, cg, spec


def component_values(problem: E.Problem, s: Strategy, components: dict[str, E.Expr]) -> dict[str, float]:
    """Evaluate reporting components on the component the objective selected."""
    if not components:
        return {}
    value, chosen = sigma_value(problem, s)
    if chosen is None:
        return {name: float("nan") for name in components}
    cache = AtomCache(s.cg, s, chosen)
    return {
        name: eval_in_bscc(expr, chosen, s, cache).as_float()
        for name, expr in components.items()
    }


def _fmt(x: float) -> str:
    return repr(float(x))


def _summary_payload(m: RunManifest, oc: OptimizerConfig, direction: str, best: TrialResult) -> dict:
    return {
        "tool_version": _version,
        "best_value": None if not best.best_value.is_defined else best.best_value.as_float(),
        "status": best.best_value.kind,
        "best_seed": best.seed,
        "best_step": best.best_step,
        "direction": direction,
        "config": {
            "graph": str(m.graph_path),
            "objective": str(m.objective_path),
            "memory_count": m.memory_count,
            "n_trials": m.n_trials,
            "steps": oc.steps,
            "learning_rate": oc.learning_rate,
            "cutoff_threshold": oc.cutoff_threshold,
            "noise_initial_std": oc.noise_initial_std,
            "seed": oc.seed,
        },
    }


def run_optimize(m: RunManifest) -> int:
    """Synthesize a strategy per the manifest and export the results."""
    try:
        problem, cg, spec = _load_problem(m)
        oc = _optimizer_config(m)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        best, results = run_trials(problem, oc, m.n_trials)
        out = Path(m.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trials.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "seed", "best_value", "best_step", "wall_ms"])
            for i, r in enumerate(results):
                w.writerow([i, r.seed, _fmt(r.best_value.as_float()), r.best_step, 0])
        with open(out / "summary.json", "w") as fh:
            json.dump(_summary_payload(m, oc, problem.direction, best), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if best.best_strategy is not None:
            write_strategy(best.best_strategy, out / "best_strategy.json")
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if best.best_value.is_defined else EXIT_UNDEFINED


def run_sweep(m: RunManifest, s: SweepSpec) -> int:
    """Re-run the synthesis for each parameter value of a builtin objective."""
    if not s.values:
        print("error: sweep needs at least one parameter value", file=sys.stderr)
        return EXIT_USAGE
    try:
        problem, cg, spec = _load_problem(m)
        oc = _optimizer_config(m)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if spec.builtin is None:
        print("error: sweeps need a builtin objective", file=sys.stderr)
        return EXIT_USAGE
    if s.parameter not in ("beta",):
        print(f"error: unknown sweep parameter {s.parameter!r}", file=sys.stderr)
        return EXIT_USAGE

    try:
        out = Path(m.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        component_names: list[str] = []
        sweep_rows: list[list] = []
        summary_rows: list[list] = []
        any_defined = False
        for vi, value in enumerate(s.values):
            doc = dict(spec.doc)
            doc[s.parameter] = value
            vspec = objective_from_json(doc, cg)
            vproblem = replace(problem, objective=vspec.expression)
            if not component_names:
                component_names = sorted(vspec.components)
            voc = replace(oc, seed=oc.seed + vi * s.trials_per_value)
            best, results = run_trials(vproblem, voc, s.trials_per_value)
            for ti, r in enumerate(results):
                row = [_fmt(value), ti, _fmt(r.best_value.as_float())]
                comps = (
                    component_values(vproblem, r.best_strategy, vspec.components)
                    if r.best_strategy is not None
                    else {n: float("nan") for n in component_names}
                )
                row.extend(_fmt(comps[n]) for n in component_names)
                sweep_rows.append(row)
            brow = [_fmt(value), results.index(best), _fmt(best.best_value.as_float())]
            bcomps = (
                component_values(vproblem, best.best_strategy, vspec.components)
                if best.best_strategy is not None
                else {n: float("nan") for n in component_names}
            )
            brow.extend(_fmt(bcomps[n]) for n in component_names)
            summary_rows.append(brow)
            if best.best_strategy is not None:
                any_defined = True
                write_strategy(best.best_strategy, out / f"best_strategy_{s.parameter}_{value:g}.json")

        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param_value", "trial", "best_value", *component_names])
            w.writerows(sweep_rows)
        with open(out / "sweep_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param_value", "best_trial", "best_value", *component_names])
            w.writerows(summary_rows)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if any_defined else EXIT_UNDEFINED


def check_gradients(m: RunManifest, samples: int = 20, h: float = 1e-5) -> int:
    """Compare tape gradients against central differences at random points.

    Points whose square-root arguments come within 1e-4 of zero are redrawn
    (curvature there makes central differences unreliable at any step size).
    """
    try:
        problem, cg, spec = _load_problem(m)
        oc = _optimizer_config(m)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    e_star = relax(problem.objective, oc.relax)
    program = compile_relaxed(e_star, cg)
    rng = np.random.default_rng(oc.seed)
    temp = oc.relax.softminmax_temperature
    worst = 0.0
    drawn = 0
    while drawn < samples:
        c = rng.standard_normal(cg.n_edges)
        if program.sqrt_arguments(c[None, :], temp)[0] < 1e-4:
            continue
        drawn += 1
        err = finite_diff_check(e_star, cg, Coefficients(cg, c), oc.relax, h)
        worst = max(worst, err)
    print(f"max relative error over {samples} samples: {worst:.3e}")
    return EXIT_OK if worst <= 1e-4 else 1


def eval_strategy(m: RunManifest, strategy_path: str) -> int:
    """Score a strategy file against the objective; print a JSON report."""
    try:
        problem, cg, spec = _load_problem(m)
        strategy = load_strategy(strategy_path, cg)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    value, chosen = sigma_value(problem, strategy)
    report: dict = {
        "value": value.as_float() if value.is_finite else None,
        "status": value.kind,
        "direction": problem.direction,
    }
    if chosen is not None:
        cache = AtomCache(cg, strategy, chosen)
        report["components"] = {
            name: eval_in_bscc(expr, chosen, strategy, cache).as_float()
            for name, expr in sorted(spec.components.items())
        }
        report["bscc"] = [[v, mm] for (v, mm) in sorted(chosen.members)]
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if value.is_defined else EXIT_UNDEFINED
