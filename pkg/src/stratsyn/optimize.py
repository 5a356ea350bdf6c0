"""Gradient-descent strategy synthesis.

One trial repeats, for a fixed number of steps: evaluate the relaxed
objective and its gradient at the current softmax strategy, perturb the
gradient with decaying Gaussian noise, take an Adam step on the raw
coefficients, round the updated strategy with the cutoff, and score the
rounded strategy exactly.  The best exactly-scored strategy over the whole
run is returned; independent restarts with derived seeds raise the chance
of hitting a good optimum.

Trials are batched through the compiled objective: a (trials x coefficients)
array flows through every tape instruction at once, while exact scoring of
rounded strategies is memoized on the rounded probability bytes (converged
trials quickly make this a cache hit).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from .evaluate import best_component_value
from .chain import Bscc, bsccs_from_support
from .gradient import compile_relaxed
from .model import ConfigGraph, Strategy, build_config_graph, cutoff_vector, row_softmax
from .relax import RelaxParams, relax


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of one synthesis run.

    ``noise_halflife`` defaults to steps/10; the soft-min/max temperature is
    annealed geometrically between the ``temperature_anneal`` endpoints (set
    it to None to keep the RelaxParams temperature fixed).
    """

    steps: int = 2000
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    noise_initial_std: float = 0.1
    noise_halflife: float | None = None
    cutoff_threshold: float = 1e-3
    relax: RelaxParams = field(default_factory=RelaxParams)
    temperature_anneal: tuple[float, float] | None = (1.0, 0.01)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if not (0.0 <= self.cutoff_threshold < 1.0):
            raise ValueError("cutoff_threshold must lie in [0, 1)")
        if self.noise_initial_std < 0:
            raise ValueError("noise_initial_std must be nonnegative")

    def halflife(self) -> float:
        return self.noise_halflife if self.noise_halflife is not None else self.steps / 10.0

    def temperature_at(self, step: int) -> float:
        if self.temperature_anneal is None:
            return self.relax.softminmax_temperature
        t0, t1 = self.temperature_anneal
        if self.steps <= 1:
            return t0
        return t0 * (t1 / t0) ** (step / (self.steps - 1))


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Outcome of one trial: best rounded strategy, its exact value, and the
    per-step (relaxed value, exact value) trace."""

    seed: int
    best_strategy: Strategy | None
    best_value: E.EvalValue
    best_step: int
    trace: np.ndarray  # (steps, 3): step index, relaxed value, exact value (NaN = undefined)

    @property
    def value_trace(self) -> list[tuple[int, float, float]]:
        return [(int(s), float(r), float(t)) for s, r, t in self.trace]


class _ExactScorer:
    """Memoized exact sigma-values for rounded strategies."""

    def __init__(self, cg: ConfigGraph, objective: E.Expr, direction: str):
        self.cg = cg
        self.objective = objective
        self.direction = direction
        self._components: dict[bytes, list[Bscc]] = {}
        self._values: dict[bytes, E.EvalValue] = {}

    def score(self, probs: np.ndarray) -> E.EvalValue:
        key = probs.tobytes()
        hit = self._values.get(key)
        if hit is not None:
            return hit
        support = probs > 0.0
        skey = support.tobytes()
        comps = self._components.get(skey)
        if comps is None:
            comps = bsccs_from_support(self.cg, support)
            self._components[skey] = comps
        s = Strategy(self.cg, probs)
        value, _ = best_component_value(self.objective, self.direction, s, comps)
        self._values[key] = value
        return value


def _is_better(direction: str, a: float, b: float) -> bool:
    if np.isnan(a):
        return False
    if np.isnan(b):
        return True
    return a < b if direction == "minimize" else a > b


def _run_batch(p: E.Problem, oc: OptimizerConfig, seeds: list[int], cg: ConfigGraph) -> list[TrialResult]:
    e_star = relax(p.objective, oc.relax)
    program = compile_relaxed(e_star, cg)
    scorer = _ExactScorer(cg, p.objective, p.direction)
    B, Em = len(seeds), cg.n_edges
    rngs = [np.random.default_rng(s) for s in seeds]
    coeffs = np.stack([r.standard_normal(Em) for r in rngs])
    m = np.zeros((B, Em))
    v = np.zeros((B, Em))
    sign = 1.0 if p.direction == "minimize" else -1.0
    halflife = oc.halflife()
    trace = np.empty((B, oc.steps, 3))
    best_val = np.full(B, np.nan)
    best_step = np.full(B, -1, dtype=np.intp)
    best_probs: list[np.ndarray | None] = [None] * B
    best_value: list[E.EvalValue] = [E.UNDEFINED] * B

    for step in range(oc.steps):
        relaxed, _, grad, failed = program.run(coeffs, oc.temperature_at(step))
        ok = ~failed & np.isfinite(grad).all(axis=1)
        if oc.noise_initial_std > 0.0:
            std = oc.noise_initial_std * 2.0 ** (-step / halflife)
            noise = np.stack([r.standard_normal(Em) for r in rngs])
            grad = grad + std * noise
        g = sign * grad
        t = step + 1
        m_new = oc.adam_beta1 * m + (1.0 - oc.adam_beta1) * g
        v_new = oc.adam_beta2 * v + (1.0 - oc.adam_beta2) * g * g
        m_hat = m_new / (1.0 - oc.adam_beta1 ** t)
        v_hat = v_new / (1.0 - oc.adam_beta2 ** t)
        step_vec = oc.learning_rate * m_hat / (np.sqrt(v_hat) + oc.adam_epsilon)
        okc = ok[:, None]
        m = np.where(okc, m_new, m)
        v = np.where(okc, v_new, v)
        coeffs = np.where(okc, coeffs - step_vec, coeffs)

        rounded = cutoff_vector(cg, row_softmax(cg, coeffs), oc.cutoff_threshold)
        for i in range(B):
            if not ok[i]:
                trace[i, step] = (step, np.nan, np.nan)
                continue
            value = scorer.score(rounded[i])
            tv = value.as_float()
            trace[i, step] = (step, relaxed[i], tv)
            if value.is_defined and _is_better(p.direction, tv, best_val[i]):
                best_val[i] = tv
                best_step[i] = step
                best_probs[i] = rounded[i].copy()
                best_value[i] = value

    results = []
    for i in range(B):
        strategy = Strategy(cg, best_probs[i]) if best_probs[i] is not None else None
        results.append(TrialResult(seeds[i], strategy, best_value[i], int(best_step[i]), trace[i]))
    return results


def optimize(p: E.Problem, oc: OptimizerConfig) -> TrialResult:
    """Run one trial of the synthesis loop; deterministic given the seed."""
    cg = build_config_graph(p.graph, p.memory_count)
    return _run_batch(p, oc, [oc.seed], cg)[0]


def run_trials(
    p: E.Problem, oc: OptimizerConfig, n_trials: int, batch_size: int = 128
) -> tuple[TrialResult, list[TrialResult]]:
    """Run ``n_trials`` independent trials with seeds oc.seed + index.

    Returns the best trial (undefined trials never win; earlier index breaks
    ties) together with all results.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    cg = build_config_graph(p.graph, p.memory_count)
    seeds = [oc.seed + i for i in range(n_trials)]
    results: list[TrialResult] = []
    for lo in range(0, n_trials, batch_size):
        results.extend(_run_batch(p, oc, seeds[lo:lo + batch_size], cg))
    best = results[0]
    for r in results[1:]:
        if _is_better(p.direction, r.best_value.as_float(), best.best_value.as_float()):
            best = r
    return best, results
