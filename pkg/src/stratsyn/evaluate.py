"""Exact evaluation of objective expressions on a chain component.

Values live in the extended reals encoded as IEEE floats: +inf stands for
an infinite value and NaN for "undefined".  The encoding matches the
evaluation rules exactly:

    x + inf = inf          c * inf = inf for c > 0
    0 * inf = undefined    c * inf = undefined for c < 0
    x / 0   = undefined    sqrt(x < 0) = undefined
    any undefined operand makes the result undefined

Hitting-time atoms for configurations outside the component are undefined;
frequency atoms vanish off the active edges; min/max compare extended reals
in the usual order.  Comprehension templates are evaluated vectorized over
their instances, which keeps repeated evaluation in the optimizer cheap.
"""
from __future__ import annotations

import math

import numpy as np

from . import expr as E
from .chain import (
    Bscc,
    SingularMatrix,
    bsccs,
    frequency_vectors,
    hitting_time_vector,
    squared_hitting_time_vector,
)
from .model import ConfigGraph, Strategy

_NAN = float("nan")


# --- extended-real kernels (scalar or ndarray) -------------------------------

def _mask_neg_inf(x):
    return np.where(np.isneginf(x), _NAN, x)


def x_add(parts):
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total  # IEEE: inf + inf = inf, nan propagates; -inf never enters


def x_mul(parts):
    total = parts[0]
    for p in parts[1:]:
        total = total * p  # IEEE: 0 * inf = nan, neg * inf = -inf (masked below)
    return _mask_neg_inf(total)


def x_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    bad = ~(np.abs(den) > 0.0) | ~np.isfinite(den)
    return _mask_neg_inf(np.where(bad, _NAN, out))


def x_sqrt(x):
    with np.errstate(invalid="ignore"):
        return np.sqrt(x)


def x_clamp01(x):
    return np.clip(x, 0.0, 1.0)


def x_min(parts):
    total = parts[0]
    for p in parts[1:]:
        total = np.minimum(total, p)  # nan propagates
    return total


def x_max(parts):
    total = parts[0]
    for p in parts[1:]:
        total = np.maximum(total, p)
    return total


def x_logsumexp(xs: np.ndarray, temperature: float, sign: float, axis=None):
    """sign=+1: smoothed max; sign=-1: smoothed min.  Total on inf/nan inputs."""
    z = sign * np.asarray(xs, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.sum(np.exp((z - safe_m) / temperature), axis=axis, keepdims=True)
        out = safe_m + temperature * np.log(s)
    out = np.where(np.isfinite(m), out, m)  # any +inf arg dominates; nan propagates
    out = sign * out
    if axis is not None:
        out = np.squeeze(out, axis=axis)
    else:
        out = out.reshape(())
    has_nan = np.isnan(z).any(axis=axis)
    return np.where(has_nan, _NAN, _mask_neg_inf(out))


class EvalParams:
    """Evaluation-time knobs for smoothed nodes (temperature of soft min/max)."""

    def __init__(self, temperature: float = 0.1):
        self.temperature = float(temperature)


class AtomCache:
    """Lazily computed atom values for one (strategy, component) pair.

    Dense vectors over all configurations / edges back the atom lookups:
    hitting vectors carry NaN outside the component members (undefined) and
    +inf when the target set misses the component entirely; frequency
    vectors are zero off the component.
    """

    def __init__(self, cg: ConfigGraph, s: Strategy, b: Bscc, params: EvalParams | None = None):
        self.cg = cg
        self.strategy = s
        self.bscc = b
        self.params = params or EvalParams()
        self._freq: tuple[np.ndarray, np.ndarray] | None = None
        self._visit: np.ndarray | None = None
        self._hit: dict[frozenset[int], np.ndarray] = {}
        self._hit2: dict[frozenset[int], np.ndarray] = {}

    def edge_freq_vector(self) -> np.ndarray:
        if self._freq is None:
            self._freq = frequency_vectors(self.bscc, self.strategy)
        return self._freq[1]

    def config_freq_vector(self) -> np.ndarray:
        if self._freq is None:
            self._freq = frequency_vectors(self.bscc, self.strategy)
        return self._freq[0]

    def visit_freq_vector(self) -> np.ndarray:
        """Per-configuration visit frequency: sum of out-edge frequencies."""
        if self._visit is None:
            self._visit = np.add.reduceat(self.edge_freq_vector(), self.cg.row_start)
        return self._visit

    def target_indices(self, targets: frozenset[str]) -> frozenset[int]:
        return self.cg.config_set(targets)

    def hitting_vector(self, targets: frozenset[str]) -> np.ndarray:
        key = self.target_indices(targets)
        if key not in self._hit:
            self._hit[key] = hitting_time_vector(self.bscc, self.strategy, key)
        return self._hit[key]

    def squared_hitting_vector(self, targets: frozenset[str]) -> np.ndarray:
        key = self.target_indices(targets)
        if key not in self._hit2:
            t = self.hitting_vector(targets)
            self._hit2[key] = squared_hitting_time_vector(self.bscc, self.strategy, key, t)
        return self._hit2[key]


class _Instances:
    """Resolved placeholder arrays while a comprehension template is evaluated."""

    __slots__ = ("edge_idx", "tail_idx", "head_idx", "config_idx")

    def __init__(self, edge_idx=None, tail_idx=None, head_idx=None, config_idx=None):
        self.edge_idx = edge_idx
        self.tail_idx = tail_idx
        self.head_idx = head_idx
        self.config_idx = config_idx


def _resolve_config(cache: AtomCache, r: E.ConfigRef, inst: _Instances | None):
    if r.kind == "concrete":
        return cache.cg.config_index((r.vertex, r.mem))
    if inst is None:
        raise E.UnknownReference(f"{r.kind!r} placeholder outside a comprehension")
    if r.kind == "tail":
        return inst.tail_idx
    if r.kind == "head":
        return inst.head_idx
    return inst.config_idx


def _resolve_edge(cache: AtomCache, r: E.EdgeRef, inst: _Instances | None):
    if r.kind == "concrete":
        return cache.cg.edge_index(((r.from_vertex, r.from_mem), (r.to_vertex, r.to_mem)))
    if inst is None or inst.edge_idx is None:
        raise E.UnknownReference("'current' edge placeholder outside an edge comprehension")
    return inst.edge_idx


def _eval(e: E.Expr, cache: AtomCache, inst: _Instances | None, memo: dict):
    key = (id(e), inst is None)
    if inst is None and key in memo:
        return memo[key]
    out = _eval_node(e, cache, inst, memo)
    if inst is None:
        memo[key] = out
    return out


def _eval_node(e: E.Expr, cache: AtomCache, inst: _Instances | None, memo: dict):
    cg = cache.cg
    if isinstance(e, E.Const):
        return e.value
    if isinstance(e, E.EdgeTime):
        return cg.edge_tm[_resolve_edge(cache, e.edge, inst)]
    if isinstance(e, E.AtomP):
        return cache.strategy.vector[_resolve_edge(cache, e.edge, inst)]
    if isinstance(e, E.AtomF):
        return cache.edge_freq_vector()[_resolve_edge(cache, e.edge, inst)]
    if isinstance(e, E.AtomFV):
        return cache.visit_freq_vector()[_resolve_config(cache, e.config, inst)]
    if isinstance(e, E.AtomT):
        return cache.hitting_vector(e.targets)[_resolve_config(cache, e.config, inst)]
    if isinstance(e, E.AtomT2):
        return cache.squared_hitting_vector(e.targets)[_resolve_config(cache, e.config, inst)]
    if isinstance(e, E.Add):
        return x_add([_eval(a, cache, inst, memo) for a in e.args])
    if isinstance(e, E.Mul):
        return x_mul([_eval(a, cache, inst, memo) for a in e.args])
    if isinstance(e, E.Div):
        return x_div(_eval(e.num, cache, inst, memo), _eval(e.den, cache, inst, memo))
    if isinstance(e, E.Min):
        return x_min([_eval(a, cache, inst, memo) for a in e.args])
    if isinstance(e, E.Max):
        return x_max([_eval(a, cache, inst, memo) for a in e.args])
    if isinstance(e, E.Sqrt):
        return x_sqrt(_eval(e.arg, cache, inst, memo))
    if isinstance(e, E.Clamp01):
        return x_clamp01(_eval(e.arg, cache, inst, memo))
    if isinstance(e, E.SoftMin):
        vals = _stack([_eval(a, cache, inst, memo) for a in e.args])
        return x_logsumexp(vals, cache.params.temperature, -1.0, axis=0)
    if isinstance(e, E.SoftMax):
        vals = _stack([_eval(a, cache, inst, memo) for a in e.args])
        return x_logsumexp(vals, cache.params.temperature, +1.0, axis=0)
    if isinstance(e, E.OverActiveEdges):
        edge_idx = _edge_instances(cache, e)
        if edge_idx.size == 0:
            return 0.0 if e.combine == "add" else _NAN
        sub = _Instances(
            edge_idx=edge_idx,
            tail_idx=cg.edge_tail[edge_idx],
            head_idx=cg.edge_head[edge_idx],
        )
        vals = np.broadcast_to(
            np.asarray(_eval(e.template, cache, sub, memo), dtype=np.float64), edge_idx.shape
        )
        return _combine(vals, e.combine, e.soft, cache.params.temperature)
    if isinstance(e, E.OverActiveConfigs):
        config_idx = _config_instances(cache, e)
        if config_idx.size == 0:
            return 0.0 if e.combine == "add" else _NAN
        sub = _Instances(config_idx=config_idx)
        vals = np.broadcast_to(
            np.asarray(_eval(e.template, cache, sub, memo), dtype=np.float64), config_idx.shape
        )
        return _combine(vals, e.combine, e.soft, cache.params.temperature)
    raise TypeError(f"not an expression node: {e!r}")


def _stack(parts) -> np.ndarray:
    arrs = [np.asarray(p, dtype=np.float64) for p in parts]
    return np.stack(np.broadcast_arrays(*arrs), axis=0)


def _combine(vals: np.ndarray, combine: str, soft: bool, temperature: float):
    if combine == "add":
        return float(np.sum(vals))
    if soft:
        return float(x_logsumexp(vals, temperature, +1.0 if combine == "max" else -1.0))
    if np.isnan(vals).any():
        return _NAN
    return float(np.min(vals) if combine == "min" else np.max(vals))


def edge_instance_indices(cg: ConfigGraph, node: E.OverActiveEdges, active_edge_idx) -> np.ndarray:
    """Edge indices a comprehension ranges over, in canonical edge order."""
    if node.over_all:
        idx = np.arange(cg.n_edges, dtype=np.intp)
    else:
        idx = np.array(sorted(active_edge_idx), dtype=np.intp)
    if node.tail_in is not None:
        allowed = np.zeros(cg.n_configs, dtype=bool)
        allowed[list(cg.config_set(node.tail_in))] = True
        idx = idx[allowed[cg.edge_tail[idx]]]
    if node.head_in is not None:
        allowed = np.zeros(cg.n_configs, dtype=bool)
        allowed[list(cg.config_set(node.head_in))] = True
        idx = idx[allowed[cg.edge_head[idx]]]
    return idx


def _edge_instances(cache: AtomCache, node: E.OverActiveEdges) -> np.ndarray:
    return edge_instance_indices(cache.cg, node, cache.bscc.active_edge_idx)


def _config_instances(cache: AtomCache, node: E.OverActiveConfigs) -> np.ndarray:
    cg = cache.cg
    if node.over_all:
        idx = np.arange(cg.n_configs, dtype=np.intp)
    else:
        idx = np.array(cache.bscc.sorted_members(), dtype=np.intp)
    if node.member_in is not None:
        allowed = np.zeros(cg.n_configs, dtype=bool)
        allowed[list(cg.config_set(node.member_in))] = True
        idx = idx[allowed[idx]]
    return idx


def eval_in_bscc(e: E.Expr, b: Bscc, s: Strategy, cache: AtomCache | None = None) -> E.EvalValue:
    """Value of ``e`` in one component of the chain induced by ``s``."""
    if cache is None:
        cache = AtomCache(b.cg, s, b)
    try:
        raw = _eval(e, cache, None, {})
    except SingularMatrix:
        return E.UNDEFINED
    return E.EvalValue.from_float(float(raw))


def best_component_value(
    objective: E.Expr, direction: str, s: Strategy, components: list[Bscc]
) -> tuple[E.EvalValue, Bscc | None]:
    """Pick the best defined objective value over the given components."""
    best: E.EvalValue | None = None
    best_b: Bscc | None = None
    better = (lambda a, b: a < b) if direction == "minimize" else (lambda a, b: a > b)
    for b in components:
        v = eval_in_bscc(objective, b, s)
        if not v.is_defined:
            continue
        if best is None or better(v.as_float(), best.as_float()):
            best, best_b = v, b
    if best is None:
        return E.UNDEFINED, None
    return best, best_b


def sigma_value(p: E.Problem, s: Strategy, cg: ConfigGraph | None = None) -> tuple[E.EvalValue, Bscc | None]:
    """Best defined component value of the objective under strategy ``s``.

    Evaluates the objective in every BSCC of the induced chain and returns
    the minimal (or maximal) defined value together with its component.
    Infinite values are defined and comparable; if no component has a
    defined value the result is undefined with no component.
    """
    if cg is None:
        cg = s.cg
    return best_component_value(p.objective, p.direction, s, bsccs(cg, s))
