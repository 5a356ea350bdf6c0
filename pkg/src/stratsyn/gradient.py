"""Lowering of relaxed objectives onto the differentiation tape.

A relaxed expression compiles once into a tape program whose inputs are the
strategy coefficients (and the soft-min/max temperature); replaying the
program gives the relaxed value, the softmax strategy, and the exact
gradient with respect to every coefficient, batched over any number of
independent coefficient vectors.
"""
from __future__ import annotations

import numpy as np

from . import expr as E
from .autodiff import GradientTape, HitAux, StatAux
from .chain import SingularMatrix
from .evaluate import edge_instance_indices
from .model import Coefficients, ConfigGraph
from .relax import RelaxParams


class CompiledObjective:
    """A relaxed objective lowered to a reusable tape program."""

    def __init__(self, e_star: E.Expr, cg: ConfigGraph):
        self.cg = cg
        self.tape = GradientTape()
        t = self.tape
        self._coeff = t.input("coeffs", needs_grad=True)
        self._temp = t.input("temperature")
        self._p = t.row_softmax(self._coeff, cg.row_start, cg.row_size)
        self._edge_freq: int | None = None
        self._visit_freq: int | None = None
        self._hit: dict[frozenset[int], int] = {}
        self._hit2: dict[frozenset[int], int] = {}
        self._memo: dict[tuple[int, int], int] = {}
        self._sqrt_args: list[int] = []
        self.value = self._lower(e_star, None)

    # -- shared atom pipelines -------------------------------------------

    def _freqs(self) -> int:
        if self._edge_freq is None:
            t, cg = self.tape, self.cg
            z = t.stationary_solve(self._p, StatAux(cg.n_configs, cg.edge_tail, cg.edge_head))
            d = t.mul(t.mul(t.gather(z, cg.edge_tail), self._p), t.const(cg.edge_tm[None, :]))
            self._edge_freq = t.div(d, t.sum1(d))
        return self._edge_freq

    def _visits(self) -> int:
        if self._visit_freq is None:
            t, cg = self.tape, self.cg
            self._visit_freq = t.rowsum(self._freqs(), cg.row_start, cg.row_size)
        return self._visit_freq

    def _hitting(self, targets: frozenset[str]) -> int:
        key = self.cg.config_set(targets)
        if key not in self._hit:
            aux = HitAux.build(self.cg, key)
            self._hit[key] = self.tape.hitting_solve(self._p, aux)
        return self._hit[key]

    def _sq_hitting(self, targets: frozenset[str]) -> int:
        key = self.cg.config_set(targets)
        if key not in self._hit2:
            aux = HitAux.build(self.cg, key)
            self._hit2[key] = self.tape.squared_hitting_solve(self._p, self._hitting(targets), aux)
        return self._hit2[key]

    # -- lowering ----------------------------------------------------------

    def _edge_idx(self, ref: E.EdgeRef, inst) -> np.ndarray:
        if ref.kind == "concrete":
            e = ((ref.from_vertex, ref.from_mem), (ref.to_vertex, ref.to_mem))
            return np.array([self.cg.edge_index(e)], dtype=np.intp)
        if inst is None:
            raise E.UnknownReference("'current' edge placeholder outside an edge comprehension")
        return inst["edge"]

    def _config_idx(self, ref: E.ConfigRef, inst) -> np.ndarray:
        if ref.kind == "concrete":
            return np.array([self.cg.config_index((ref.vertex, ref.mem))], dtype=np.intp)
        if inst is None:
            raise E.UnknownReference(f"{ref.kind!r} placeholder outside a comprehension")
        if ref.kind == "tail":
            return inst["tail"]
        if ref.kind == "head":
            return inst["head"]
        return inst["config"]

    def _lower(self, e: E.Expr, inst, ctx: int = 0) -> int:
        key = (id(e), ctx)
        if key in self._memo:
            return self._memo[key]
        out = self._lower_node(e, inst, ctx)
        self._memo[key] = out
        return out

    def _lower_node(self, e: E.Expr, inst, ctx: int) -> int:
        t, cg = self.tape, self.cg
        if isinstance(e, E.Const):
            return t.const([[e.value]])
        if isinstance(e, E.EdgeTime):
            return t.const(cg.edge_tm[None, self._edge_idx(e.edge, inst)])
        if isinstance(e, E.AtomP):
            return t.gather(self._p, self._edge_idx(e.edge, inst))
        if isinstance(e, E.AtomF):
            return t.gather(self._freqs(), self._edge_idx(e.edge, inst))
        if isinstance(e, E.AtomFV):
            return t.gather(self._visits(), self._config_idx(e.config, inst))
        if isinstance(e, E.AtomT):
            return t.gather(self._hitting(e.targets), self._config_idx(e.config, inst))
        if isinstance(e, E.AtomT2):
            return t.gather(self._sq_hitting(e.targets), self._config_idx(e.config, inst))
        if isinstance(e, E.Add):
            out = self._lower(e.args[0], inst, ctx)
            for a in e.args[1:]:
                out = t.add(out, self._lower(a, inst, ctx))
            return out
        if isinstance(e, E.Mul):
            out = self._lower(e.args[0], inst, ctx)
            for a in e.args[1:]:
                out = t.mul(out, self._lower(a, inst, ctx))
            return out
        if isinstance(e, E.Div):
            return t.div(self._lower(e.num, inst, ctx), self._lower(e.den, inst, ctx))
        if isinstance(e, E.Sqrt):
            arg = self._lower(e.arg, inst, ctx)
            self._sqrt_args.append(arg)
            return t.sqrt(arg)
        if isinstance(e, E.Clamp01):
            return t.clamp01(self._lower(e.arg, inst, ctx))
        if isinstance(e, E.SoftMin):
            return t.lse_stack(self._temp, tuple(self._lower(a, inst, ctx) for a in e.args), -1.0)
        if isinstance(e, E.SoftMax):
            return t.lse_stack(self._temp, tuple(self._lower(a, inst, ctx) for a in e.args), +1.0)
        if isinstance(e, (E.Min, E.Max)):
            raise ValueError("hard min/max cannot be differentiated; relax the expression first")
        if isinstance(e, E.OverActiveEdges):
            if not e.over_all:
                raise ValueError("gradient evaluation needs relaxed comprehensions; relax the expression first")
            idx = edge_instance_indices(cg, e, active_edge_idx=())
            if idx.size == 0:
                if e.combine != "add":
                    raise ValueError("empty comprehension under min/max")
                return t.const([[0.0]])
            sub = {"edge": idx, "tail": cg.edge_tail[idx], "head": cg.edge_head[idx]}
            body = self._widen(self._lower(e.template, sub, ctx=id(e)), idx.size)
            return self._combine(body, e)
        if isinstance(e, E.OverActiveConfigs):
            if not e.over_all:
                raise ValueError("gradient evaluation needs relaxed comprehensions; relax the expression first")
            if e.member_in is None:
                idx = np.arange(cg.n_configs, dtype=np.intp)
            else:
                idx = np.array(sorted(cg.config_set(e.member_in)), dtype=np.intp)
            if idx.size == 0:
                if e.combine != "add":
                    raise ValueError("empty comprehension under min/max")
                return t.const([[0.0]])
            sub = {"config": idx}
            body = self._widen(self._lower(e.template, sub, ctx=id(e)), idx.size)
            return self._combine(body, e)
        raise TypeError(f"not an expression node: {e!r}")

    def _widen(self, var: int, k: int) -> int:
        """Make sure a template body spans all k instances (constants may not)."""
        return self.tape.mul(var, self.tape.const(np.ones((1, k))))

    def _combine(self, body: int, node) -> int:
        t = self.tape
        if node.combine == "add":
            return t.sum1(body)
        sign = +1.0 if node.combine == "max" else -1.0
        return t.lse_axis(body, self._temp, sign)

    # -- execution ---------------------------------------------------------

    def run(self, coeff_batch: np.ndarray, temperature: float, want_grad: bool = True):
        """Evaluate the program on a (B, E) coefficient batch.

        Returns (values (B,), softmax probs (B, E), grads (B, E), failed (B,)).
        Rows whose linear systems were singular come back NaN and flagged.
        """
        coeff_batch = np.atleast_2d(np.asarray(coeff_batch, dtype=np.float64))
        feeds = {
            "coeffs": coeff_batch,
            "temperature": np.full((coeff_batch.shape[0], 1), float(temperature)),
        }
        values, grads, failed = self.tape.run(feeds, self.value, want_grad=want_grad)
        B = coeff_batch.shape[0]
        val = np.broadcast_to(values[self.value], (B, 1))[:, 0].copy()
        probs = values[self._p]
        grad = grads.get("coeffs") if want_grad else None
        if grad is None or grad.shape != coeff_batch.shape:
            grad = np.zeros_like(coeff_batch)
        return val, probs, grad, failed

    def sqrt_arguments(self, coeff_batch: np.ndarray, temperature: float) -> np.ndarray:
        """Forward-only: smallest square-root argument per batch row (inf if none)."""
        coeff_batch = np.atleast_2d(np.asarray(coeff_batch, dtype=np.float64))
        feeds = {
            "coeffs": coeff_batch,
            "temperature": np.full((coeff_batch.shape[0], 1), float(temperature)),
        }
        values, _, _ = self.tape.run(feeds, self.value, want_grad=False)
        B = coeff_batch.shape[0]
        if not self._sqrt_args:
            return np.full(B, np.inf)
        mins = [np.broadcast_to(values[a], (B, values[a].shape[1])).min(axis=1)
                for a in self._sqrt_args]
        return np.min(np.stack(mins, axis=0), axis=0)


def compile_relaxed(e_star: E.Expr, cg: ConfigGraph) -> CompiledObjective:
    return CompiledObjective(e_star, cg)


def eval_with_gradient(
    e_star: E.Expr, cg: ConfigGraph, c: Coefficients, rp: RelaxParams
) -> tuple[float, dict]:
    """Relaxed value at softmax(c) and its exact gradient w.r.t. every coefficient."""
    prog = compile_relaxed(e_star, cg)
    val, _, grad, failed = prog.run(c.vector[None, :], rp.softminmax_temperature)
    if failed[0]:
        raise SingularMatrix("linear system singular at these coefficients")
    return float(val[0]), {e: float(g) for e, g in zip(cg.edges, grad[0])}


def finite_diff_check(
    e_star: E.Expr, cg: ConfigGraph, c: Coefficients, rp: RelaxParams, h: float = 1e-5
) -> float:
    """Max relative disagreement between the tape gradient and central differences."""
    if not (1e-7 <= h <= 1e-3):
        raise ValueError("finite-difference step must lie in [1e-7, 1e-3]")
    prog = compile_relaxed(e_star, cg)
    base = c.vector
    val, _, grad, failed = prog.run(base[None, :], rp.softminmax_temperature)
    if failed[0]:
        raise SingularMatrix("linear system singular at these coefficients")
    n = base.size
    batch = np.repeat(base[None, :], 2 * n, axis=0)
    rows = np.arange(n)
    batch[2 * rows, rows] += h
    batch[2 * rows + 1, rows] -= h
    vals, _, _, failed = prog.run(batch, rp.softminmax_temperature, want_grad=False)
    if failed.any():
        raise SingularMatrix("linear system singular at a perturbed point")
    central = (vals[2 * rows] - vals[2 * rows + 1]) / (2.0 * h)
    rel = np.abs(grad[0] - central) / (1e-9 + np.abs(grad[0]) + np.abs(central))
    return float(rel.max())
