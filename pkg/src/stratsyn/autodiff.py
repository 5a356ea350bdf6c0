"""A small reverse-mode differentiation tape over batched numpy arrays.

Every tape value is a float64 array of shape (B, k): a batch of B
independent evaluations of a width-k quantity (k = 1 for scalars, the
number of config edges for probability vectors, and so on).  The tape is
built once per objective and replayed with fresh inputs each step, so the
per-step cost is a flat sequence of vectorized kernels.

Three linear-solve primitives cover the chain-analysis systems.  Their
adjoints follow the standard identity: if x solves A x = b and the output
adjoint is xbar, solving A^T w = xbar gives the adjoint of b, and the
adjoint of A[i, j] is -w[i] x[j].  Since A and b here are affine in the
edge probabilities, the probability adjoints are written out directly.

Rows of a batch whose linear system is singular are poisoned with NaN and
reported through ``RunResult.failed_rows`` instead of aborting the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class HitAux:
    """Static structure of a hitting-time system over all configurations."""

    n: int
    row_start: np.ndarray       # (C,) row offsets into the edge list
    row_size: np.ndarray
    edge_tail: np.ndarray       # (E,)
    edge_head: np.ndarray
    edge_tm: np.ndarray
    target_rows: np.ndarray     # (T,) config indices with X = 0
    nt_edges: np.ndarray        # edges whose tail is not a target
    # head-grouped view of nt_edges for the scatter in the hit2 adjoint
    head_order: np.ndarray = field(default=None)
    head_groups: np.ndarray = field(default=None)
    head_ids: np.ndarray = field(default=None)

    @staticmethod
    def build(cg, target_idx: frozenset[int]) -> "HitAux":
        targets = np.array(sorted(target_idx), dtype=np.intp)
        is_target = np.zeros(cg.n_configs, dtype=bool)
        is_target[targets] = True
        nt = np.flatnonzero(~is_target[cg.edge_tail]).astype(np.intp)
        heads_nt = cg.edge_head[nt]
        order = np.argsort(heads_nt, kind="stable").astype(np.intp)
        sorted_heads = heads_nt[order]
        ids, starts = np.unique(sorted_heads, return_index=True)
        return HitAux(
            cg.n_configs, cg.row_start, cg.row_size, cg.edge_tail, cg.edge_head,
            cg.edge_tm, targets, nt, order, starts.astype(np.intp), ids.astype(np.intp),
        )


@dataclass(frozen=True)
class StatAux:
    """Static structure of the stationary-distribution system."""

    n: int
    edge_tail: np.ndarray
    edge_head: np.ndarray


@dataclass
class Node:
    op: str
    args: tuple[int, ...]
    aux: Any = None


class GradientTape:
    """Recorded primitive operations with their adjoint rules."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, int] = {}
        self.grad_inputs: set[str] = set()

    # -- construction ---------------------------------------------------

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def input(self, name: str, needs_grad: bool = False) -> int:
        if name in self.inputs:
            return self.inputs[name]
        nid = self._push(Node("input", (), name))
        self.inputs[name] = nid
        if needs_grad:
            self.grad_inputs.add(name)
        return nid

    def const(self, value) -> int:
        arr = np.atleast_2d(np.asarray(value, dtype=np.float64))
        return self._push(Node("const", (), arr))

    def add(self, a: int, b: int) -> int:
        return self._push(Node("add", (a, b)))

    def sub(self, a: int, b: int) -> int:
        return self._push(Node("sub", (a, b)))

    def mul(self, a: int, b: int) -> int:
        return self._push(Node("mul", (a, b)))

    def div(self, a: int, b: int) -> int:
        return self._push(Node("div", (a, b)))

    def sqrt(self, a: int) -> int:
        return self._push(Node("sqrt", (a,)))

    def clamp01(self, a: int) -> int:
        return self._push(Node("clamp01", (a,)))

    def sum1(self, a: int) -> int:
        return self._push(Node("sum1", (a,)))

    def gather(self, a: int, idx) -> int:
        return self._push(Node("gather", (a,), np.asarray(idx, dtype=np.intp)))

    def rowsum(self, a: int, row_start, row_size) -> int:
        return self._push(Node("rowsum", (a,), (np.asarray(row_start, dtype=np.intp),
                                                np.asarray(row_size, dtype=np.intp))))

    def row_softmax(self, c: int, row_start, row_size) -> int:
        return self._push(Node("rowsoftmax", (c,), (np.asarray(row_start, dtype=np.intp),
                                                    np.asarray(row_size, dtype=np.intp))))

    def lse_stack(self, temp: int, xs: tuple[int, ...], sign: float) -> int:
        return self._push(Node("lse_stack", (temp, *xs), float(sign)))

    def lse_axis(self, x: int, temp: int, sign: float) -> int:
        return self._push(Node("lse_axis", (x, temp), float(sign)))

    def hitting_solve(self, p: int, aux: HitAux) -> int:
        return self._push(Node("hit", (p,), aux))

    def squared_hitting_solve(self, p: int, t: int, aux: HitAux) -> int:
        return self._push(Node("hit2", (p, t), aux))

    def stationary_solve(self, p: int, aux: StatAux) -> int:
        return self._push(Node("stat", (p,), aux))

    # -- execution --------------------------------------------------------

    def run(self, feeds: dict[str, np.ndarray], output: int, want_grad: bool = True):
        """Replay the tape; return (values list, grads dict by input name, failed rows)."""
        batch = 1
        for arr in feeds.values():
            batch = max(batch, arr.shape[0])
        values: list[np.ndarray | None] = [None] * len(self.nodes)
        saved: dict[int, Any] = {}
        failed = np.zeros(batch, dtype=bool)
        for nid, node in enumerate(self.nodes):
            values[nid] = _forward(node, values, feeds, saved, failed)

        grads: dict[str, np.ndarray] = {}
        if want_grad and self.grad_inputs:
            needs = self._needed(output)
            adj: dict[int, np.ndarray] = {output: np.ones_like(values[output])}
            for nid in range(output, -1, -1):
                if nid not in adj or nid not in needs:
                    continue
                node = self.nodes[nid]
                if node.op == "input":
                    continue
                for arg, g in _backward(nid, node, adj[nid], values, saved):
                    if g is None or arg not in needs:
                        continue
                    g = _unbroadcast(g, values[arg].shape)
                    if arg in adj:
                        adj[arg] = adj[arg] + g
                    else:
                        adj[arg] = g
            for name in self.grad_inputs:
                nid = self.inputs[name]
                grads[name] = adj.get(nid, np.zeros_like(values[nid]))
        return values, grads, failed

    def _needed(self, output: int) -> set[int]:
        """Nodes on a path from a grad input to the output."""
        reach_from_input = set()
        for name in self.grad_inputs:
            reach_from_input.add(self.inputs[name])
        for nid, node in enumerate(self.nodes):
            if any(a in reach_from_input for a in node.args):
                reach_from_input.add(nid)
        needed = {output} & reach_from_input
        for nid in range(output, -1, -1):
            if nid in needed:
                for a in self.nodes[nid].args:
                    if a in reach_from_input:
                        needed.add(a)
        return needed


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    if shape[-1] == 1 and g.shape[-1] != 1:
        g = g.sum(axis=-1, keepdims=True)
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    return g


def _batched_solve(A: np.ndarray, b: np.ndarray, failed: np.ndarray) -> np.ndarray:
    """Solve a (B, n, n) stack against (B, n); NaN-poison singular rows."""
    clean = np.isfinite(A).all(axis=(1, 2)) & np.isfinite(b).all(axis=1)
    if clean.all():
        try:
            x = np.linalg.solve(A, b[..., None])[..., 0]
            if np.isfinite(x).all():
                return x
        except np.linalg.LinAlgError:
            pass
    out = np.full_like(b, np.nan)
    for i in range(A.shape[0]):
        if not clean[i]:
            failed[i] = True
            continue
        try:
            xi = np.linalg.solve(A[i], b[i])
        except np.linalg.LinAlgError:
            failed[i] = True
            continue
        if not np.isfinite(xi).all():
            failed[i] = True
            continue
        out[i] = xi
    return out


def _assemble_hit(p: np.ndarray, aux: HitAux):
    B = p.shape[0]
    A = np.broadcast_to(np.eye(aux.n), (B, aux.n, aux.n)).copy()
    nt = aux.nt_edges
    A[:, aux.edge_tail[nt], aux.edge_head[nt]] -= p[:, nt]
    return A


def _rhs_rows(weights: np.ndarray, aux: HitAux) -> np.ndarray:
    rows = np.add.reduceat(weights, aux.row_start, axis=1)
    rows[:, aux.target_rows] = 0.0
    return rows


def _forward(node: Node, values, feeds, saved, failed) -> np.ndarray:
    op = node.op
    a = values[node.args[0]] if node.args else None
    if op == "input":
        return np.asarray(feeds[node.aux], dtype=np.float64)
    if op == "const":
        return node.aux
    if op == "add":
        return a + values[node.args[1]]
    if op == "sub":
        return a - values[node.args[1]]
    if op == "mul":
        return a * values[node.args[1]]
    if op == "div":
        return a / values[node.args[1]]
    if op == "sqrt":
        with np.errstate(invalid="ignore"):
            return np.sqrt(a)
    if op == "clamp01":
        return np.clip(a, 0.0, 1.0)
    if op == "sum1":
        return a.sum(axis=1, keepdims=True)
    if op == "gather":
        return a[:, node.aux]
    if op == "rowsum":
        starts, _ = node.aux
        return np.add.reduceat(a, starts, axis=1)
    if op == "rowsoftmax":
        starts, sizes = node.aux
        m = np.repeat(np.maximum.reduceat(a, starts, axis=1), sizes, axis=1)
        e = np.exp(a - m)
        s = np.repeat(np.add.reduceat(e, starts, axis=1), sizes, axis=1)
        return e / s
    if op == "lse_stack":
        sign = node.aux
        temp = values[node.args[0]]
        parts = [values[i] for i in node.args[1:]]
        z = sign * np.stack(np.broadcast_arrays(*parts), axis=1)  # (B, nargs, k)
        t = temp[:, None, :]
        m = z.max(axis=1, keepdims=True)
        w = np.exp((z - m) / t)
        s = w.sum(axis=1, keepdims=True)
        saved[id(node)] = w / s
        return sign * (m + t * np.log(s))[:, 0, :]
    if op == "lse_axis":
        sign = node.aux
        temp = values[node.args[1]]
        z = sign * a
        m = z.max(axis=1, keepdims=True)
        w = np.exp((z - m) / temp)
        s = w.sum(axis=1, keepdims=True)
        saved[id(node)] = w / s
        return sign * (m + temp * np.log(s))
    if op == "hit":
        aux = node.aux
        A = _assemble_hit(a, aux)
        b = _rhs_rows(a * aux.edge_tm, aux)
        x = _batched_solve(A, b, failed)
        saved[id(node)] = A
        return x
    if op == "hit2":
        aux = node.aux
        t = values[node.args[1]]
        A = _assemble_hit(a, aux)
        gamma = aux.edge_tm * (aux.edge_tm + 2.0 * t[:, aux.edge_head])
        b = _rhs_rows(a * gamma, aux)
        y = _batched_solve(A, b, failed)
        saved[id(node)] = (A, gamma)
        return y
    if op == "stat":
        aux = node.aux
        B = a.shape[0]
        A = np.broadcast_to(np.eye(aux.n), (B, aux.n, aux.n)).copy()
        A[:, aux.edge_head, aux.edge_tail] -= a
        A[:, 0, :] = 1.0
        b = np.zeros((B, aux.n))
        b[:, 0] = 1.0
        z = _batched_solve(A, b, failed)
        saved[id(node)] = A
        return z
    raise AssertionError(f"unknown op {op!r}")


def _backward(nid: int, node: Node, gout: np.ndarray, values, saved):
    op = node.op
    args = node.args
    if op in ("const",):
        return []
    if op == "add":
        return [(args[0], gout), (args[1], gout)]
    if op == "sub":
        return [(args[0], gout), (args[1], -gout)]
    if op == "mul":
        return [(args[0], gout * values[args[1]]), (args[1], gout * values[args[0]])]
    if op == "div":
        b = values[args[1]]
        return [(args[0], gout / b), (args[1], -gout * values[args[0]] / (b * b))]
    if op == "sqrt":
        out = np.sqrt(values[args[0]])
        with np.errstate(divide="ignore", invalid="ignore"):
            return [(args[0], gout * 0.5 / out)]
    if op == "clamp01":
        x = values[args[0]]
        inside = (x > 0.0) & (x < 1.0)
        return [(args[0], gout * inside)]
    if op == "sum1":
        return [(args[0], np.broadcast_to(gout, values[args[0]].shape))]
    if op == "gather":
        g = np.zeros_like(values[args[0]])
        np.add.at(g, (slice(None), node.aux), gout)
        return [(args[0], g)]
    if op == "rowsum":
        starts, sizes = node.aux
        return [(args[0], np.repeat(gout, sizes, axis=1))]
    if op == "rowsoftmax":
        starts, sizes = node.aux
        p = values[nid]
        inner = np.repeat(np.add.reduceat(gout * p, starts, axis=1), sizes, axis=1)
        return [(args[0], p * (gout - inner))]
    if op == "lse_stack":
        w = saved[id(node)]  # (B, nargs, k)
        outs = [(args[0], None)]
        for i, arg in enumerate(args[1:]):
            outs.append((arg, gout * w[:, i, :]))
        return outs
    if op == "lse_axis":
        w = saved[id(node)]
        return [(args[0], gout * w), (args[1], None)]
    if op == "hit":
        aux = node.aux
        A = saved[id(node)]
        x = values[nid]
        w = _adjoint_solve(A, gout)
        nt = aux.nt_edges
        gp = np.zeros_like(values[args[0]])
        gp[:, nt] = w[:, aux.edge_tail[nt]] * (x[:, aux.edge_head[nt]] + aux.edge_tm[nt])
        return [(args[0], gp)]
    if op == "hit2":
        aux = node.aux
        A, gamma = saved[id(node)]
        y = values[nid]
        p = values[args[0]]
        w = _adjoint_solve(A, gout)
        nt = aux.nt_edges
        gp = np.zeros_like(p)
        gp[:, nt] = w[:, aux.edge_tail[nt]] * (gamma[:, nt] + y[:, aux.edge_head[nt]])
        # dY/dT through gamma: contribution 2 tm p w_tail scattered onto heads
        contrib = w[:, aux.edge_tail[nt]] * p[:, nt] * (2.0 * aux.edge_tm[nt])
        gt = np.zeros_like(values[args[1]])
        sums = np.add.reduceat(contrib[:, aux.head_order], aux.head_groups, axis=1)
        gt[:, aux.head_ids] = sums
        return [(args[0], gp), (args[1], gt)]
    if op == "stat":
        aux = node.aux
        A = saved[id(node)]
        z = values[nid]
        w = _adjoint_solve(A, gout)
        gp = w[:, aux.edge_head] * z[:, aux.edge_tail]
        gp[:, aux.edge_head == 0] = 0.0  # row 0 was replaced by normalization
        return [(args[0], gp)]
    raise AssertionError(f"no adjoint for op {op!r}")


def _adjoint_solve(A: np.ndarray, gout: np.ndarray) -> np.ndarray:
    failed = np.zeros(A.shape[0], dtype=bool)
    return _batched_solve(np.swapaxes(A, 1, 2), gout, failed)
