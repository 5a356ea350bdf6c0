"""Markov-chain analysis of a strategy-induced configuration chain.

The chain over configurations is decomposed into bottom strongly connected
components (BSCCs) of its positive-probability edges.  Within a BSCC three
linear systems give the expected hitting times, expected squared hitting
times, and stationary/edge frequencies:

    X_v = 0 on targets,  X_v = sum_w p(v,w) (tm(v,w) + X_w)   otherwise
    Y_v = 0 on targets,  Y_v = sum_w p(v,w) gamma(v,w),
        gamma(v,w) = tm(v,w) (tm(v,w) + 2 X_w) + Y_w
    Z_v = sum_w p(w,v) Z_w   with   sum_v Z_v = 1

Edge frequencies weight the stationary distribution by traversal times:
D(e) = Z_tail(e) * p(e) * tm(e), normalized to sum 1 over active edges.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import Config, ConfigEdge, ConfigGraph, Strategy


class SingularMatrix(ValueError):
    """A linear system has no reliable unique solution (tiny pivot)."""


def solve_linear(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b by dense LU with partial pivoting.

    Raises SingularMatrix when a pivot falls below 1e-12 in magnitude.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < 1e-12:
        raise SingularMatrix("pivot below 1e-12 during LU factorization")
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


@dataclass(frozen=True, eq=False)
class Bscc:
    """One bottom strongly connected component of an induced chain."""

    cg: ConfigGraph
    member_idx: frozenset[int]        # configuration indices
    active_edge_idx: frozenset[int]   # positive-probability edges inside

    @property
    def members(self) -> frozenset[Config]:
        return frozenset(self.cg.configs[i] for i in self.member_idx)

    @property
    def active_edges(self) -> frozenset[ConfigEdge]:
        return frozenset(self.cg.edges[i] for i in self.active_edge_idx)

    def sorted_members(self) -> list[int]:
        return sorted(self.member_idx)

    def sorted_active_edges(self) -> list[int]:
        return sorted(self.active_edge_idx)


def _tarjan_sccs(n: int, succ: list[list[int]]) -> list[list[int]]:
    """Iterative Tarjan; components come out in reverse topological order."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            while pi < len(succ[v]):
                w = succ[v][pi]
                pi += 1
                if index[w] == -1:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    return sccs


def bsccs_from_support(cg: ConfigGraph, support: np.ndarray) -> list[Bscc]:
    """BSCCs of the directed graph over configs given a boolean edge support."""
    n = cg.n_configs
    succ: list[list[int]] = [[] for _ in range(n)]
    for e in np.flatnonzero(support):
        succ[int(cg.edge_tail[e])].append(int(cg.edge_head[e]))
    comp_of = [0] * n
    comps = _tarjan_sccs(n, succ)
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci
    out: list[Bscc] = []
    for ci, comp in enumerate(comps):
        members = set(comp)
        closed = all(comp_of[w] == ci for v in comp for w in succ[v])
        if not closed:
            continue
        edge_idx = frozenset(
            int(e) for e in np.flatnonzero(support)
            if int(cg.edge_tail[e]) in members
        )
        out.append(Bscc(cg, frozenset(members), edge_idx))
    out.sort(key=lambda b: min(b.member_idx))
    return out


def bsccs(cg: ConfigGraph, s: Strategy) -> list[Bscc]:
    """BSCCs of the chain induced by ``s`` (edges with probability > 0)."""
    return bsccs_from_support(cg, s.vector > 0.0)


def _restriction(b: Bscc):
    """Local index maps and edge arrays restricted to a BSCC."""
    members = b.sorted_members()
    local = {g: i for i, g in enumerate(members)}
    edges = b.sorted_active_edges()
    tails = np.array([local[int(b.cg.edge_tail[e])] for e in edges], dtype=np.intp)
    heads = np.array([local[int(b.cg.edge_head[e])] for e in edges], dtype=np.intp)
    tms = b.cg.edge_tm[edges]
    return members, local, np.array(edges, dtype=np.intp), tails, heads, tms


def hitting_time_vector(b: Bscc, s: Strategy, target_idx: frozenset[int]) -> np.ndarray:
    """Expected hitting times of ``target_idx`` from every member, as a dense
    vector over all configurations (non-members are NaN, unreachable targets
    give +inf)."""
    members, local, edges, tails, heads, tms = _restriction(b)
    out = np.full(b.cg.n_configs, np.nan)
    inside = [local[t] for t in target_idx if t in b.member_idx]
    if not inside:
        out[members] = np.inf
        return out
    k = len(members)
    p = s.vector[edges]
    is_target = np.zeros(k, dtype=bool)
    is_target[inside] = True
    free = ~is_target[tails]
    A = np.eye(k)
    np.subtract.at(A, (tails[free], heads[free]), p[free])
    rhs = np.zeros(k)
    np.add.at(rhs, tails[free], p[free] * tms[free])
    x = _solve_or_raise(A, rhs)
    out[members] = x
    return out


def squared_hitting_time_vector(
    b: Bscc, s: Strategy, target_idx: frozenset[int], t_vec: np.ndarray
) -> np.ndarray:
    """Expected squared hitting times, given the plain hitting times ``t_vec``."""
    members, local, edges, tails, heads, tms = _restriction(b)
    out = np.full(b.cg.n_configs, np.nan)
    inside = [local[t] for t in target_idx if t in b.member_idx]
    if not inside:
        out[members] = np.inf
        return out
    k = len(members)
    p = s.vector[edges]
    t_local = t_vec[members]
    is_target = np.zeros(k, dtype=bool)
    is_target[inside] = True
    free = ~is_target[tails]
    A = np.eye(k)
    np.subtract.at(A, (tails[free], heads[free]), p[free])
    gamma = tms * (tms + 2.0 * t_local[heads])
    rhs = np.zeros(k)
    np.add.at(rhs, tails[free], p[free] * gamma[free])
    y = _solve_or_raise(A, rhs)
    out[members] = y
    return out


def frequency_vectors(b: Bscc, s: Strategy) -> tuple[np.ndarray, np.ndarray]:
    """Stationary distribution over configs and time-weighted edge frequencies.

    Returns a pair of dense vectors: config frequencies (zero outside the
    BSCC members) and edge frequencies (zero outside the active edges).
    """
    members, local, edges, tails, heads, tms = _restriction(b)
    k = len(members)
    p = s.vector[edges]
    A = np.eye(k)
    np.subtract.at(A, (heads, tails), p)  # rows of I - P^T
    A[0, :] = 1.0                         # replace one equation by normalization
    rhs = np.zeros(k)
    rhs[0] = 1.0
    z = _solve_or_raise(A, rhs)
    d = z[tails] * p * tms
    total = d.sum()
    if total <= 0.0:
        raise SingularMatrix("degenerate stationary edge weights")
    config_freq = np.zeros(b.cg.n_configs)
    config_freq[members] = z
    edge_freq = np.zeros(b.cg.n_edges)
    edge_freq[edges] = d / total
    return config_freq, edge_freq


def _solve_or_raise(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    x = solve_linear(A, rhs)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("non-finite solution")
    return x


@dataclass(frozen=True)
class HittingProfile:
    """Expected and squared expected hitting times of one target set.

    Maps cover exactly the BSCC members; configurations outside the component
    have undefined hitting times and are absent.
    """

    times: dict[Config, float]
    squared_times: dict[Config, float]


@dataclass(frozen=True)
class FrequencyProfile:
    """Stationary visit distribution and time-weighted edge frequencies."""

    config_freq: dict[Config, float]
    edge_freq: dict[ConfigEdge, float]

    def freq_of(self, e: ConfigEdge) -> float:
        return self.edge_freq.get(e, 0.0)


def hitting_times(b: Bscc, s: Strategy, targets: frozenset[Config]) -> dict[Config, float]:
    """Expected hitting times of ``targets`` from each member of ``b``.

    Members are keys; configurations outside the BSCC are absent (their
    hitting times are undefined).  If no target intersects the BSCC every
    value is +inf.
    """
    tidx = frozenset(b.cg.config_index(c) for c in targets)
    vec = hitting_time_vector(b, s, tidx)
    return {b.cg.configs[i]: float(vec[i]) for i in b.sorted_members()}


def squared_hitting_times(
    b: Bscc, s: Strategy, targets: frozenset[Config], t: dict[Config, float] | None = None
) -> dict[Config, float]:
    """Expected squared hitting times; ``t`` may carry precomputed times."""
    tidx = frozenset(b.cg.config_index(c) for c in targets)
    t_vec = np.full(b.cg.n_configs, np.nan)
    if t is not None and all(math.isfinite(v) for v in t.values()):
        for c, v in t.items():
            t_vec[b.cg.config_index(c)] = v
    else:
        t_vec = hitting_time_vector(b, s, tidx)
    vec = squared_hitting_time_vector(b, s, tidx, t_vec)
    return {b.cg.configs[i]: float(vec[i]) for i in b.sorted_members()}


def hitting_profile(b: Bscc, s: Strategy, targets: frozenset[Config]) -> HittingProfile:
    t = hitting_times(b, s, targets)
    t2 = squared_hitting_times(b, s, targets, t)
    return HittingProfile(t, t2)


def frequencies(b: Bscc, s: Strategy) -> FrequencyProfile:
    """Stationary config frequencies and time-weighted edge frequencies."""
    config_vec, edge_vec = frequency_vectors(b, s)
    cf = {b.cg.configs[i]: float(config_vec[i]) for i in b.sorted_members()}
    ef = {b.cg.edges[e]: float(edge_vec[e]) for e in b.sorted_active_edges()}
    return FrequencyProfile(cf, ef)
