"""Terrain graphs, memory, configurations, and strategies.

A terrain is a strongly connected directed graph with positive integer
traversal times.  A robot with ``memory_count`` memory states moves between
configurations (vertex, memory) pairs; a strategy assigns each configuration
a probability distribution over its successor configurations.  Strategies are
produced from unconstrained real coefficients through a per-row softmax and
can be rounded sparse with ``cutoff``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

Vertex = str
Edge = tuple[Vertex, Vertex]
Config = tuple[Vertex, int]
ConfigEdge = tuple[Config, Config]


class GraphError(ValueError):
    """Base class for terrain-model validation failures."""


class NotStronglyConnected(GraphError):
    def __init__(self, source: Vertex, unreachable: Vertex):
        self.source = source
        self.unreachable = unreachable
        super().__init__(f"graph is not strongly connected: no path from {source!r} to {unreachable!r}")


class NonPositiveTraversalTime(GraphError):
    def __init__(self, edge: Edge, value):
        self.edge = edge
        self.value = value
        super().__init__(f"traversal time of edge {edge[0]!r}->{edge[1]!r} must be a positive integer, got {value!r}")


class EmptyRow(ValueError):
    def __init__(self, config: Config, threshold: float):
        self.config = config
        super().__init__(f"cutoff at {threshold} would zero out every move of configuration {config!r}")


@dataclass(frozen=True)
class Graph:
    """Directed terrain graph with per-edge traversal times.

    ``vertices`` keeps user order; ``edges`` are unique ordered pairs
    (self-loops allowed); ``tm`` maps each edge to a traversal time >= 1.
    """

    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    tm: Mapping[Edge, int]

    @staticmethod
    def build(vertices: Iterable[Vertex], edges: Iterable[Edge], tm: Mapping[Edge, int]) -> "Graph":
        return Graph(tuple(vertices), tuple(tuple(e) for e in edges), dict(tm))

    def successors(self, v: Vertex) -> list[Vertex]:
        return [u for (w, u) in self.edges if w == v]


def validate_graph(g: Graph) -> None:
    """Check traversal times and strong connectivity; raise on violation."""
    seen = set()
    for e in g.edges:
        if e in seen:
            raise GraphError(f"duplicate edge {e[0]!r}->{e[1]!r}")
        seen.add(e)
        t = g.tm.get(e)
        if t is None or isinstance(t, bool) or t != int(t) or int(t) < 1:
            raise NonPositiveTraversalTime(e, t)
    if not g.vertices:
        raise GraphError("graph has no vertices")
    index = {v: i for i, v in enumerate(g.vertices)}
    n = len(g.vertices)
    fwd: list[list[int]] = [[] for _ in range(n)]
    bwd: list[list[int]] = [[] for _ in range(n)]
    for (a, b) in g.edges:
        if a not in index or b not in index:
            raise GraphError(f"edge {a!r}->{b!r} references an unknown vertex")
        fwd[index[a]].append(index[b])
        bwd[index[b]].append(index[a])

    def reach(adj, start):
        mark = [False] * n
        mark[start] = True
        stack = [start]
        while stack:
            i = stack.pop()
            for j in adj[i]:
                if not mark[j]:
                    mark[j] = True
                    stack.append(j)
        return mark

    down = reach(fwd, 0)
    up = reach(bwd, 0)
    for i in range(n):
        if not down[i]:
            raise NotStronglyConnected(g.vertices[0], g.vertices[i])
        if not up[i]:
            raise NotStronglyConnected(g.vertices[i], g.vertices[0])


@dataclass(frozen=True, eq=False)
class ConfigGraph:
    """Product of a terrain graph with a finite memory set.

    Configurations are ordered by (vertex position, memory state), config
    edges by (source index, target index) so that the edge list is grouped
    by source row.  The flat numpy views back every numeric routine in the
    package.
    """

    base: Graph
    memory_count: int
    configs: tuple[Config, ...]
    edges: tuple[ConfigEdge, ...]
    # flat views, aligned with `configs` / `edges`
    edge_tail: np.ndarray = field(repr=False)  # (E,) int  source config index
    edge_head: np.ndarray = field(repr=False)  # (E,) int  target config index
    edge_tm: np.ndarray = field(repr=False)    # (E,) float traversal times
    row_start: np.ndarray = field(repr=False)  # (C,) int  offset of each row in the edge list
    row_size: np.ndarray = field(repr=False)   # (C,) int  out-degree of each configuration

    def __post_init__(self):
        for a in (self.edge_tail, self.edge_head, self.edge_tm, self.row_start, self.row_size):
            a.setflags(write=False)

    @property
    def n_configs(self) -> int:
        return len(self.configs)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def config_index(self, c: Config) -> int:
        try:
            return self._config_index[c]
        except AttributeError:
            object.__setattr__(self, "_config_index", {c: i for i, c in enumerate(self.configs)})
            return self._config_index[c]

    def edge_index(self, e: ConfigEdge) -> int:
        try:
            return self._edge_index[e]
        except AttributeError:
            object.__setattr__(self, "_edge_index", {e: i for i, e in enumerate(self.edges)})
            return self._edge_index[e]

    def config_set(self, vertices: Iterable[Vertex]) -> frozenset[int]:
        """Indices of all configurations whose vertex lies in ``vertices``."""
        vs = set(vertices)
        return frozenset(i for i, (v, _) in enumerate(self.configs) if v in vs)

    def out_edges(self, config_idx: int) -> range:
        s = int(self.row_start[config_idx])
        return range(s, s + int(self.row_size[config_idx]))


def build_config_graph(g: Graph, memory_count: int) -> ConfigGraph:
    """Build the configuration graph of ``g`` with ``memory_count`` memory states.

    Memory transitions are unconstrained: every base edge v -> u induces the
    config edges (v, m) -> (u, m') for all memory pairs (m, m').
    """
    validate_graph(g)
    if memory_count < 1:
        raise ValueError("memory_count must be >= 1")
    vidx = {v: i for i, v in enumerate(g.vertices)}
    configs = tuple((v, m) for v in g.vertices for m in range(memory_count))
    cidx = {c: i for i, c in enumerate(configs)}
    edges: list[ConfigEdge] = []
    for (v, m) in configs:
        succ = sorted(((vidx[u], u) for (w, u) in g.edges if w == v))
        for _, u in succ:
            for m2 in range(memory_count):
                edges.append(((v, m), (u, m2)))
    tail = np.array([cidx[e[0]] for e in edges], dtype=np.intp)
    head = np.array([cidx[e[1]] for e in edges], dtype=np.intp)
    tm = np.array([float(g.tm[(e[0][0], e[1][0])]) for e in edges])
    size = np.bincount(tail, minlength=len(configs)).astype(np.intp)
    start = np.concatenate([[0], np.cumsum(size)[:-1]]).astype(np.intp)
    return ConfigGraph(g, memory_count, configs, tuple(edges), tail, head, tm, start, size)


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Unconstrained optimization variables, one per config edge."""

    cg: ConfigGraph
    vector: np.ndarray  # (E,) float

    def __post_init__(self):
        if self.vector.shape != (self.cg.n_edges,):
            raise ValueError(f"expected {self.cg.n_edges} coefficients, got shape {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("coefficients must be finite")
        self.vector.setflags(write=False)

    @staticmethod
    def from_map(cg: ConfigGraph, values: Mapping[ConfigEdge, float]) -> "Coefficients":
        vec = np.array([float(values[e]) for e in cg.edges])
        return Coefficients(cg, vec)

    @property
    def values(self) -> dict[ConfigEdge, float]:
        return {e: float(x) for e, x in zip(self.cg.edges, self.vector)}


@dataclass(frozen=True, eq=False)
class Strategy:
    """Per-configuration distributions over successor configurations.

    ``vector`` holds one probability per config edge of ``cg``; each source
    row sums to 1 (within 1e-12).  Zero entries are kept so the support of a
    rounded strategy stays explicit.
    """

    cg: ConfigGraph
    vector: np.ndarray  # (E,) float in [0, 1]

    def __post_init__(self):
        vec = self.vector
        if vec.shape != (self.cg.n_edges,):
            raise ValueError(f"expected {self.cg.n_edges} probabilities, got shape {vec.shape}")
        if np.any(vec < 0) or np.any(vec > 1) or not np.all(np.isfinite(vec)):
            raise ValueError("strategy probabilities must lie in [0, 1]")
        sums = np.add.reduceat(vec, self.cg.row_start)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"row of configuration {self.cg.configs[bad]!r} sums to {sums[bad]!r}, not 1")
        vec.setflags(write=False)

    @staticmethod
    def from_map(cg: ConfigGraph, probs: Mapping[ConfigEdge, float]) -> "Strategy":
        vec = np.zeros(cg.n_edges)
        for e, p in probs.items():
            vec[cg.edge_index(e)] = float(p)
        return Strategy(cg, vec)

    @property
    def probs(self) -> dict[ConfigEdge, float]:
        return {e: float(p) for e, p in zip(self.cg.edges, self.vector)}

    def prob(self, e: ConfigEdge) -> float:
        return float(self.vector[self.cg.edge_index(e)])

    def support(self) -> np.ndarray:
        return self.vector > 0.0


def row_softmax(cg: ConfigGraph, coeffs: np.ndarray) -> np.ndarray:
    """Stable per-row softmax of a flat (..., E) coefficient array."""
    starts = cg.row_start
    sizes = cg.row_size.astype(np.intp)
    m = np.maximum.reduceat(coeffs, starts, axis=-1)
    m = np.repeat(m, sizes, axis=-1)
    e = np.exp(coeffs - m)
    s = np.add.reduceat(e, starts, axis=-1)
    return e / np.repeat(s, sizes, axis=-1)


def softmax_strategy(cg: ConfigGraph, c: Coefficients) -> Strategy:
    """Turn coefficients into a strictly positive strategy, row by row."""
    if c.cg is not cg and c.cg.edges != cg.edges:
        raise ValueError("coefficients were built for a different configuration graph")
    return Strategy(cg, row_softmax(cg, c.vector))


def cutoff_vector(cg: ConfigGraph, vec: np.ndarray, threshold: float) -> np.ndarray:
    """Zero entries below ``threshold`` and renormalize each row.

    Rows that lose no entry are returned bit-for-bit unchanged, which makes
    the operation exactly idempotent and ``cutoff(s, 0)`` the identity.
    """
    if not (0.0 <= threshold < 1.0):
        raise ValueError("cutoff threshold must lie in [0, 1)")
    keep = vec >= threshold
    kept = np.where(keep, vec, 0.0)
    sums = np.add.reduceat(kept, cg.row_start, axis=-1)
    dropped = np.add.reduceat((~keep).astype(np.float64), cg.row_start, axis=-1) > 0
    bad = sums <= 0.0
    if np.any(bad):
        idx = int(np.argmax(bad.reshape(-1, bad.shape[-1]).any(axis=0) if bad.ndim > 1 else bad))
        raise EmptyRow(cg.configs[idx], threshold)
    scale = np.where(dropped, 1.0 / sums, 1.0)
    return kept * np.repeat(scale, cg.row_size.astype(np.intp), axis=-1)


def cutoff(s: Strategy, threshold: float) -> Strategy:
    """Round a strategy sparse: drop sub-threshold moves, renormalize rows."""
    return Strategy(s.cg, cutoff_vector(s.cg, s.vector, threshold))
