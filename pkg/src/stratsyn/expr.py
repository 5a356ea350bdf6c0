"""Typed AST for recurring-visit objective functions.

An objective is a closed-form expression over numerical constants and four
kinds of atoms: expected hitting times, expected squared hitting times,
time-weighted edge frequencies, and raw strategy probabilities.  Combinators
are n-ary addition, multiplication, min and max, division (with a restricted
denominator grammar), and square root.  Sums/mins/maxes may range over the
active configurations or active edges of the evaluated chain component via
comprehension nodes whose templates mention the current edge or config.

Target sets are given as vertex sets and always expand to vertex x memory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

from .model import ConfigGraph, Graph, Vertex


class UnknownReference(ValueError):
    """An expression mentions a vertex, edge, or placeholder that does not resolve."""


class IllegalDenominator(ValueError):
    """A division denominator uses more than constants, frequencies, and probabilities."""


# --- references -------------------------------------------------------------

@dataclass(frozen=True)
class ConfigRef:
    """A configuration: concrete (vertex, mem) or a template placeholder."""

    kind: Literal["concrete", "current", "tail", "head"]
    vertex: Vertex | None = None
    mem: int | None = None


@dataclass(frozen=True)
class EdgeRef:
    """A config edge: concrete or the current edge of an edge comprehension."""

    kind: Literal["concrete", "current"]
    from_vertex: Vertex | None = None
    from_mem: int | None = None
    to_vertex: Vertex | None = None
    to_mem: int | None = None


def cref(vertex: Vertex, mem: int) -> ConfigRef:
    return ConfigRef("concrete", vertex, mem)


def eref(from_vertex: Vertex, from_mem: int, to_vertex: Vertex, to_mem: int) -> EdgeRef:
    return EdgeRef("concrete", from_vertex, from_mem, to_vertex, to_mem)


CURRENT_CONFIG = ConfigRef("current")
TAIL = ConfigRef("tail")
HEAD = ConfigRef("head")
CURRENT_EDGE = EdgeRef("current")


# --- nodes ------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class EdgeTime:
    """Traversal time of an edge, kept symbolic so relaxation can gate it."""

    edge: EdgeRef


@dataclass(frozen=True)
class AtomP:
    """Probability the strategy assigns to an edge."""

    edge: EdgeRef


@dataclass(frozen=True)
class AtomF:
    """Time-weighted long-run frequency of an edge (zero off the component)."""

    edge: EdgeRef


@dataclass(frozen=True)
class AtomFV:
    """Visit frequency of a configuration: the sum of its out-edge frequencies."""

    config: ConfigRef


@dataclass(frozen=True)
class AtomT:
    """Expected hitting time from a configuration to a vertex-set target."""

    config: ConfigRef
    targets: frozenset[Vertex]


@dataclass(frozen=True)
class AtomT2:
    """Expected squared hitting time from a configuration to a target set."""

    config: ConfigRef
    targets: frozenset[Vertex]


@dataclass(frozen=True)
class Add:
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Mul:
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Div:
    num: "Expr"
    den: "Expr"


@dataclass(frozen=True)
class Min:
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Max:
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Sqrt:
    arg: "Expr"


@dataclass(frozen=True)
class SoftMin:
    """Temperature-smoothed min: -t log sum exp(-x/t).  Produced by relaxation;
    the temperature is supplied at evaluation time."""

    args: tuple["Expr", ...]


@dataclass(frozen=True)
class SoftMax:
    """Temperature-smoothed max: t log sum exp(x/t)."""

    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Clamp01:
    """clamp(x, 0, 1); the edge-presence gate of relaxed objectives."""

    arg: "Expr"


@dataclass(frozen=True)
class OverActiveEdges:
    """Combine a template instantiated once per active edge.

    ``tail_in`` / ``head_in`` optionally restrict instances to edges whose
    tail / head vertex lies in the given vertex set.  ``over_all`` switches
    the range from the active edges of the evaluated component to all config
    edges (relaxed form).  ``soft`` marks a min/max combiner as smoothed.
    """

    template: "Expr"
    combine: Literal["add", "min", "max"]
    tail_in: frozenset[Vertex] | None = None
    head_in: frozenset[Vertex] | None = None
    over_all: bool = False
    soft: bool = False


@dataclass(frozen=True)
class OverActiveConfigs:
    """Combine a template instantiated once per active configuration."""

    template: "Expr"
    combine: Literal["add", "min", "max"]
    member_in: frozenset[Vertex] | None = None
    over_all: bool = False
    soft: bool = False


Expr = Union[
    Const, EdgeTime, AtomP, AtomF, AtomFV, AtomT, AtomT2,
    Add, Mul, Div, Min, Max, Sqrt, SoftMin, SoftMax, Clamp01,
    OverActiveEdges, OverActiveConfigs,
]


def add(*args: Expr) -> Add:
    return Add(tuple(args))


def mul(*args: Expr) -> Mul:
    return Mul(tuple(args))


# --- evaluation results -----------------------------------------------------

@dataclass(frozen=True)
class EvalValue:
    """A finite number, positive infinity, or an undefined marker."""

    kind: Literal["finite", "infinite", "undefined"]
    value: float = 0.0

    @staticmethod
    def finite(x: float) -> "EvalValue":
        return EvalValue("finite", float(x))

    @staticmethod
    def from_float(x: float) -> "EvalValue":
        import math
        if math.isnan(x):
            return UNDEFINED
        if math.isinf(x):
            return INFINITE
        return EvalValue("finite", float(x))

    @property
    def is_defined(self) -> bool:
        return self.kind != "undefined"

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    def as_float(self) -> float:
        if self.kind == "finite":
            return self.value
        return float("inf") if self.kind == "infinite" else float("nan")


INFINITE = EvalValue("infinite")
UNDEFINED = EvalValue("undefined")


@dataclass(frozen=True)
class Problem:
    """A complete synthesis instance: terrain, memory budget, goal."""

    graph: Graph
    memory_count: int
    direction: Literal["minimize", "maximize"]
    objective: Expr


# --- validation -------------------------------------------------------------

_DEN_ALLOWED = (Const, AtomF, AtomP, AtomFV, EdgeTime, Add, Mul)


def _check_config_ref(r: ConfigRef, cg: ConfigGraph, edge_ctx: bool, config_ctx: bool) -> None:
    if r.kind == "concrete":
        if (r.vertex, r.mem) not in set(cg.configs):
            raise UnknownReference(f"configuration ({r.vertex!r}, {r.mem!r}) does not exist")
    elif r.kind in ("tail", "head"):
        if not edge_ctx:
            raise UnknownReference(f"{r.kind!r} placeholder used outside an edge comprehension")
    elif r.kind == "current":
        if not config_ctx:
            raise UnknownReference("'current' config placeholder used outside a config comprehension")


def _check_edge_ref(r: EdgeRef, cg: ConfigGraph, edge_ctx: bool) -> None:
    if r.kind == "current":
        if not edge_ctx:
            raise UnknownReference("'current' edge placeholder used outside an edge comprehension")
        return
    e = ((r.from_vertex, r.from_mem), (r.to_vertex, r.to_mem))
    if e not in set(cg.edges):
        raise UnknownReference(f"config edge {e!r} does not exist")


def _check_targets(ts: frozenset[Vertex], cg: ConfigGraph) -> None:
    unknown = ts - set(cg.base.vertices)
    if unknown:
        raise UnknownReference(f"target set mentions unknown vertices {sorted(unknown)!r}")
    if not ts:
        raise UnknownReference("target set is empty")


def validate_expr(e: Expr, cg: ConfigGraph) -> None:
    """Check that all references resolve in ``cg`` and the denominator
    restriction holds: below a Div denominator only constants, traversal
    times, frequencies, probabilities, addition, and multiplication appear."""
    _validate(e, cg, in_den=False, edge_ctx=False, config_ctx=False)


def _validate(e: Expr, cg: ConfigGraph, in_den: bool, edge_ctx: bool, config_ctx: bool) -> None:
    if in_den and not isinstance(e, _DEN_ALLOWED):
        raise IllegalDenominator(f"{type(e).__name__} is not allowed inside a denominator")
    if isinstance(e, Const):
        import math
        if not math.isfinite(e.value):
            raise UnknownReference(f"constant {e.value!r} is not finite")
    elif isinstance(e, (EdgeTime, AtomP, AtomF)):
        _check_edge_ref(e.edge, cg, edge_ctx)
    elif isinstance(e, AtomFV):
        _check_config_ref(e.config, cg, edge_ctx, config_ctx)
    elif isinstance(e, (AtomT, AtomT2)):
        _check_config_ref(e.config, cg, edge_ctx, config_ctx)
        _check_targets(e.targets, cg)
    elif isinstance(e, (Add, Mul, Min, Max, SoftMin, SoftMax)):
        if not e.args:
            raise UnknownReference(f"{type(e).__name__} needs at least one argument")
        for a in e.args:
            _validate(a, cg, in_den, edge_ctx, config_ctx)
    elif isinstance(e, Div):
        _validate(e.num, cg, in_den, edge_ctx, config_ctx)
        _validate(e.den, cg, True, edge_ctx, config_ctx)
    elif isinstance(e, (Sqrt, Clamp01)):
        _validate(e.arg, cg, in_den, edge_ctx, config_ctx)
    elif isinstance(e, OverActiveEdges):
        if edge_ctx or config_ctx:
            raise UnknownReference("nested comprehensions are not supported")
        for fs in (e.tail_in, e.head_in):
            if fs is not None:
                _check_targets(fs, cg)
        _validate(e.template, cg, in_den, edge_ctx=True, config_ctx=False)
    elif isinstance(e, OverActiveConfigs):
        if edge_ctx or config_ctx:
            raise UnknownReference("nested comprehensions are not supported")
        if e.member_in is not None:
            _check_targets(e.member_in, cg)
        _validate(e.template, cg, in_den, edge_ctx=False, config_ctx=True)
    else:
        raise TypeError(f"not an expression node: {e!r}")


def flatten(e: Expr) -> Expr:
    """Collapse nested Add-of-Add and Mul-of-Mul chains (value-preserving)."""
    if isinstance(e, (Add, Mul)):
        cls = type(e)
        out: list[Expr] = []
        for a in e.args:
            fa = flatten(a)
            if isinstance(fa, cls):
                out.extend(fa.args)
            else:
                out.append(fa)
        return cls(tuple(out))
    if isinstance(e, Div):
        return Div(flatten(e.num), flatten(e.den))
    if isinstance(e, Sqrt):
        return Sqrt(flatten(e.arg))
    if isinstance(e, Clamp01):
        return Clamp01(flatten(e.arg))
    if isinstance(e, (Min, Max, SoftMin, SoftMax)):
        return type(e)(tuple(flatten(a) for a in e.args))
    if isinstance(e, OverActiveEdges):
        return OverActiveEdges(flatten(e.template), e.combine, e.tail_in, e.head_in, e.over_all, e.soft)
    if isinstance(e, OverActiveConfigs):
        return OverActiveConfigs(flatten(e.template), e.combine, e.member_in, e.over_all, e.soft)
    return e
