"""Smoothing transform that makes an objective differentiable everywhere.

Rounding a strategy can silently drop edges from the active sets, which
makes the exact objective jump as probabilities cross zero.  The relaxed
objective removes those jumps:

* traversal-time terms inside edge comprehensions are multiplied by
  clamp(gate_scale * p(edge), 0, 1), which fades them out continuously as
  the edge probability vanishes (and equals 1 wherever the probability
  survives the cutoff threshold);
* min and max nodes become temperature-controlled log-sum-exp smoothings;
* comprehensions range over every config edge / configuration, since the
  relaxed objective is only evaluated at strictly positive strategies whose
  single component is the whole configuration graph.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import expr as E


@dataclass(frozen=True)
class RelaxParams:
    """Knobs of the relaxed objective.

    ``gate_scale`` sets where the edge-presence gate saturates (probability
    1/gate_scale, aligned with the default cutoff threshold); the
    temperature controls how sharply soft min/max approximate the exact
    ones (error at most temperature * log(#arguments)).
    """

    gate_scale: float = 1000.0
    softminmax_temperature: float = 0.1

    def __post_init__(self):
        if not self.gate_scale > 0 or not self.softminmax_temperature > 0:
            raise ValueError("gate_scale and softminmax_temperature must be positive")


def _gate(edge: E.EdgeRef, gate_scale: float) -> E.Expr:
    return E.Clamp01(E.mul(E.Const(gate_scale), E.AtomP(edge)))


def _relax(e: E.Expr, rp: RelaxParams, in_edge_template: bool) -> E.Expr:
    if isinstance(e, E.EdgeTime) and in_edge_template:
        return E.mul(_gate(e.edge, rp.gate_scale), e)
    if isinstance(e, (E.Const, E.EdgeTime, E.AtomP, E.AtomF, E.AtomFV, E.AtomT, E.AtomT2)):
        return e
    if isinstance(e, (E.Add, E.Mul, E.SoftMin, E.SoftMax)):
        return type(e)(tuple(_relax(a, rp, in_edge_template) for a in e.args))
    if isinstance(e, E.Div):
        return E.Div(_relax(e.num, rp, in_edge_template), _relax(e.den, rp, in_edge_template))
    if isinstance(e, (E.Sqrt, E.Clamp01)):
        return type(e)(_relax(e.arg, rp, in_edge_template))
    if isinstance(e, E.Min):
        return E.SoftMin(tuple(_relax(a, rp, in_edge_template) for a in e.args))
    if isinstance(e, E.Max):
        return E.SoftMax(tuple(_relax(a, rp, in_edge_template) for a in e.args))
    if isinstance(e, E.OverActiveEdges):
        return E.OverActiveEdges(
            _relax(e.template, rp, in_edge_template=True),
            e.combine, e.tail_in, e.head_in, over_all=True,
            soft=e.combine in ("min", "max"),
        )
    if isinstance(e, E.OverActiveConfigs):
        return E.OverActiveConfigs(
            _relax(e.template, rp, in_edge_template=False),
            e.combine, e.member_in, over_all=True,
            soft=e.combine in ("min", "max"),
        )
    raise TypeError(f"not an expression node: {e!r}")


def relax(e: E.Expr, rp: RelaxParams) -> E.Expr:
    """Smooth surrogate of ``e``; see the module docstring for the rules."""
    return _relax(e, rp, in_edge_template=False)
