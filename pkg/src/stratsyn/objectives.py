"""Builtin objective families assembled as expression trees.

Four constructors cover the standard recurring-visit goals:

* mean payoff of a vertex cost function, optionally penalized by the
  standard deviation of the visited costs;
* maximal expected renewal (revisit) time of a target set, optionally
  penalized by the standard deviation of the renewal time;
* worst-case damage against an adversary that attacks when the robot
  commits to an edge;
* expected damage under a known attack distribution.

All constructors generalize unit edge lengths to the graph's traversal
times and produce expressions that stay defined on components that visit
every referenced target, going undefined (never wrong) otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from . import expr as E
from .model import ConfigGraph, Vertex


class MissingPayoff(ValueError):
    """The payoff map does not cover a required vertex."""


class EmptyTargets(ValueError):
    """The objective needs a nonempty target set."""


class MissingAttackDistribution(ValueError):
    """The objective needs an attack distribution over the targets."""


@dataclass(frozen=True)
class PayoffSpec:
    """User-level parameters of the builtin objectives.

    ``alpha`` assigns positive payoffs/importances to vertices; ``beta``
    weights the deviation penalty; ``targets`` and ``attack_dist`` configure
    the target-based objectives.
    """

    alpha: Mapping[Vertex, float] = field(default_factory=dict)
    beta: float = 0.0
    targets: frozenset[Vertex] = frozenset()
    attack_dist: Mapping[Vertex, float] | None = None

    def __post_init__(self):
        # zero is allowed: cost-free vertices are a standard modeling device
        for v, a in self.alpha.items():
            if not a >= 0:
                raise MissingPayoff(f"payoff of vertex {v!r} must be nonnegative, got {a!r}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.attack_dist is not None:
            if abs(sum(self.attack_dist.values()) - 1.0) > 1e-9:
                raise MissingAttackDistribution("attack distribution must sum to 1")
            unknown = set(self.attack_dist) - set(self.targets)
            if unknown:
                raise MissingAttackDistribution(f"attack distribution names non-targets {sorted(unknown)!r}")


def _alpha_of(ps: PayoffSpec, v: Vertex) -> float:
    try:
        return float(ps.alpha[v])
    except KeyError:
        raise MissingPayoff(f"no payoff assigned to vertex {v!r}") from None


def _check_targets(ps: PayoffSpec, cg: ConfigGraph) -> list[Vertex]:
    if not ps.targets:
        raise EmptyTargets("objective needs at least one target vertex")
    unknown = set(ps.targets) - set(cg.base.vertices)
    if unknown:
        raise E.UnknownReference(f"targets mention unknown vertices {sorted(unknown)!r}")
    return sorted(ps.targets)


def mean_payoff_expr(ps: PayoffSpec, cg: ConfigGraph) -> E.Expr:
    """Long-run average payoff per visited configuration."""
    terms = tuple(
        E.mul(E.Const(_alpha_of(ps, v)), E.AtomFV(E.cref(v, m)))
        for (v, m) in cg.configs
    )
    return E.Add(terms)


def payoff_deviation_expr(ps: PayoffSpec, cg: ConfigGraph, mp: E.Expr) -> E.Expr:
    """Standard deviation of the payoff of the visited configuration."""
    terms = []
    for (v, m) in cg.configs:
        dev = E.add(mp, E.Const(-_alpha_of(ps, v)))
        terms.append(E.mul(E.AtomFV(E.cref(v, m)), E.mul(dev, dev)))
    return E.Sqrt(E.Add(tuple(terms)))


def mp_objective(ps: PayoffSpec, cg: ConfigGraph) -> E.Expr:
    """Mean payoff, plus ``beta`` times its standard deviation when beta > 0."""
    mp = mean_payoff_expr(ps, cg)
    if ps.beta == 0.0:
        return mp
    return E.add(mp, E.mul(E.Const(ps.beta), payoff_deviation_expr(ps, cg, mp)))


def mp_components(ps: PayoffSpec, cg: ConfigGraph) -> dict[str, E.Expr]:
    mp = mean_payoff_expr(ps, cg)
    return {"mp": mp, "dmp": payoff_deviation_expr(ps, cg, mp)}


def _visit_share_denominator(cg: ConfigGraph, tau: Vertex) -> E.Expr:
    return E.Add(tuple(E.AtomFV(E.cref(tau, m)) for m in range(cg.memory_count)))


def expected_renewal_expr(cg: ConfigGraph, tau: Vertex) -> E.Expr:
    """Expected time between consecutive visits to ``tau``.

    Averages, over the visit distribution across tau's configurations, the
    expected time of one step out of tau plus the hitting time back.  The sum
    ranges over the active out-edges of tau so the value stays defined on
    components that contain only some of tau's configurations.
    """
    targets = frozenset([tau])
    per_edge = E.mul(
        E.AtomFV(E.TAIL),
        E.AtomP(E.CURRENT_EDGE),
        E.add(E.EdgeTime(E.CURRENT_EDGE), E.AtomT(E.HEAD, targets)),
    )
    num = E.OverActiveEdges(per_edge, "add", tail_in=targets)
    return E.Div(num, _visit_share_denominator(cg, tau))


def squared_renewal_expr(cg: ConfigGraph, tau: Vertex) -> E.Expr:
    """Expected squared time between consecutive visits to ``tau``."""
    targets = frozenset([tau])
    tm = E.EdgeTime(E.CURRENT_EDGE)
    t_back = E.AtomT(E.HEAD, targets)
    square = E.add(E.mul(tm, tm), E.mul(E.Const(2.0), tm, t_back), E.AtomT2(E.HEAD, targets))
    per_edge = E.mul(E.AtomFV(E.TAIL), E.AtomP(E.CURRENT_EDGE), square)
    num = E.OverActiveEdges(per_edge, "add", tail_in=targets)
    return E.Div(num, _visit_share_denominator(cg, tau))


def renewal_deviation_expr(cg: ConfigGraph, tau: Vertex, eren: E.Expr | None = None) -> E.Expr:
    """Standard deviation of the renewal time of ``tau``.

    The variance is clamped at zero before the root so that a numerically
    tiny negative cancellation residue on deterministic loops cannot turn
    an exact zero deviation into an undefined value.
    """
    eren = eren if eren is not None else expected_renewal_expr(cg, tau)
    qren = squared_renewal_expr(cg, tau)
    variance = E.add(qren, E.mul(E.Const(-1.0), E.mul(eren, eren)))
    return E.Sqrt(E.Max((E.Const(0.0), variance)))


def renewal_objective(ps: PayoffSpec, cg: ConfigGraph) -> E.Expr:
    """Maximal expected renewal time over the targets, beta-penalized by its
    standard deviation."""
    taus = _check_targets(ps, cg)
    per_target = []
    for tau in taus:
        eren = expected_renewal_expr(cg, tau)
        if ps.beta == 0.0:
            per_target.append(eren)
        else:
            dev = renewal_deviation_expr(cg, tau, eren)
            per_target.append(E.add(eren, E.mul(E.Const(ps.beta), dev)))
    return E.Max(tuple(per_target))


def renewal_components(ps: PayoffSpec, cg: ConfigGraph) -> dict[str, E.Expr]:
    taus = _check_targets(ps, cg)
    erens = {tau: expected_renewal_expr(cg, tau) for tau in taus}
    devs = {tau: renewal_deviation_expr(cg, tau, erens[tau]) for tau in taus}
    return {
        "max_eren": E.Max(tuple(erens[tau] for tau in taus)),
        "max_devren": E.Max(tuple(devs[tau] for tau in taus)),
    }


def adversarial_patrol_objective(ps: PayoffSpec, cg: ConfigGraph) -> E.Expr:
    """Worst-case damage over attacks launched when the robot enters an edge.

    An attack at target tau while the robot walks v -> u costs
    alpha(tau) * (tm(v, u) + hitting time from u to tau); the adversary picks
    the worst active edge and target.
    """
    taus = _check_targets(ps, cg)
    per_target = tuple(
        E.mul(
            E.Const(_alpha_of(ps, tau)),
            E.add(E.EdgeTime(E.CURRENT_EDGE), E.AtomT(E.HEAD, frozenset([tau]))),
        )
        for tau in taus
    )
    worst_target = per_target[0] if len(per_target) == 1 else E.Max(per_target)
    return E.OverActiveEdges(worst_target, "max")


def edam_objective(ps: PayoffSpec, cg: ConfigGraph) -> E.Expr:
    """Expected damage under a known attack distribution over the targets.

    While the robot traverses v -> u it sits mid-edge on average, so an
    attack at tau costs alpha(tau) * (tm(v, u)/2 + hitting time from u);
    edge frequencies weight the traversal the robot is caught on.
    """
    taus = _check_targets(ps, cg)
    if ps.attack_dist is None:
        raise MissingAttackDistribution("edam objective needs an attack distribution")
    per_target = tuple(
        E.mul(
            E.Const(float(ps.attack_dist.get(tau, 0.0)) * _alpha_of(ps, tau)),
            E.add(
                E.mul(E.Const(0.5), E.EdgeTime(E.CURRENT_EDGE)),
                E.AtomT(E.HEAD, frozenset([tau])),
            ),
        )
        for tau in taus
    )
    damage = per_target[0] if len(per_target) == 1 else E.Add(per_target)
    return E.OverActiveEdges(E.mul(E.AtomF(E.CURRENT_EDGE), damage), "add")
