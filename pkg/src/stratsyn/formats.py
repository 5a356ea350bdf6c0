"""JSON schemas for graphs, objectives, and strategies.

Graph files::

    {"vertices": ["a", "b"],
     "edges": [{"from": "a", "to": "b", "tm": 1, "undirected": true}, ...]}

``"undirected": true`` expands an edge into both directions with the same
traversal time.  Objective files hold either a builtin spec::

    {"builtin": "mp" | "renewal" | "adversarial_patrol" | "edam",
     "alpha": {"a": 7, ...}, "beta": 0.3, "targets": ["a"],
     "pi": {"a": 1.0}, "direction": "minimize"}

or a full expression tree of nodes tagged by ``"kind"`` (see
``expr_from_json``).  Strategy files list every configuration row with its
complete move distribution, zero entries included, so the support structure
of a rounded strategy is explicit::

    {"memory_count": 2,
     "rows": [{"vertex": "a", "mem": 0,
               "moves": [{"to": "b", "mem_to": 0, "p": 0.5}, ...]}, ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as E
from .model import ConfigGraph, Graph, Strategy, build_config_graph, validate_graph
from .objectives import (
    PayoffSpec,
    adversarial_patrol_objective,
    edam_objective,
    mp_components,
    mp_objective,
    renewal_components,
    renewal_objective,
)


class ParseError(ValueError):
    """Malformed input file; carries position info when available."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


def _load_json(path) -> object:
    text = Path(path).read_text()  # OSError propagates: I/O failures are not parse errors
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON in {path}: {err.msg}", err.lineno, err.colno) from None


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def bundled_model_path(name: str) -> Path:
    """Path of a model file shipped with the package (e.g. ``fig2.json``)."""
    return Path(str(resources.files("stratsyn") / "models" / name))


# --- graphs -------------------------------------------------------------

def load_graph(path) -> Graph:
    """Parse and validate a graph file."""
    doc = _load_json(path)
    return graph_from_json(doc)


def graph_from_json(doc) -> Graph:
    if not isinstance(doc, dict) or "vertices" not in doc or "edges" not in doc:
        raise ParseError("graph file needs 'vertices' and 'edges'")
    vertices = doc["vertices"]
    if not isinstance(vertices, list) or not all(isinstance(v, str) for v in vertices):
        raise ParseError("'vertices' must be a list of strings")
    edges: list[tuple[str, str]] = []
    tm: dict[tuple[str, str], int] = {}

    def put(a, b, t):
        e = (a, b)
        if e in tm:
            raise ParseError(f"duplicate edge {a!r}->{b!r}")
        edges.append(e)
        tm[e] = t

    for item in doc["edges"]:
        if not isinstance(item, dict) or "from" not in item or "to" not in item:
            raise ParseError(f"edge entries need 'from' and 'to': {item!r}")
        t = item.get("tm", 1)
        if isinstance(t, bool) or not isinstance(t, int) or t < 1:
            raise ParseError(f"edge {item['from']!r}->{item['to']!r} needs a positive integer 'tm'")
        put(item["from"], item["to"], t)
        if item.get("undirected"):
            put(item["to"], item["from"], t)
    g = Graph.build(vertices, edges, tm)
    validate_graph(g)
    return g


def graph_to_json(g: Graph) -> dict:
    return {
        "vertices": list(g.vertices),
        "edges": [{"from": a, "to": b, "tm": int(g.tm[(a, b)])} for (a, b) in g.edges],
    }


def write_graph(g: Graph, path) -> None:
    _dump_json(graph_to_json(g), path)


# --- expressions ----------------------------------------------------------

def _config_ref_to_json(r: E.ConfigRef) -> dict:
    if r.kind == "concrete":
        return {"vertex": r.vertex, "mem": r.mem}
    return {"current": r.kind if r.kind != "current" else "config"}


def _config_ref_from_json(doc) -> E.ConfigRef | list[E.ConfigRef]:
    if "current" in doc:
        which = doc["current"]
        if which in ("tail", "head"):
            return E.ConfigRef(which)
        return E.CURRENT_CONFIG
    if "mem" in doc and doc["mem"] is not None:
        return E.cref(doc["vertex"], int(doc["mem"]))
    return doc["vertex"]  # wildcard memory, expanded by the caller


def _edge_ref_to_json(r: E.EdgeRef) -> dict:
    if r.kind == "current":
        return {"current": "edge"}
    return {"from": r.from_vertex, "mem_from": r.from_mem, "to": r.to_vertex, "mem_to": r.to_mem}


def expr_to_json(e: E.Expr) -> dict:
    if isinstance(e, E.Const):
        return {"kind": "const", "value": e.value}
    if isinstance(e, E.EdgeTime):
        return {"kind": "edge_time", "edge": _edge_ref_to_json(e.edge)}
    if isinstance(e, E.AtomP):
        return {"kind": "p", "edge": _edge_ref_to_json(e.edge)}
    if isinstance(e, E.AtomF):
        return {"kind": "freq", "edge": _edge_ref_to_json(e.edge)}
    if isinstance(e, E.AtomFV):
        return {"kind": "visit_freq", "config": _config_ref_to_json(e.config)}
    if isinstance(e, E.AtomT):
        return {"kind": "hit", "config": _config_ref_to_json(e.config), "targets": sorted(e.targets)}
    if isinstance(e, E.AtomT2):
        return {"kind": "hit_sq", "config": _config_ref_to_json(e.config), "targets": sorted(e.targets)}
    if isinstance(e, (E.Add, E.Mul, E.Min, E.Max, E.SoftMin, E.SoftMax)):
        kinds = {E.Add: "add", E.Mul: "mul", E.Min: "min", E.Max: "max",
                 E.SoftMin: "soft_min", E.SoftMax: "soft_max"}
        return {"kind": kinds[type(e)], "args": [expr_to_json(a) for a in e.args]}
    if isinstance(e, E.Div):
        return {"kind": "div", "num": expr_to_json(e.num), "den": expr_to_json(e.den)}
    if isinstance(e, E.Sqrt):
        return {"kind": "sqrt", "arg": expr_to_json(e.arg)}
    if isinstance(e, E.Clamp01):
        return {"kind": "clamp01", "arg": expr_to_json(e.arg)}
    if isinstance(e, E.OverActiveEdges):
        out = {"kind": "over_active_edges", "template": expr_to_json(e.template), "combine": e.combine}
        if e.tail_in is not None:
            out["tail_in"] = sorted(e.tail_in)
        if e.head_in is not None:
            out["head_in"] = sorted(e.head_in)
        if e.over_all:
            out["over_all"] = True
        if e.soft:
            out["soft"] = True
        return out
    if isinstance(e, E.OverActiveConfigs):
        out = {"kind": "over_active_configs", "template": expr_to_json(e.template), "combine": e.combine}
        if e.member_in is not None:
            out["member_in"] = sorted(e.member_in)
        if e.over_all:
            out["over_all"] = True
        if e.soft:
            out["soft"] = True
        return out
    raise TypeError(f"not an expression node: {e!r}")


def expr_from_json(doc, memory_count: int) -> E.Expr:
    """Rebuild an expression; wildcard-memory refs expand to sums over memory."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ParseError(f"expression nodes need a 'kind': {doc!r}")
    kind = doc["kind"]
    M = memory_count
    if kind == "const":
        return E.Const(float(doc["value"]))
    if kind in ("edge_time", "p", "freq"):
        edoc = doc["edge"]
        if "current" in edoc:
            ref: E.EdgeRef | None = E.CURRENT_EDGE
        elif edoc.get("mem_from") is None or edoc.get("mem_to") is None:
            if kind != "freq":
                raise ParseError(f"wildcard memory is only allowed on 'freq' atoms: {doc!r}")
            return E.Add(tuple(
                E.AtomF(E.eref(edoc["from"], mf, edoc["to"], mt))
                for mf in range(M) for mt in range(M)
            ))
        else:
            ref = E.eref(edoc["from"], int(edoc["mem_from"]), edoc["to"], int(edoc["mem_to"]))
        node = {"edge_time": E.EdgeTime, "p": E.AtomP, "freq": E.AtomF}[kind]
        return node(ref)
    if kind == "visit_freq":
        r = _config_ref_from_json(doc["config"])
        if isinstance(r, str):  # wildcard memory: total visit frequency of the vertex
            return E.Add(tuple(E.AtomFV(E.cref(r, mm)) for mm in range(M)))
        return E.AtomFV(r)
    if kind in ("hit", "hit_sq"):
        r = _config_ref_from_json(doc["config"])
        if isinstance(r, str):
            raise ParseError(f"hitting-time atoms need an explicit memory state: {doc!r}")
        targets = frozenset(doc["targets"])
        return (E.AtomT if kind == "hit" else E.AtomT2)(r, targets)
    if kind in ("add", "mul", "min", "max", "soft_min", "soft_max"):
        args = tuple(expr_from_json(a, M) for a in doc["args"])
        node = {"add": E.Add, "mul": E.Mul, "min": E.Min, "max": E.Max,
                "soft_min": E.SoftMin, "soft_max": E.SoftMax}[kind]
        return node(args)
    if kind == "div":
        return E.Div(expr_from_json(doc["num"], M), expr_from_json(doc["den"], M))
    if kind == "sqrt":
        return E.Sqrt(expr_from_json(doc["arg"], M))
    if kind == "clamp01":
        return E.Clamp01(expr_from_json(doc["arg"], M))
    if kind == "over_active_edges":
        return E.OverActiveEdges(
            expr_from_json(doc["template"], M), doc["combine"],
            frozenset(doc["tail_in"]) if "tail_in" in doc else None,
            frozenset(doc["head_in"]) if "head_in" in doc else None,
            bool(doc.get("over_all", False)), bool(doc.get("soft", False)),
        )
    if kind == "over_active_configs":
        return E.OverActiveConfigs(
            expr_from_json(doc["template"], M), doc["combine"],
            frozenset(doc["member_in"]) if "member_in" in doc else None,
            bool(doc.get("over_all", False)), bool(doc.get("soft", False)),
        )
    raise ParseError(f"unknown expression kind {kind!r}")


# --- objectives -----------------------------------------------------------

_BUILTINS = {
    "mp": mp_objective,
    "renewal": renewal_objective,
    "adversarial_patrol": adversarial_patrol_objective,
    "edam": edam_objective,
}


@dataclass(frozen=True)
class ObjectiveSpec:
    """A loaded objective: expression, direction, and reporting components."""

    expression: E.Expr
    direction: str
    components: dict[str, E.Expr]
    builtin: str | None = None
    payoff: PayoffSpec | None = None
    doc: dict | None = None


def objective_from_json(doc: dict, cg: ConfigGraph) -> ObjectiveSpec:
    if not isinstance(doc, dict):
        raise ParseError("objective file must hold a JSON object")
    direction = doc.get("direction", "minimize")
    if direction not in ("minimize", "maximize"):
        raise ParseError(f"unknown direction {direction!r}")
    if "builtin" in doc:
        name = doc["builtin"]
        if name not in _BUILTINS:
            raise ParseError(f"unknown builtin objective {name!r}")
        ps = PayoffSpec(
            alpha={k: float(v) for k, v in doc.get("alpha", {}).items()},
            beta=float(doc.get("beta", 0.0)),
            targets=frozenset(doc.get("targets", [])),
            attack_dist={k: float(v) for k, v in doc["pi"].items()} if "pi" in doc else None,
        )
        expr = _BUILTINS[name](ps, cg)
        components: dict[str, E.Expr] = {}
        if name == "mp":
            components = mp_components(ps, cg)
        elif name == "renewal":
            components = renewal_components(ps, cg)
        return ObjectiveSpec(expr, direction, components, name, ps, doc)
    if "kind" in doc:
        return ObjectiveSpec(expr_from_json(doc, cg.memory_count), direction, {}, None, None, doc)
    raise ParseError("objective file needs either 'builtin' or an expression 'kind'")


def load_objective(path, cg: ConfigGraph) -> ObjectiveSpec:
    return objective_from_json(_load_json(path), cg)


# --- strategies -----------------------------------------------------------

def strategy_to_json(s: Strategy) -> dict:
    cg = s.cg
    rows = []
    for ci, (v, m) in enumerate(cg.configs):
        moves = []
        for e in cg.out_edges(ci):
            (_, _), (u, m2) = cg.edges[e]
            moves.append({"to": u, "mem_to": m2, "p": float(s.vector[e])})
        rows.append({"vertex": v, "mem": m, "moves": moves})
    return {"memory_count": cg.memory_count, "rows": rows}


def strategy_from_json(doc: dict, cg: ConfigGraph) -> Strategy:
    if not isinstance(doc, dict) or "rows" not in doc:
        raise ParseError("strategy file needs 'rows'")
    if int(doc.get("memory_count", cg.memory_count)) != cg.memory_count:
        raise ParseError(
            f"strategy has memory_count {doc.get('memory_count')!r}, expected {cg.memory_count}"
        )
    vec = np.zeros(cg.n_edges)
    for row in doc["rows"]:
        src = (row["vertex"], int(row["mem"]))
        for mv in row["moves"]:
            e = (src, (mv["to"], int(mv["mem_to"])))
            try:
                vec[cg.edge_index(e)] = float(mv["p"])
            except KeyError:
                raise ParseError(f"strategy uses nonexistent config edge {e!r}") from None
    try:
        return Strategy(cg, vec)
    except ValueError as err:
        raise ParseError(f"invalid strategy: {err}") from None


def write_strategy(s: Strategy, path) -> None:
    _dump_json(strategy_to_json(s), path)


def load_strategy(path, cg: ConfigGraph) -> Strategy:
    return strategy_from_json(_load_json(path), cg)
