"""Structural checks on value tables and shape verification for policies.

Solver value tables carry more information than their numbers: whether the
value rises when a pair of items is added, whether it is discretely convex
along the direction a threshold rule controls, whether parallel edges can
be exchanged without changing marginal values.  These are the properties
that make threshold and priority rules optimal, so checking them on a
computed table turns a qualitative claim about a policy class into a
finite numerical test.

Every checker reads interior states only: balanced vectors whose
coordinates stay at least ``margin`` below the cap, probed so that every
shifted state is interior too.  Values at truncation-tainted states never
enter a verdict.  Reports are deterministic: the largest violation wins,
and ties resolve to the lexicographically smallest witness because states
are scanned in ascending lexicographic order.

Pair arguments are (demand index, supply index) pairs in file order, the
same convention as arrival atoms; a pair does not need to be an edge of
the graph, since adding one item to each side keeps a state balanced
either way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import WrongGraphClass
from .graphs import COMPLETE, MatchingGraph, N_SHAPED, W_SHAPED, classify
from .policies import Policy
from .solver import TruncatedStateSpace, ValueFunction
from .states import n_layout, node_usage, w_layout

PROPERTY_TOL = 1e-9
MAX_WITNESSES = 10


@dataclass(frozen=True)
class PropertyReport:
    """Verdict of one structural property check.

    ``worst_violation`` is the largest amount by which the property's
    inequality is broken, clamped at zero, so the pass flag is exactly
    ``worst_violation <= tolerance``.  ``witness`` locates the instance
    achieving the largest raw excess (the closest call when the check
    passes); it is None only when no instance fit inside the interior.
    """

    name: str
    passed: bool
    worst_violation: float
    witness: dict | None
    tolerance: float
    checked: int

    def to_record(self) -> dict:
        return {
            "kind": "property",
            "name": self.name,
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "witness": self.witness,
            "tolerance": self.tolerance,
            "checked": self.checked,
        }


@dataclass(frozen=True)
class ShapeReport:
    """Verdict of a policy shape verification.

    ``inferred`` holds the family parameters read off the decisions (for
    the threshold family, {"t": value} with value an int, ``math.inf``
    when the flexible pair is never matched, or None when no decision
    pins it down).  ``witnesses`` records up to :data:`MAX_WITNESSES`
    offending states; ``violation_count`` keeps the full count.
    """

    family: str
    passed: bool
    inferred: dict
    witnesses: tuple[dict, ...]
    violation_count: int
    checked: int

    def to_record(self) -> dict:
        inferred = {
            key: ("inf" if val == math.inf else val)
            for key, val in self.inferred.items()
        }
        return {
            "kind": "policy_shape",
            "family": self.family,
            "passed": self.passed,
            "inferred": inferred,
            "witnesses": list(self.witnesses),
            "violation_count": self.violation_count,
            "checked": self.checked,
        }


def write_reports(
    reports: Iterable[PropertyReport | ShapeReport], file: IO[str] | str | Path
) -> None:
    """Write reports as JSON lines, one record per report."""
    if isinstance(file, (str, Path)):
        with open(file, "w", encoding="utf-8") as handle:
            write_reports(reports, handle)
        return
    for report in reports:
        file.write(json.dumps(report.to_record(), sort_keys=True))
        file.write("\n")


# ---- table access ----


def _box_table(space: TruncatedStateSpace, v) -> np.ndarray:
    if isinstance(v, ValueFunction):
        data = v.as_box() if v.layout != "box" else v.data
    else:
        data = np.asarray(v, dtype=float)
    want = space.shape + (space.n_atoms,)
    if data.shape != want:
        raise ValueError(f"value table must have shape {want}, got {data.shape}")
    return data


def _values_at(
    space: TruncatedStateSpace, table: np.ndarray, states: np.ndarray
) -> np.ndarray:
    """Rows of the table at the given states, one column per arrival atom."""
    if len(states) == 0:
        return np.empty((0, space.n_atoms))
    flat = np.ravel_multi_index(states.T, space.shape)
    return table.reshape(-1, space.n_atoms)[flat]


def _interior_base(
    space: TruncatedStateSpace,
    deltas: Sequence[np.ndarray],
    keep: np.ndarray | None = None,
) -> np.ndarray:
    """Interior states whose shift by every delta stays interior and valid."""
    base = space.interior_balanced_states
    if keep is not None:
        base = base[keep(base)]
    hi = space.cap - space.margin
    mask = np.ones(len(base), dtype=bool)
    for delta in deltas:
        shifted = base + delta
        mask &= np.all((shifted >= 0) & (shifted <= hi), axis=1)
    return base[mask]


def _class_pair(graph: MatchingGraph, pair: Sequence[int]) -> tuple[int, int]:
    i, j = (int(v) for v in pair)
    if not (0 <= i < graph.n_d and 0 <= j < graph.n_s):
        raise ValueError(
            f"pair ({i}, {j}) out of range for {graph.n_d} demand and "
            f"{graph.n_s} supply classes"
        )
    return i, j


def _pair_vector(graph: MatchingGraph, i: int, j: int) -> np.ndarray:
    vec = np.zeros(graph.n_nodes, dtype=np.int64)
    vec[i] += 1
    vec[graph.n_d + j] += 1
    return vec


def _pair_label(graph: MatchingGraph, i: int, j: int) -> str:
    return f"{graph.demand_nodes[i]},{graph.supply_nodes[j]}"


def _reduce(
    name: str,
    space: TruncatedStateSpace,
    base: np.ndarray,
    excess: np.ndarray,
    tol: float,
    extra: dict | None = None,
) -> PropertyReport:
    """Fold per-instance excesses into a report; positive excess violates."""
    checked = int(excess.size)
    if checked == 0:
        return PropertyReport(name, True, 0.0, None, tol, 0)
    flat = int(np.argmax(excess))
    row, a_idx = divmod(flat, excess.shape[1])
    worst = max(float(excess.ravel()[flat]), 0.0)
    i, j = space.graph.arrival_atoms[a_idx]
    witness = {"q": [int(x) for x in base[row]], "atom": [i, j]}
    if extra:
        witness.update(extra)
    return PropertyReport(name, worst <= tol, worst, witness, tol, checked)


# ---- property checkers ----


def check_increasing(
    space: TruncatedStateSpace, v, pair: Sequence[int], *, tol: float = PROPERTY_TOL
) -> PropertyReport:
    """Whether v never decreases when the given pair is added to the queue.

    Checks v(q + e, a) >= v(q, a) for the pair vector e at every interior
    (q, a) whose shifted state stays interior.  Works on any graph and on
    pairs outside the edge set.
    """
    graph = space.graph
    i, j = _class_pair(graph, pair)
    table = _box_table(space, v)
    delta = _pair_vector(graph, i, j)
    base = _interior_base(space, [delta])
    excess = _values_at(space, table, base) - _values_at(space, table, base + delta)
    return _reduce(f"increasing[{_pair_label(graph, i, j)}]", space, base, excess, tol)


def _convex_guards(
    space: TruncatedStateSpace,
) -> dict[tuple[int, int], tuple[int, int]]:
    """Supported convexity directions mapped to their (high, low) guard axes.

    A direction is checked only on states with q[high] >= q[low]; that is
    the half-space on which repeated steps keep comparing the same side of
    the threshold.
    """
    graph = space.graph
    tag = classify(graph).tag
    if tag == N_SHAPED:
        lay = n_layout(graph)
        return {
            (lay.d1, lay.s2_local): (lay.d1, lay.s1),
            (lay.d2, lay.s1_local): (lay.s1, lay.d1),
        }
    if tag == W_SHAPED:
        lay = w_layout(graph)
        return {
            (lay.d2, lay.s1_local): (lay.s1, lay.d1),
            (lay.d1, lay.s2_local): (lay.d1, lay.s1),
            (lay.d2, lay.s2_local): (lay.s2, lay.d3),
            (lay.d3, lay.s1_local): (lay.d3, lay.s2),
        }
    raise WrongGraphClass(
        f"convexity directions are defined for N and W shaped graphs, got {tag}"
    )


def check_convex(
    space: TruncatedStateSpace, v, direction: Sequence[int], *, tol: float = PROPERTY_TOL
) -> PropertyReport:
    """Second differences of v along a repeated pair direction.

    Checks v(q + 2e, a) - v(q + e, a) >= v(q + e, a) - v(q, a) on the
    half-space belonging to the direction.  Supported directions are the
    flexible and the missing pair of an N graph, and the two middle edges
    plus the two missing diagonal pairs of a W graph.
    """
    graph = space.graph
    i, j = _class_pair(graph, direction)
    guards = _convex_guards(space)
    if (i, j) not in guards:
        names = ", ".join(f"({_pair_label(graph, a, b)})" for a, b in guards)
        raise ValueError(
            f"({_pair_label(graph, i, j)}) is not a convexity direction of this "
            f"graph; supported: {names}"
        )
    high, low = guards[(i, j)]
    table = _box_table(space, v)
    delta = _pair_vector(graph, i, j)
    base = _interior_base(
        space, [delta, 2 * delta], keep=lambda b: b[:, high] >= b[:, low]
    )
    mid = _values_at(space, table, base + delta)
    excess = (
        2.0 * mid
        - _values_at(space, table, base)
        - _values_at(space, table, base + 2 * delta)
    )
    return _reduce(f"convex[{_pair_label(graph, i, j)}]", space, base, excess, tol)


def check_boundary(
    space: TruncatedStateSpace,
    v,
    edge: Sequence[int] | None = None,
    *,
    tol: float = PROPERTY_TOL,
) -> PropertyReport:
    """First-step comparison at the empty queue, per arrival atom.

    Checks v(0, a) - v(e_miss, a) <= v(e_edge, a) - v(0, a): stepping into
    the missing pair may not improve the value by more than stepping along
    the named edge worsens it.  On an N graph the edge is the flexible
    pair (the default); on a W graph it must be one of the two middle
    edges, each paired with its opposite missing diagonal.
    """
    graph = space.graph
    tag = classify(graph).tag
    if tag == N_SHAPED:
        lay = n_layout(graph)
        flexible = (lay.d1, lay.s2_local)
        if edge is None:
            edge = flexible
        if _class_pair(graph, edge) != flexible:
            raise ValueError(
                f"the boundary edge of an N graph is the flexible pair "
                f"({_pair_label(graph, *flexible)})"
            )
        rhs_pair = flexible
        lhs_pair = (lay.d2, lay.s1_local)
    elif tag == W_SHAPED:
        lay = w_layout(graph)
        partners = {
            (lay.d2, lay.s1_local): (lay.d1, lay.s2_local),
            (lay.d2, lay.s2_local): (lay.d3, lay.s1_local),
        }
        if edge is None:
            raise ValueError(
                "a W graph has two boundary variants; pass one middle edge"
            )
        rhs_pair = _class_pair(graph, edge)
        if rhs_pair not in partners:
            names = ", ".join(f"({_pair_label(graph, a, b)})" for a, b in partners)
            raise ValueError(
                f"({_pair_label(graph, *rhs_pair)}) is not a middle edge; "
                f"supported: {names}"
            )
        lhs_pair = partners[rhs_pair]
    else:
        raise WrongGraphClass(
            f"the boundary comparison is defined for N and W shaped graphs, got {tag}"
        )
    if space.cap - space.margin < 1:
        raise ValueError(
            "the interior box must contain the single-pair states; raise the "
            "cap or lower the margin"
        )
    table = _box_table(space, v)
    origin = np.zeros((1, graph.n_nodes), dtype=np.int64)
    at_origin = _values_at(space, table, origin)
    at_lhs = _values_at(space, table, origin + _pair_vector(graph, *lhs_pair))
    at_rhs = _values_at(space, table, origin + _pair_vector(graph, *rhs_pair))
    excess = (at_origin - at_lhs) - (at_rhs - at_origin)
    return _reduce(
        f"boundary[{_pair_label(graph, *rhs_pair)}]", space, origin, excess, tol
    )


def check_undesirable(
    space: TruncatedStateSpace, v, extreme: Sequence[int], *, tol: float = PROPERTY_TOL
) -> PropertyReport:
    """Whether shifting one item from a neighbor onto an extreme edge costs.

    For every edge sharing a node with the given extreme edge, checks
    v(q + e_extreme - e_neighbor, a) >= v(q, a) wherever the shifted state
    is valid and interior.  A failing report means holding items on the
    extreme pair can be cheaper than on its neighbor, so saturating the
    extreme edge first would not be optimal.  Needs a tree-structured
    graph and an edge with a degree-one endpoint.
    """
    graph = space.graph
    if len(graph.edges) != graph.n_nodes - 1:
        raise WrongGraphClass(
            "undesirability is defined on acyclic (tree-structured) graphs"
        )
    i1, j1 = _class_pair(graph, extreme)
    info = classify(graph)
    if (i1, j1) not in info.extreme_edges:
        raise ValueError(
            f"({_pair_label(graph, i1, j1)}) is not an extreme edge; extreme "
            f"edges: {[(_pair_label(graph, a, b)) for a, b in info.extreme_edges]}"
        )
    table = _box_table(space, v)
    name = f"undesirable[{_pair_label(graph, i1, j1)}]"
    checked = 0
    best: tuple[float, PropertyReport] | None = None
    for i2, j2 in graph.edge_index:
        if (i2, j2) == (i1, j1) or (i2 != i1 and j2 != j1):
            continue
        delta = _pair_vector(graph, i1, j1) - _pair_vector(graph, i2, j2)
        base = _interior_base(space, [delta])
        excess = _values_at(space, table, base) - _values_at(
            space, table, base + delta
        )
        checked += excess.size
        report = _reduce(
            name, space, base, excess, tol, extra={"neighbor": [i2, j2]}
        )
        if report.witness is None:
            continue
        raw = float(excess.ravel()[int(np.argmax(excess))])
        if best is None or raw > best[0]:
            best = (raw, report)
    if best is None:
        return PropertyReport(name, True, 0.0, None, tol, 0)
    report = best[1]
    return PropertyReport(
        name, report.passed, report.worst_violation, report.witness, tol, checked
    )


def _w_pairs(space: TruncatedStateSpace) -> dict[str, tuple[int, int]]:
    graph = space.graph
    if classify(graph).tag != W_SHAPED:
        raise WrongGraphClass(
            f"this property is defined on W shaped graphs, got {classify(graph).tag}"
        )
    lay = w_layout(graph)
    return {
        "middle1": (lay.d2, lay.s1_local),
        "middle2": (lay.d2, lay.s2_local),
        "miss1": (lay.d3, lay.s1_local),
        "miss2": (lay.d1, lay.s2_local),
    }


def check_exchangeable(
    space: TruncatedStateSpace,
    v,
    pair: Sequence[Sequence[int]],
    *,
    tol: float = PROPERTY_TOL,
) -> PropertyReport:
    """Exchange identity between a middle edge and its parallel missing pair.

    With E1 the middle edge and E2 the missing pair on the same supply
    class, checks v(q + e1, a) - v(q, a) = v(q + e2, a) - v(q - e1 + e2, a)
    within tolerance: which demand class holds the extra item must not
    matter once the supply side is fixed.  The two supported pairs are
    (middle on s1, missing on s1) and (middle on s2, missing on s2).
    """
    roles = _w_pairs(space)
    graph = space.graph
    first = _class_pair(graph, pair[0])
    second = _class_pair(graph, pair[1])
    allowed = {
        (roles["middle1"], roles["miss1"]),
        (roles["middle2"], roles["miss2"]),
    }
    if (first, second) not in allowed:
        names = ", ".join(
            f"(({_pair_label(graph, *a)}), ({_pair_label(graph, *b)}))"
            for a, b in sorted(allowed)
        )
        raise ValueError(
            f"unsupported exchange pair; supported (middle, missing) pairs: {names}"
        )
    table = _box_table(space, v)
    e1 = _pair_vector(graph, *first)
    e2 = _pair_vector(graph, *second)
    base = _interior_base(space, [e1, e2, e2 - e1])
    lhs = _values_at(space, table, base + e1) - _values_at(space, table, base)
    rhs = _values_at(space, table, base + e2) - _values_at(
        space, table, base + e2 - e1
    )
    excess = np.abs(lhs - rhs)
    name = (
        f"exchangeable[{_pair_label(graph, *first)}|{_pair_label(graph, *second)}]"
    )
    return _reduce(name, space, base, excess, tol)


def check_modular(
    space: TruncatedStateSpace, v, *, tol: float = PROPERTY_TOL
) -> PropertyReport:
    """Whether the two middle edges of a W graph have independent marginals.

    Checks |v(q + e1 + e2, a) - v(q + e1, a) - v(q + e2, a) + v(q, a)| <=
    tolerance with e1, e2 the two middle edge vectors: the marginal value
    of one middle match must not depend on how many of the other have been
    made.
    """
    roles = _w_pairs(space)
    graph = space.graph
    e1 = _pair_vector(graph, *roles["middle1"])
    e2 = _pair_vector(graph, *roles["middle2"])
    table = _box_table(space, v)
    base = _interior_base(space, [e1, e2, e1 + e2])
    excess = np.abs(
        _values_at(space, table, base + e1 + e2)
        - _values_at(space, table, base + e1)
        - _values_at(space, table, base + e2)
        + _values_at(space, table, base)
    )
    name = (
        f"modular[{_pair_label(graph, *roles['middle1'])}"
        f"|{_pair_label(graph, *roles['middle2'])}]"
    )
    return _reduce(name, space, base, excess, tol)


# ---- policy shape verification ----


def _interior_post_arrivals(space: TruncatedStateSpace) -> list[tuple[int, ...]]:
    graph = space.graph
    seen: set[tuple[int, ...]] = set()
    for q in space.interior_balanced_states:
        for i, j in graph.arrival_atoms:
            x = q.copy()
            x[i] += 1
            x[graph.n_d + j] += 1
            seen.add(tuple(int(val) for val in x))
    return sorted(seen)


def _shape_report(
    family: str,
    inferred: dict,
    witnesses: list[dict],
    violations: int,
    checked: int,
) -> ShapeReport:
    return ShapeReport(
        family=family,
        passed=violations == 0,
        inferred=inferred,
        witnesses=tuple(witnesses[:MAX_WITNESSES]),
        violation_count=violations,
        checked=checked,
    )


def _verify_full_match(space: TruncatedStateSpace, policy: Policy) -> ShapeReport:
    graph = space.graph
    if classify(graph).tag != COMPLETE:
        raise WrongGraphClass(
            f"the full-match family lives on complete graphs, got "
            f"{classify(graph).tag}"
        )
    witnesses: list[dict] = []
    violations = 0
    xs = _interior_post_arrivals(space)
    for key in xs:
        x = np.asarray(key, dtype=np.int64)
        u = np.asarray(policy.decide(x), dtype=np.int64)
        residual = x - node_usage(graph, u)
        if np.any(residual < 0):
            reason = "inadmissible"
        elif np.any(residual != 0):
            reason = "remainder"
        else:
            continue
        violations += 1
        if len(witnesses) < MAX_WITNESSES:
            witnesses.append(
                {
                    "reason": reason,
                    "x": list(key),
                    "decision": [int(c) for c in u],
                    "residual": [int(r) for r in residual],
                }
            )
    return _shape_report("full_match", {}, witnesses, violations, len(xs))


def _verify_threshold_n(space: TruncatedStateSpace, policy: Policy) -> ShapeReport:
    graph = space.graph
    lay = n_layout(graph)
    pos = graph.edge_position
    e11 = pos[(lay.d1, lay.s1_local)]
    e12 = pos[(lay.d1, lay.s2_local)]
    e22 = pos[(lay.d2, lay.s2_local)]
    witnesses: list[dict] = []
    violations = 0
    implied: dict[int, list[tuple[int, ...]]] = {}
    held_back: list[tuple[int, tuple[int, ...]]] = []
    xs = _interior_post_arrivals(space)
    for key in xs:
        x = np.asarray(key, dtype=np.int64)
        u = np.asarray(policy.decide(x), dtype=np.int64)
        d1, d2, s1, s2 = lay.pack(x)
        residual = x - node_usage(graph, u)
        bad: dict | None = None
        if np.any(residual < 0) or np.any(u < 0):
            bad = {"reason": "inadmissible"}
        elif int(u[e11]) != min(d1, s1) or int(u[e22]) != min(d2, s2):
            bad = {
                "reason": "priority_total",
                "expected": [min(d1, s1), min(d2, s2)],
                "got": [int(u[e11]), int(u[e22])],
            }
        if bad is not None:
            violations += 1
            if len(witnesses) < MAX_WITNESSES:
                bad["x"] = list(key)
                witnesses.append(bad)
            continue
        surplus = max(0, d1 - s1)
        k = int(u[e12])
        if k > surplus:
            violations += 1
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append(
                    {"reason": "flexible_count", "x": list(key), "got": k,
                     "surplus": surplus}
                )
            continue
        if surplus >= 1:
            if k > 0:
                implied.setdefault(surplus - k, []).append(key)
            else:
                held_back.append((surplus, key))
    inferred: dict[str, float | int | None]
    if len(implied) > 1:
        largest = max(len(keys) for keys in implied.values())
        violations += sum(len(keys) for keys in implied.values()) - largest
        for t_val in sorted(implied):
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append(
                    {
                        "reason": "threshold_conflict",
                        "x": list(implied[t_val][0]),
                        "implied_t": t_val,
                    }
                )
        inferred = {"t": None}
    elif len(implied) == 1:
        t_hat = next(iter(implied))
        for surplus, key in held_back:
            if surplus > t_hat:
                violations += 1
                if len(witnesses) < MAX_WITNESSES:
                    witnesses.append(
                        {
                            "reason": "threshold_conflict",
                            "x": list(key),
                            "surplus": surplus,
                            "implied_t": t_hat,
                        }
                    )
        inferred = {"t": t_hat}
    else:
        inferred = {"t": math.inf if held_back else None}
    return _shape_report("threshold_n", inferred, witnesses, violations, len(xs))


def _verify_priority_extreme(
    space: TruncatedStateSpace, policy: Policy
) -> ShapeReport:
    graph = space.graph
    extremes = classify(graph).extreme_edges
    if not extremes:
        raise WrongGraphClass("graph has no extreme edges to verify priority on")
    positions = [graph.edge_position[e] for e in extremes]
    witnesses: list[dict] = []
    violations = 0
    xs = _interior_post_arrivals(space)
    for key in xs:
        x = np.asarray(key, dtype=np.int64)
        u = np.asarray(policy.decide(x), dtype=np.int64)
        residual = x - node_usage(graph, u)
        if np.any(residual < 0) or np.any(u < 0):
            violations += 1
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append({"reason": "inadmissible", "x": list(key)})
            continue
        rem = x.copy()
        best = 0
        for i, j in extremes:
            take = int(min(rem[i], rem[graph.n_d + j]))
            best += take
            rem[i] -= take
            rem[graph.n_d + j] -= take
        got = int(u[positions].sum())
        if got != best:
            violations += 1
            if len(witnesses) < MAX_WITNESSES:
                witnesses.append(
                    {
                        "reason": "extreme_total",
                        "x": list(key),
                        "expected": best,
                        "got": got,
                    }
                )
    return _shape_report("priority_extreme", {}, witnesses, violations, len(xs))


def verify_policy_shape(
    space: TruncatedStateSpace, policy: Policy, family: str
) -> ShapeReport:
    """Test whether a policy's interior decisions fit a structured family.

    Families: "full_match" (every interior post-arrival state is matched
    down to the zero remainder), "threshold_n" (both priority edges
    matched fully, the flexible pair matched exactly beyond one common
    threshold, which is inferred and returned), and "priority_extreme"
    (the total over extreme edges is the largest any admissible matching
    could reach).  Decisions are read through ``policy.decide`` on every
    interior post-arrival state of the space.
    """
    if family == "full_match":
        return _verify_full_match(space, policy)
    if family == "threshold_n":
        return _verify_threshold_n(space, policy)
    if family == "priority_extreme":
        return _verify_priority_extreme(space, policy)
    raise ValueError(
        f"unknown policy family {family!r}; expected one of 'full_match', "
        f"'threshold_n', 'priority_extreme'"
    )
