"""Bipartite matching graph model: topology, arrival rates, holding costs.

A matching graph pairs a set of demand classes with a set of supply classes
through an edge set describing which pairs may be matched.  The module keeps
three immutable value objects (:class:`MatchingGraph`,
:class:`ArrivalDistribution`, :class:`CostVector`), a structural classifier,
the subset-based stability test, and the projection of a complete-minus-one
graph onto the two-by-two N model.

Vector conventions used across the package: a state vector lists demand
queue lengths first (file order) then supply queue lengths, and arrival
atoms (i, j) are ordered lexicographically by demand index then supply
index, both 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import NotCompleteMinusOne, ParseError, SubsetExplosion

PROB_TOL = 1e-12
SUBSET_NODE_CAP = 24

COMPLETE = "complete"
N_SHAPED = "n_shaped"
W_SHAPED = "w_shaped"
COMPLETE_MINUS_ONE = "complete_minus_one"
ACYCLIC = "acyclic"
GENERAL_CYCLIC = "general_cyclic"


def _frozen_array(values: Sequence[float], dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MatchingGraph:
    """Connected bipartite compatibility graph between demand and supply classes.

    ``edges`` uses node labels; the integer view :attr:`edge_index` follows
    the label order given in ``demand_nodes`` and ``supply_nodes``, which is
    also the coordinate order of every state vector.
    """

    demand_nodes: tuple[str, ...]
    supply_nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "demand_nodes", tuple(self.demand_nodes))
        object.__setattr__(self, "supply_nodes", tuple(self.supply_nodes))
        object.__setattr__(self, "edges", tuple((d, s) for d, s in self.edges))
        if not self.demand_nodes or not self.supply_nodes:
            raise ValueError("graph needs at least one demand and one supply node")
        labels = self.demand_nodes + self.supply_nodes
        if len(set(labels)) != len(labels):
            raise ValueError("node labels must be unique across both sides")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges are not allowed")
        d_index = {name: i for i, name in enumerate(self.demand_nodes)}
        s_index = {name: j for j, name in enumerate(self.supply_nodes)}
        for d, s in self.edges:
            if d not in d_index:
                raise ValueError(f"edge endpoint {d!r} is not a demand node")
            if s not in s_index:
                raise ValueError(f"edge endpoint {s!r} is not a supply node")
        covered = {d for d, _ in self.edges} | {s for _, s in self.edges}
        missing = [name for name in labels if name not in covered]
        if missing:
            raise ValueError(f"nodes without any edge: {missing}")
        if not self._connected():
            raise ValueError("graph must be connected")

    def _connected(self) -> bool:
        adj: dict[str, set[str]] = {}
        for d, s in self.edges:
            adj.setdefault(d, set()).add(s)
            adj.setdefault(s, set()).add(d)
        start = self.demand_nodes[0]
        seen = {start}
        stack = [start]
        while stack:
            for other in adj.get(stack.pop(), ()):
                if other not in seen:
                    seen.add(other)
                    stack.append(other)
        return len(seen) == len(self.demand_nodes) + len(self.supply_nodes)

    # ---- derived structure ----

    @property
    def n_d(self) -> int:
        return len(self.demand_nodes)

    @property
    def n_s(self) -> int:
        return len(self.supply_nodes)

    @property
    def n_nodes(self) -> int:
        return self.n_d + self.n_s

    @cached_property
    def demand_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.demand_nodes)}

    @cached_property
    def supply_index(self) -> dict[str, int]:
        return {name: j for j, name in enumerate(self.supply_nodes)}

    @cached_property
    def edge_index(self) -> tuple[tuple[int, int], ...]:
        """Edges as (demand index, supply index) pairs, in file order."""
        return tuple(
            (self.demand_index[d], self.supply_index[s]) for d, s in self.edges
        )

    @cached_property
    def edge_position(self) -> dict[tuple[int, int], int]:
        return {pair: k for k, pair in enumerate(self.edge_index)}

    @cached_property
    def supply_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """For each demand index, the sorted supply indices it can match."""
        out: list[list[int]] = [[] for _ in range(self.n_d)]
        for i, j in self.edge_index:
            out[i].append(j)
        return tuple(tuple(sorted(js)) for js in out)

    @cached_property
    def demand_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """For each supply index, the sorted demand indices it can match."""
        out: list[list[int]] = [[] for _ in range(self.n_s)]
        for i, j in self.edge_index:
            out[j].append(i)
        return tuple(tuple(sorted(iis)) for iis in out)

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edge_position

    @cached_property
    def node_labels(self) -> tuple[str, ...]:
        return self.demand_nodes + self.supply_nodes

    @cached_property
    def arrival_atoms(self) -> tuple[tuple[int, int], ...]:
        """All (i, j) demand/supply pairs, lexicographic; arrivals ignore edges."""
        return tuple((i, j) for i in range(self.n_d) for j in range(self.n_s))

    def to_dict(self) -> dict:
        return {
            "demand": list(self.demand_nodes),
            "supply": list(self.supply_nodes),
            "edges": [list(e) for e in self.edges],
        }


@dataclass(frozen=True)
class ArrivalDistribution:
    """Independent categorical laws for the demand and supply class of each arrival."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        alpha = _frozen_array(self.alpha)
        beta = _frozen_array(self.beta)
        for name, vec in (("alpha", alpha), ("beta", beta)):
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"{name} must be a nonempty vector")
            if np.any(vec <= 0.0):
                raise ValueError(f"{name} entries must be strictly positive")
            if abs(float(vec.sum()) - 1.0) > PROB_TOL:
                raise ValueError(
                    f"{name} must sum to 1 within {PROB_TOL:g}, got {vec.sum()!r}"
                )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def atom_probs(self) -> np.ndarray:
        """P(arrival = (i, j)) flattened in lexicographic (i, j) order."""
        return np.outer(self.alpha, self.beta).ravel()


@dataclass(frozen=True)
class CostVector:
    """Per-step holding cost rates, one nonnegative entry per node."""

    demand: np.ndarray
    supply: np.ndarray

    def __post_init__(self) -> None:
        demand = _frozen_array(self.demand)
        supply = _frozen_array(self.supply)
        for name, vec in (("demand", demand), ("supply", supply)):
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"{name} costs must be a nonempty vector")
            if np.any(vec < 0.0):
                raise ValueError(f"{name} costs must be nonnegative")
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "supply", supply)

    @cached_property
    def vector(self) -> np.ndarray:
        vec = np.concatenate([self.demand, self.supply])
        vec.setflags(write=False)
        return vec

    def of_state(self, state: Sequence[float]) -> float:
        return float(np.dot(self.vector, np.asarray(state, dtype=float)))

    @classmethod
    def from_mapping(cls, graph: MatchingGraph, mapping: Mapping[str, float]) -> "CostVector":
        missing = [n for n in graph.node_labels if n not in mapping]
        if missing:
            raise ValueError(f"costs missing for nodes: {missing}")
        extra = [n for n in mapping if n not in graph.node_labels]
        if extra:
            raise ValueError(f"costs given for unknown nodes: {extra}")
        return cls(
            demand=np.array([mapping[n] for n in graph.demand_nodes], dtype=float),
            supply=np.array([mapping[n] for n in graph.supply_nodes], dtype=float),
        )

    def to_mapping(self, graph: MatchingGraph) -> dict[str, float]:
        return {n: float(c) for n, c in zip(graph.node_labels, self.vector)}


# ---- classification ----


@dataclass(frozen=True)
class GraphClass:
    """Structural class of a graph plus the features downstream solvers key on."""

    tag: str
    missing_edge: tuple[int, int] | None
    extreme_edges: tuple[tuple[int, int], ...]


def _extreme_edges(graph: MatchingGraph) -> tuple[tuple[int, int], ...]:
    d_deg = [len(js) for js in graph.supply_neighbors]
    s_deg = [len(iis) for iis in graph.demand_neighbors]
    return tuple(
        (i, j) for i, j in graph.edge_index if d_deg[i] == 1 or s_deg[j] == 1
    )


def classify(graph: MatchingGraph) -> GraphClass:
    """Assign the most specific structural tag a graph satisfies.

    Order of precedence: complete, N-shaped, W-shaped, complete-minus-one,
    acyclic, general cyclic.  A two-by-two graph with three edges is both
    N-shaped and complete-minus-one; it is tagged N-shaped.
    """
    n_d, n_s, m = graph.n_d, graph.n_s, len(graph.edges)
    extremes = _extreme_edges(graph)
    present = set(graph.edge_index)
    missing = [
        (i, j)
        for i in range(n_d)
        for j in range(n_s)
        if (i, j) not in present
    ]
    if m == n_d * n_s:
        return GraphClass(COMPLETE, None, extremes)
    if n_d == 2 and n_s == 2 and m == 3:
        return GraphClass(N_SHAPED, missing[0], extremes)
    d_deg = sorted(len(js) for js in graph.supply_neighbors)
    s_deg = sorted(len(iis) for iis in graph.demand_neighbors)
    if n_d == 3 and n_s == 2 and m == 4 and d_deg == [1, 1, 2] and s_deg == [2, 2]:
        return GraphClass(W_SHAPED, None, extremes)
    if n_d >= 2 and n_s >= 2 and m == n_d * n_s - 1:
        return GraphClass(COMPLETE_MINUS_ONE, missing[0], extremes)
    if m == graph.n_nodes - 1:
        return GraphClass(ACYCLIC, None, extremes)
    return GraphClass(GENERAL_CYCLIC, None, extremes)


# ---- stability ----


@dataclass(frozen=True)
class StabilityViolation:
    side: str
    nodes: tuple[str, ...]
    mass: float
    neighbor_mass: float


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the strict subset drift test.

    ``exhaustive`` is False when subsets were sampled instead of enumerated;
    a sampled report can prove instability but can only suggest stability.
    """

    stable: bool
    violations: tuple[StabilityViolation, ...]
    violation_count: int
    exhaustive: bool
    subsets_checked: int

    MAX_RECORDED = 50


def _subset_sums(weights: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for w in weights:
        sums = np.concatenate([sums, sums + w])
    return sums


def _neighbor_union_masks(neighbor_bits: list[int]) -> np.ndarray:
    masks = np.zeros(1, dtype=np.int64)
    for bits in neighbor_bits:
        masks = np.concatenate([masks, masks | np.int64(bits)])
    return masks


def _mask_nodes(mask: int, labels: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(label for k, label in enumerate(labels) if mask >> k & 1)


def _side_violations(
    side: str,
    labels: tuple[str, ...],
    weights: np.ndarray,
    neighbor_bits: list[int],
    other_weights: np.ndarray,
) -> tuple[list[StabilityViolation], int, int]:
    """Check every proper nonempty subset of one side exhaustively."""
    n = len(labels)
    own = _subset_sums(weights)
    nbr = _neighbor_union_masks(neighbor_bits)
    other = _subset_sums(other_weights)
    masks = np.arange(1, 2**n - 1, dtype=np.int64)
    if masks.size == 0:
        return [], 0, 0
    own_mass = own[masks]
    nbr_mass = other[nbr[masks]]
    bad = np.nonzero(own_mass >= nbr_mass)[0]
    records = [
        StabilityViolation(
            side=side,
            nodes=_mask_nodes(int(masks[k]), labels),
            mass=float(own_mass[k]),
            neighbor_mass=float(nbr_mass[k]),
        )
        for k in bad[: StabilityReport.MAX_RECORDED]
    ]
    return records, int(bad.size), int(masks.size)


def _sampled_side_violations(
    side: str,
    labels: tuple[str, ...],
    weights: np.ndarray,
    neighbor_bits: list[int],
    other_weights: np.ndarray,
    sample: int,
    rng: np.random.Generator,
) -> tuple[list[StabilityViolation], int, int]:
    n = len(labels)
    records: list[StabilityViolation] = []
    count = 0
    checked = 0
    for _ in range(sample):
        pick = rng.random(n) < 0.5
        if not pick.any() or pick.all():
            continue
        checked += 1
        mass = float(weights[pick].sum())
        union = 0
        for k in np.nonzero(pick)[0]:
            union |= neighbor_bits[int(k)]
        nbr_mass = float(
            sum(other_weights[j] for j in range(len(other_weights)) if union >> j & 1)
        )
        if mass >= nbr_mass:
            count += 1
            if len(records) < StabilityReport.MAX_RECORDED:
                records.append(
                    StabilityViolation(
                        side=side,
                        nodes=_mask_nodes(
                            int(sum(1 << k for k in np.nonzero(pick)[0])), labels
                        ),
                        mass=mass,
                        neighbor_mass=nbr_mass,
                    )
                )
    return records, count, checked


def check_stability(
    graph: MatchingGraph,
    arrivals: ArrivalDistribution,
    *,
    sample: int | None = None,
    seed: int = 0,
) -> StabilityReport:
    """Test the strict drift condition over proper nonempty node subsets.

    Every proper nonempty demand subset must carry strictly less arrival
    mass than its supply neighborhood, and symmetrically for supply
    subsets.  Graphs with more than 24 nodes are refused unless ``sample``
    asks for Monte Carlo subset sampling instead (seeded, reproducible).
    """
    if len(arrivals.alpha) != graph.n_d or len(arrivals.beta) != graph.n_s:
        raise ValueError("arrival vectors do not match the graph dimensions")
    d_bits = [
        sum(1 << j for j in graph.supply_neighbors[i]) for i in range(graph.n_d)
    ]
    s_bits = [
        sum(1 << i for i in graph.demand_neighbors[j]) for j in range(graph.n_s)
    ]
    if graph.n_nodes <= SUBSET_NODE_CAP:
        rec_d, n_d_bad, checked_d = _side_violations(
            "demand", graph.demand_nodes, arrivals.alpha, d_bits, arrivals.beta
        )
        rec_s, n_s_bad, checked_s = _side_violations(
            "supply", graph.supply_nodes, arrivals.beta, s_bits, arrivals.alpha
        )
        exhaustive = True
    elif sample is not None:
        rng = np.random.default_rng(seed)
        rec_d, n_d_bad, checked_d = _sampled_side_violations(
            "demand", graph.demand_nodes, arrivals.alpha, d_bits, arrivals.beta,
            sample, rng,
        )
        rec_s, n_s_bad, checked_s = _sampled_side_violations(
            "supply", graph.supply_nodes, arrivals.beta, s_bits, arrivals.alpha,
            sample, rng,
        )
        exhaustive = False
    else:
        raise SubsetExplosion(
            f"{graph.n_nodes} nodes exceed the exhaustive subset cap of "
            f"{SUBSET_NODE_CAP}; pass sample= to use Monte Carlo subsets"
        )
    total = n_d_bad + n_s_bad
    records = tuple((rec_d + rec_s)[: StabilityReport.MAX_RECORDED])
    return StabilityReport(
        stable=total == 0,
        violations=records,
        violation_count=total,
        exhaustive=exhaustive,
        subsets_checked=checked_d + checked_s,
    )


# ---- projection onto the two-by-two N model ----


@dataclass(frozen=True)
class NProjection:
    """Aggregation of a complete-minus-one graph onto the N-shaped model.

    With (i*, j*) the unique missing edge, demand classes other than i*
    collapse into the first N demand node and supply classes other than j*
    collapse into the second N supply node.
    """

    graph: MatchingGraph
    missing: tuple[int, int]
    demand_group: tuple[int, ...]
    supply_group: tuple[int, ...]

    @classmethod
    def from_graph(cls, graph: MatchingGraph) -> "NProjection":
        info = classify(graph)
        if info.tag not in (N_SHAPED, COMPLETE_MINUS_ONE):
            raise NotCompleteMinusOne(
                f"projection needs a complete-minus-one graph, got {info.tag}"
            )
        i_star, j_star = info.missing_edge  # type: ignore[misc]
        return cls(
            graph=graph,
            missing=(i_star, j_star),
            demand_group=tuple(i for i in range(graph.n_d) if i != i_star),
            supply_group=tuple(j for j in range(graph.n_s) if j != j_star),
        )


def project_state(proj: NProjection, state: Sequence[int]) -> np.ndarray:
    """Collapse a full state vector to N coordinates (d1, d2, s1, s2)."""
    vec = np.asarray(state)
    if vec.shape != (proj.graph.n_nodes,):
        raise ValueError(
            f"state must have length {proj.graph.n_nodes}, got {vec.shape}"
        )
    q_d = vec[: proj.graph.n_d]
    q_s = vec[proj.graph.n_d:]
    i_star, j_star = proj.missing
    return np.array(
        [
            q_d[list(proj.demand_group)].sum(),
            q_d[i_star],
            q_s[j_star],
            q_s[list(proj.supply_group)].sum(),
        ]
    )


def project_arrival(proj: NProjection, i: int, j: int) -> tuple[int, int]:
    """Map an arrival atom (i, j) of the big graph to an N model atom."""
    i_star, j_star = proj.missing
    if not (0 <= i < proj.graph.n_d and 0 <= j < proj.graph.n_s):
        raise ValueError(f"arrival atom ({i}, {j}) out of range")
    if j == j_star:
        return (1, 0) if i == i_star else (0, 0)
    if i == i_star:
        return (1, 1)
    return (0, 1)


def projected_arrival_law(proj: NProjection, arrivals: ArrivalDistribution) -> np.ndarray:
    """Aggregate the arrival law through the projection; returns a 2x2 table."""
    if len(arrivals.alpha) != proj.graph.n_d or len(arrivals.beta) != proj.graph.n_s:
        raise ValueError("arrival vectors do not match the graph dimensions")
    law = np.zeros((2, 2))
    for i in range(proj.graph.n_d):
        for j in range(proj.graph.n_s):
            ii, jj = project_arrival(proj, i, j)
            law[ii, jj] += arrivals.alpha[i] * arrivals.beta[j]
    return law


def check_projected_cost(
    graph: MatchingGraph, costs: CostVector, n_costs: Sequence[float]
) -> bool:
    """Whether the cost vector collapses exactly onto the given N costs.

    Demand costs must be constant over the aggregated demand group, supply
    costs constant over the aggregated supply group, and the four-entry
    ``n_costs`` (d1, d2, s1, s2) must equal those constants and the costs of
    the two isolated nodes.
    """
    proj = NProjection.from_graph(graph)
    target = np.asarray(n_costs, dtype=float)
    if target.shape != (4,):
        raise ValueError("n_costs must have exactly four entries (d1, d2, s1, s2)")
    group_d = costs.demand[list(proj.demand_group)]
    group_s = costs.supply[list(proj.supply_group)]
    if not (np.all(group_d == group_d[0]) and np.all(group_s == group_s[0])):
        return False
    i_star, j_star = proj.missing
    collapsed = np.array(
        [group_d[0], costs.demand[i_star], costs.supply[j_star], group_s[0]]
    )
    return bool(np.all(collapsed == target))


# ---- file format ----


def load_graph(source) -> tuple[MatchingGraph, ArrivalDistribution, CostVector]:
    """Load a graph description from a JSON file path or an already parsed dict.

    Expected shape::

        {"demand": [..], "supply": [..], "edges": [["d1","s1"], ..],
         "alpha": [..], "beta": [..], "costs": {"d1": 1.0, ..}}

    Array order defines index order.  Raises :class:`ParseError` naming the
    offending field on any structural problem.
    """
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ParseError(f"cannot read graph file {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"graph file {source} is not valid JSON: {exc}") from exc
    elif isinstance(source, dict):
        raw = source
    else:
        raise ParseError(f"unsupported graph source type {type(source).__name__}")
    if not isinstance(raw, dict):
        raise ParseError("graph document must be a JSON object")
    for field_name in ("demand", "supply", "edges", "alpha", "beta", "costs"):
        if field_name not in raw:
            raise ParseError(f"graph document missing field {field_name!r}")
    for field_name in ("demand", "supply", "edges", "alpha", "beta"):
        if not isinstance(raw[field_name], list):
            raise ParseError(f"field {field_name!r} must be an array")
    for field_name in ("demand", "supply"):
        if not all(isinstance(x, str) for x in raw[field_name]):
            raise ParseError(f"field {field_name!r} must list node label strings")
    edges = []
    for k, entry in enumerate(raw["edges"]):
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not all(isinstance(x, str) for x in entry)
        ):
            raise ParseError(f"field 'edges'[{k}] must be a [demand, supply] pair")
        edges.append((entry[0], entry[1]))
    if not isinstance(raw["costs"], dict):
        raise ParseError("field 'costs' must map node labels to numbers")
    for key, val in raw["costs"].items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ParseError(f"field 'costs'[{key!r}] must be a number")
    try:
        graph = MatchingGraph(
            demand_nodes=tuple(raw["demand"]),
            supply_nodes=tuple(raw["supply"]),
            edges=tuple(edges),
        )
    except ValueError as exc:
        raise ParseError(f"invalid graph structure: {exc}") from exc
    try:
        arrivals = ArrivalDistribution(
            alpha=np.asarray(raw["alpha"], dtype=float),
            beta=np.asarray(raw["beta"], dtype=float),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid arrival distribution: {exc}") from exc
    if len(arrivals.alpha) != graph.n_d:
        raise ParseError(
            f"field 'alpha' has {len(arrivals.alpha)} entries, expected {graph.n_d}"
        )
    if len(arrivals.beta) != graph.n_s:
        raise ParseError(
            f"field 'beta' has {len(arrivals.beta)} entries, expected {graph.n_s}"
        )
    try:
        costs = CostVector.from_mapping(graph, raw["costs"])
    except ValueError as exc:
        raise ParseError(f"invalid costs: {exc}") from exc
    return graph, arrivals, costs


def graph_to_dict(
    graph: MatchingGraph, arrivals: ArrivalDistribution, costs: CostVector
) -> dict:
    """Inverse of :func:`load_graph` for writing graph files."""
    doc = graph.to_dict()
    doc["alpha"] = [float(a) for a in arrivals.alpha]
    doc["beta"] = [float(b) for b in arrivals.beta]
    doc["costs"] = costs.to_mapping(graph)
    return doc
