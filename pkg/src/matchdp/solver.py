"""Exact dynamic programming on box-truncated state spaces.

The model's states are the balanced vectors q (equal demand and supply
totals) inside [0, cap]^nodes, paired with the arrival atom.  Optimality
sweeps store tables on the full integer box because the minimization over
matchings vectorizes along box axes, but cells at unbalanced vectors are
not states: they are pinned to +inf so the minimization can never route
through a successor that leaves the balanced sector.  A successor leaves
the sector only when per-node clipping at the cap truncates one side of a
would-be overflow; pinning those reads to +inf means such matchings are
simply not offered, while clips that truncate both sides at once (the only
unavoidable kind on the graph families treated here) land on balanced
cells and stay available.

The minimization over admissible matchings is not enumerated.  Writing a
matching as a sequence of single-pair decrements sorted by edge shows that
relaxing one edge at a time, fully, in any fixed order reaches exactly the
set {x - usage(u)}: each edge relaxation is a one-dimensional running
minimum along the edge's diagonal direction, so a Bellman backup costs a
handful of vectorized passes over the box instead of an enumeration per
state.

Fixed-policy evaluation skips the box entirely and iterates on the packed
list of balanced states, which keeps sweeps cheap at the large caps used
for average-cost cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import Inadmissible, MatchDPError, NoConvergence, Unstable
from .graphs import ArrivalDistribution, CostVector, MatchingGraph, check_stability
from .policies import Policy, Tabular

VI_TOL = 1e-9
RVI_SPAN_TOL = 1e-8
MAX_ITERS = 100_000
EXTRACT_GRID_LIMIT = 2_000_000


@dataclass(frozen=True)
class TruncatedStateSpace:
    """Balanced states inside the box [0, cap]^nodes, with a safety margin.

    A state is tainted when any coordinate exceeds cap - margin: its
    backups may feel the cap, so structural verdicts and policy extraction
    are restricted to the interior (untainted) states.  margin >= 1
    guarantees every state whose backup clips is tainted.
    """

    graph: MatchingGraph
    cap: int
    margin: int = 2

    def __post_init__(self) -> None:
        if self.cap < 1:
            raise ValueError(f"cap must be at least 1, got {self.cap}")
        if not 1 <= self.margin <= self.cap:
            raise ValueError(
                f"margin must be between 1 and cap={self.cap}, got {self.margin}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cap + 1,) * self.graph.n_nodes

    @property
    def n_atoms(self) -> int:
        return self.graph.n_d * self.graph.n_s

    @cached_property
    def balanced_mask(self) -> np.ndarray:
        """Boolean box grid marking the balanced vectors."""
        n_d, n_s = self.graph.n_d, self.graph.n_s
        side = np.arange(self.cap + 1)
        d_sum = np.zeros((self.cap + 1,) * n_d, dtype=np.int64)
        for axis in range(n_d):
            d_sum = d_sum + side.reshape([-1 if k == axis else 1 for k in range(n_d)])
        s_sum = np.zeros((self.cap + 1,) * n_s, dtype=np.int64)
        for axis in range(n_s):
            s_sum = s_sum + side.reshape([-1 if k == axis else 1 for k in range(n_s)])
        mask = (
            d_sum.reshape(d_sum.shape + (1,) * n_s)
            == s_sum.reshape((1,) * n_d + s_sum.shape)
        )
        mask.setflags(write=False)
        return mask

    @cached_property
    def balanced_states(self) -> np.ndarray:
        """Balanced vectors as rows, lexicographically ordered."""
        states = np.argwhere(self.balanced_mask)
        states.setflags(write=False)
        return states

    @cached_property
    def balanced_codes(self) -> np.ndarray:
        """Row-major ravel codes of the balanced vectors, ascending."""
        codes = np.ravel_multi_index(self.balanced_states.T, self.shape)
        codes.setflags(write=False)
        return codes

    @cached_property
    def nonstate_flat(self) -> np.ndarray:
        flat = np.flatnonzero(~self.balanced_mask.ravel())
        flat.setflags(write=False)
        return flat

    @property
    def n_states(self) -> int:
        """Number of (queue, arrival) model states."""
        return len(self.balanced_states) * self.n_atoms

    def state_index(self, q) -> int:
        """Position of a balanced vector in the packed state list."""
        code = int(np.ravel_multi_index(tuple(int(v) for v in q), self.shape))
        pos = int(np.searchsorted(self.balanced_codes, code))
        if pos == len(self.balanced_codes) or self.balanced_codes[pos] != code:
            raise KeyError(f"{tuple(q)} is not a balanced state of this space")
        return pos

    def is_interior(self, q) -> bool:
        return bool(np.all(np.asarray(q) <= self.cap - self.margin))

    def is_tainted(self, q) -> bool:
        return not self.is_interior(q)

    @cached_property
    def interior_balanced_states(self) -> np.ndarray:
        states = self.balanced_states
        keep = np.all(states <= self.cap - self.margin, axis=1)
        out = states[keep]
        out.setflags(write=False)
        return out

    @cached_property
    def tainted_state_count(self) -> int:
        return len(self.balanced_states) - len(self.interior_balanced_states)


@dataclass(frozen=True)
class DPConfig:
    """Iteration controls; ``tol`` defaults per mode when left unset.

    ``cap`` and ``margin`` are carried for callers that build the state
    space from a flat configuration; the solver functions themselves read
    the geometry from the space they are given.
    """

    theta: float = 0.95
    tol: float | None = None
    max_iters: int = MAX_ITERS
    cap: int | None = None
    margin: int | None = None

    def resolved_tol(self, mode: str) -> float:
        if self.tol is not None:
            if self.tol <= 0:
                raise ValueError(f"tol must be positive, got {self.tol}")
            return self.tol
        return VI_TOL if mode == "discounted" else RVI_SPAN_TOL


@dataclass
class ValueFunction:
    """A value table tagged with how it was produced.

    ``layout`` is "box" for tables over the whole grid (unbalanced cells
    hold +inf because they are not states) or "sector" for packed tables
    with one row per balanced state.
    """

    space: TruncatedStateSpace
    data: np.ndarray
    theta: float | None
    iterations: int
    residual: float
    layout: str = "box"

    def value(self, q, atom: tuple[int, int]) -> float:
        a_idx = atom[0] * self.space.graph.n_s + atom[1]
        if self.layout == "box":
            return float(self.data[tuple(int(v) for v in q) + (a_idx,)])
        return float(self.data[self.space.state_index(q), a_idx])

    def as_box(self) -> np.ndarray:
        """Box-shaped copy of the table; non-state cells hold +inf."""
        if self.layout == "box":
            return self.data.copy()
        box = np.full(self.space.shape + (self.space.n_atoms,), np.inf)
        box.reshape(-1, self.space.n_atoms)[self.space.balanced_codes] = self.data
        return box

    def balanced_values(self) -> np.ndarray:
        """Packed (state, atom) matrix of values at balanced states."""
        if self.layout == "sector":
            return self.data.copy()
        return self.data.reshape(-1, self.space.n_atoms)[
            self.space.balanced_codes
        ].copy()


# ---- kernels ----


def _cost_field(space: TruncatedStateSpace, costs: CostVector) -> np.ndarray:
    side = np.arange(space.cap + 1, dtype=float)
    n = space.graph.n_nodes
    field = np.zeros(space.shape)
    for axis, c in enumerate(costs.vector):
        field = field + c * side.reshape([-1 if k == axis else 1 for k in range(n)])
    return field


def _atom_cost(graph: MatchingGraph, costs: CostVector) -> np.ndarray:
    return np.array(
        [
            costs.vector[i] + costs.vector[graph.n_d + j]
            for i, j in graph.arrival_atoms
        ]
    )


def _expected(table: np.ndarray, arrivals: ArrivalDistribution) -> np.ndarray:
    return table @ arrivals.atom_probs()


def _relax_edge(m: np.ndarray, ax_d: int, ax_s: int) -> None:
    """Running minimum along the (-1, -1) diagonal of two axes, in place."""
    view = np.moveaxis(m, (ax_d, ax_s), (0, 1))
    for s in range(1, view.shape[0]):
        np.minimum(view[s, 1:], view[s - 1, :-1], out=view[s, 1:])


def _matching_min(space: TruncatedStateSpace, w: np.ndarray) -> np.ndarray:
    """min over admissible matchings of w(clip(x - usage)) on the extended box.

    Padding with edge replication implements per-node clipping at the cap;
    relaxing each edge once, fully, is exact because matchings decompose
    into edge-sorted single-pair decrements.  Reads that land on +inf cells
    of w (sector escapes) drop out of the minimum automatically.
    """
    n = space.graph.n_nodes
    m = np.pad(w, [(0, 1)] * n, mode="edge")
    for i, j in space.graph.edge_index:
        _relax_edge(m, i, space.graph.n_d + j)
    return m


def _mask_nonstates(space: TruncatedStateSpace, table: np.ndarray) -> None:
    table.reshape(-1, table.shape[-1])[space.nonstate_flat] = np.inf


def _initial_table(space: TruncatedStateSpace, v0: np.ndarray | None) -> np.ndarray:
    if v0 is None:
        table = np.zeros(space.shape + (space.n_atoms,))
    else:
        table = np.asarray(v0, dtype=float).copy()
        if table.shape != space.shape + (space.n_atoms,):
            raise ValueError(
                f"v0 must have shape {space.shape + (space.n_atoms,)}, "
                f"got {table.shape}"
            )
    _mask_nonstates(space, table)
    return table


def bellman_backup(
    space: TruncatedStateSpace,
    table: np.ndarray,
    costs: CostVector,
    arrivals: ArrivalDistribution,
    theta: float,
) -> np.ndarray:
    """One synchronous sweep of the optimality operator (theta=1: average).

    Input and output tables live on the box with +inf at non-state cells;
    argmin ties are irrelevant here because only the minimum value is
    produced (extraction breaks ties lexicographically).
    """
    graph = space.graph
    cost_field = _cost_field(space, costs)
    atom_cost = _atom_cost(graph, costs)
    new = np.empty_like(table)
    if theta == 0.0:
        for a_idx in range(space.n_atoms):
            new[..., a_idx] = cost_field + atom_cost[a_idx]
    else:
        w = _expected(table, arrivals)
        m = _matching_min(space, w)
        for a_idx, (i, j) in enumerate(graph.arrival_atoms):
            sl = [slice(0, space.cap + 1)] * graph.n_nodes
            sl[i] = slice(1, space.cap + 2)
            sl[graph.n_d + j] = slice(1, space.cap + 2)
            new[..., a_idx] = cost_field + atom_cost[a_idx] + theta * m[tuple(sl)]
    _mask_nonstates(space, new)
    return new


def _balanced_view(space: TruncatedStateSpace, table: np.ndarray) -> np.ndarray:
    return table[space.balanced_mask]


def _require_finite(space: TruncatedStateSpace, table: np.ndarray) -> None:
    view = _balanced_view(space, table)
    if not np.all(np.isfinite(view)):
        bad = int(np.flatnonzero((~np.isfinite(view)).any(axis=-1))[0])
        q = tuple(int(v) for v in space.balanced_states[bad])
        raise MatchDPError(
            f"state {q} has no transition that stays balanced inside the cap; "
            "raise the cap or reconsider the graph"
        )


# ---- policy extraction ----


def _argmin_decision(
    graph: MatchingGraph, w: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Lexicographically smallest minimizer of w(x - usage(u)) over matchings.

    Enumerates the per-edge count grid (pruned by per-node caps), looks the
    successors up in the value table, and takes the first minimum, which is
    the lexicographically smallest because the grid flattens in ascending
    lexicographic order.
    """
    caps = [int(min(x[i], x[graph.n_d + j])) for i, j in graph.edge_index]
    total = 1
    for c in caps:
        total *= c + 1
    if total > EXTRACT_GRID_LIMIT:
        raise Inadmissible(
            f"decision grid at x={x.tolist()} needs {total} candidates, "
            f"over the extraction limit {EXTRACT_GRID_LIMIT}"
        )
    grid = np.indices([c + 1 for c in caps]).reshape(len(caps), -1).T
    usage = np.zeros((len(caps), graph.n_nodes), dtype=np.int64)
    for e, (i, j) in enumerate(graph.edge_index):
        usage[e, i] = 1
        usage[e, graph.n_d + j] = 1
    used = grid @ usage
    feasible = np.all(used <= x, axis=1)
    grid = grid[feasible]
    succ = x - used[feasible]
    flat = np.ravel_multi_index(succ.T, w.shape)
    best = int(np.argmin(w.ravel()[flat]))
    return grid[best]


def extract_policy(
    space: TruncatedStateSpace,
    table: np.ndarray,
    arrivals: ArrivalDistribution,
) -> Tabular:
    """Greedy policy of a box value table on interior balanced states.

    Decisions depend on the state only through x = q + a, so the table is
    keyed by post-arrival vectors.  Interior states keep x and all its
    successors strictly inside the box, and matching preserves balance, so
    every candidate read is a real state's value.
    """
    graph = space.graph
    w = _expected(table, arrivals)
    seen: dict[tuple[int, ...], np.ndarray] = {}
    for q in space.interior_balanced_states:
        for i, j in graph.arrival_atoms:
            x = q.copy()
            x[i] += 1
            x[graph.n_d + j] += 1
            key = tuple(int(v) for v in x)
            if key not in seen:
                seen[key] = _argmin_decision(graph, w, x)
    return Tabular(graph, seen)


# ---- optimality iterations ----


def value_iteration(
    space: TruncatedStateSpace,
    costs: CostVector,
    arrivals: ArrivalDistribution,
    config: DPConfig | None = None,
    *,
    v0: np.ndarray | None = None,
    extract: bool = True,
) -> tuple[ValueFunction, Tabular | None]:
    """Discounted value iteration from v = 0 to sup-norm tolerance.

    Synchronous sweeps with double buffering; the residual is the largest
    absolute change over balanced states.  Raises :class:`NoConvergence`
    with the last residual when the sweep limit is hit.
    """
    config = config or DPConfig()
    if not 0.0 <= config.theta < 1.0:
        raise ValueError(f"discounted mode needs 0 <= theta < 1, got {config.theta}")
    tol = config.resolved_tol("discounted")
    table = _initial_table(space, v0)
    residual = np.inf
    for sweep in range(1, config.max_iters + 1):
        new = bellman_backup(space, table, costs, arrivals, config.theta)
        if sweep == 1:
            _require_finite(space, new)
        residual = float(
            np.abs(_balanced_view(space, new) - _balanced_view(space, table)).max()
        )
        table = new
        if residual < tol:
            vf = ValueFunction(space, table, config.theta, sweep, residual)
            policy = extract_policy(space, table, arrivals) if extract else None
            return vf, policy
    raise NoConvergence(
        f"value iteration did not reach tol={tol:g} within "
        f"{config.max_iters} sweeps (last residual {residual:g})",
        iterations=config.max_iters,
        residual=residual,
    )


def relative_value_iteration(
    space: TruncatedStateSpace,
    costs: CostVector,
    arrivals: ArrivalDistribution,
    config: DPConfig | None = None,
    *,
    v0: np.ndarray | None = None,
    extract: bool = True,
) -> tuple[float, ValueFunction, Tabular | None]:
    """Average-cost iteration, normalized at the zero queue and first atom.

    Requires stable arrival rates.  Stops when the span of the change over
    balanced states drops below tolerance; the gain estimate is the
    pre-normalization value at the reference state.
    """
    config = config or DPConfig()
    report = check_stability(space.graph, arrivals)
    if not report.stable:
        raise Unstable(
            f"average-cost iteration needs stable rates "
            f"({report.violation_count} subset violations)",
            violations=report.violations,
        )
    tol = config.resolved_tol("average")
    ref = (0,) * space.graph.n_nodes + (0,)
    table = _initial_table(space, v0)
    span = np.inf
    for sweep in range(1, config.max_iters + 1):
        new = bellman_backup(space, table, costs, arrivals, theta=1.0)
        if sweep == 1:
            _require_finite(space, new)
        gain = float(new[ref])
        diff = _balanced_view(space, new) - _balanced_view(space, table)
        span = float(diff.max() - diff.min())
        table = new - gain
        if span < tol:
            vf = ValueFunction(space, table, None, sweep, span)
            policy = extract_policy(space, table, arrivals) if extract else None
            return gain, vf, policy
    raise NoConvergence(
        f"relative value iteration did not reach span tol={tol:g} within "
        f"{config.max_iters} sweeps (last span {span:g})",
        iterations=config.max_iters,
        residual=span,
    )


# ---- fixed-policy evaluation ----


def _sector_successors(
    space: TruncatedStateSpace, policy: Policy
) -> list[np.ndarray]:
    """Per-atom successor positions in the packed balanced-state list.

    Raises :class:`Inadmissible` when the policy's clipped successor leaves
    the balanced sector, because such a policy does not act on this state
    space.
    """
    graph = space.graph
    n_d = graph.n_d
    states = space.balanced_states
    out = []
    for i, j in graph.arrival_atoms:
        x = states.copy()
        x[:, i] += 1
        x[:, n_d + j] += 1
        if hasattr(policy, "decide_box"):
            decided = policy.decide_box([x[:, k] for k in range(x.shape[1])])
        else:
            counts = np.empty((len(x), len(graph.edges)), dtype=np.int64)
            for row, x_vec in enumerate(x):
                counts[row] = policy.decide(x_vec)
            decided = [(e, counts[:, e]) for e in range(len(graph.edges))]
        y = x
        for e, count in decided:
            ei, ej = graph.edge_index[e]
            y[:, ei] -= count
            y[:, n_d + ej] -= count
        y = np.clip(y, 0, space.cap)
        unbalanced = y[:, :n_d].sum(axis=1) != y[:, n_d:].sum(axis=1)
        if np.any(unbalanced):
            bad = states[np.flatnonzero(unbalanced)[0]]
            raise Inadmissible(
                f"policy {policy.label!r} leaves the balanced sector from state "
                f"{tuple(int(v) for v in bad)} under arrival {(i, j)}"
            )
        codes = np.ravel_multi_index(y.T, space.shape)
        pos = np.searchsorted(space.balanced_codes, codes)
        out.append(pos.astype(np.int64))
    return out


def evaluate_policy(
    space: TruncatedStateSpace,
    policy: Policy,
    costs: CostVector,
    arrivals: ArrivalDistribution,
    config: DPConfig | None = None,
    mode: str = "discounted",
) -> ValueFunction | tuple[float, ValueFunction]:
    """Value of a fixed policy: discounted table, or (gain, bias) when
    ``mode="average"``.

    Iterates on the packed balanced-state list with the policy's successor
    map precomputed once; stopping mirrors the optimality iterations.
    """
    if mode not in ("discounted", "average"):
        raise ValueError(f"mode must be 'discounted' or 'average', got {mode!r}")
    config = config or DPConfig()
    theta = 1.0 if mode == "average" else config.theta
    if mode == "discounted" and not 0.0 <= theta < 1.0:
        raise ValueError(f"discounted mode needs 0 <= theta < 1, got {theta}")
    tol = config.resolved_tol(mode)
    succ = _sector_successors(space, policy)
    states = space.balanced_states
    state_cost = states @ costs.vector
    atom_cost = _atom_cost(space.graph, costs)
    probs = arrivals.atom_probs()
    table = np.zeros((len(states), space.n_atoms))
    resid = np.inf
    for sweep in range(1, config.max_iters + 1):
        w = table @ probs
        new = np.empty_like(table)
        for a_idx in range(space.n_atoms):
            if theta == 0.0:
                new[:, a_idx] = state_cost + atom_cost[a_idx]
            else:
                new[:, a_idx] = (
                    state_cost + atom_cost[a_idx] + theta * w[succ[a_idx]]
                )
        if mode == "average":
            gain = float(new[0, 0])
            diff = new - table
            resid = float(diff.max() - diff.min())
            table = new - gain
            if resid < tol:
                return gain, ValueFunction(
                    space, table, None, sweep, resid, layout="sector"
                )
        else:
            resid = float(np.abs(new - table).max())
            table = new
            if resid < tol:
                return ValueFunction(
                    space, table, theta, sweep, resid, layout="sector"
                )
    raise NoConvergence(
        f"policy evaluation did not converge within {config.max_iters} sweeps "
        f"(last residual {resid:g})",
        iterations=config.max_iters,
        residual=resid,
    )
