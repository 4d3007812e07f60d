"""Show that per-edge thresholds are not optimal on the W graph.

The W graph has three demand classes over two supply classes, with d2
flexible.  A natural conjecture extends the N-graph result with one
threshold per non-priority edge (ThresholdW).  Counting the threshold on
the combined d2 + d3 workload instead (ThresholdWWorkload) protects the
expensive supply node s2 earlier and earns a strictly lower cost rate at
this parameter set, so the conjecture fails.

Both policies run on common random numbers, which makes the paired
difference far sharper than two independent estimates.  The full-length
pinned experiment is available as:

    python3 -m matchdp reproduce w-counterexample

Run with: python3 demos/w_counterexample.py
"""

from __future__ import annotations

import numpy as np

from matchdp import (
    ArrivalDistribution,
    CostVector,
    MatchingGraph,
    SimConfig,
    ThresholdW,
    ThresholdWWorkload,
    compare,
)


def main() -> None:
    graph = MatchingGraph(
        demand_nodes=("d1", "d2", "d3"),
        supply_nodes=("s1", "s2"),
        edges=(("d1", "s1"), ("d2", "s1"), ("d2", "s2"), ("d3", "s2")),
    )
    arrivals = ArrivalDistribution(
        alpha=np.array([0.40, 0.35, 0.25]), beta=np.array([0.5, 0.5])
    )
    costs = CostVector(
        demand=np.array([10.0, 10.0, 1.0]), supply=np.array([1.0, 1000.0])
    )
    policies = [
        ThresholdWWorkload(graph, t21=14, t32=0),
        ThresholdW(graph, t21=11, t22=0),
    ]

    print("comparing workload-counting vs per-edge thresholds on the W graph")
    print("(5 replications of 200000 steps, common random numbers)")
    cfg = SimConfig(horizon=200_000, burn_in=10_000, replications=5, seed=7)
    outcome = compare(graph, arrivals, costs, policies, cfg)

    for result in outcome.results:
        print(f"  {result.label:>30s}: {result.mean:10.3f} +- {result.se:.3f}")
    best = outcome.pairs[0]
    print(f"paired difference {best.first} - {best.second}: "
          f"{best.mean:.3f} +- {best.se:.3f} "
          f"({abs(best.mean) / best.se:.1f} standard errors)")


if __name__ == "__main__":
    main()
