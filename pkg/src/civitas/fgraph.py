"""Top-level function graphs with distribution-valued node performance.

Each node's performance is a finite discrete distribution induced by the
area-level scenario process (occupation mass on a column maps to mass on
that column's schedule makespan).  The graph evaluates deterministically:
node durations are independent, ordering arcs chain completions, and the
overall goal is split into per-node targets proportional to capability.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .ctmdp import Ctmdp, CtmdpSolution

PROB_TOL = 1e-12

# Guard against runaway joint enumeration; graphs here are small by design.
MAX_JOINT_SUPPORT = 2_000_000


@dataclass(frozen=True)
class PerfDistribution:
    """Finite discrete distribution over a performance value."""

    points: tuple[tuple[float, float], ...]  # (value, probability)

    def __post_init__(self):
        if not self.points:
            raise ValueError("distribution needs at least one point")
        total = 0.0
        seen = set()
        for value, prob in self.points:
            if prob < 0:
                raise ValueError(f"negative probability {prob}")
            if value in seen:
                raise ValueError(f"duplicate support value {value}")
            seen.add(value)
            total += prob
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {total}")

    @classmethod
    def from_dict(cls, d: dict[float, float]) -> "PerfDistribution":
        return cls(tuple(sorted(d.items())))

    @classmethod
    def point(cls, value: float) -> "PerfDistribution":
        return cls(((value, 1.0),))

    def as_dict(self) -> dict[float, float]:
        return dict(self.points)

    def expectation(self) -> float:
        return sum(v * p for v, p in self.points)


@dataclass(frozen=True)
class FgNode:
    id: str
    dist: PerfDistribution
    capability: float = 0.0  # expected throughput (cars per period)


@dataclass(frozen=True)
class FunctionGraph:
    """Acyclic graph of performance nodes; unconnected nodes are allowed."""

    nodes: tuple[FgNode, ...]
    arcs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        for a, b in self.arcs:
            if a not in known or b not in known:
                raise ValueError(f"arc ({a}, {b}) references unknown node")
        self._topo_order()  # raises on cycles

    def _topo_order(self) -> list[str]:
        indeg = {n.id: 0 for n in self.nodes}
        succs: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for a, b in self.arcs:
            succs[a].append(b)
            indeg[b] += 1
        order_idx = {n.id: i for i, n in enumerate(self.nodes)}
        ready = sorted((n for n, d in indeg.items() if d == 0), key=order_idx.get)
        out = []
        while ready:
            n = ready.pop(0)
            out.append(n)
            for s in succs[n]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
            ready.sort(key=order_idx.get)
        if len(out) != len(self.nodes):
            raise ValueError("function graph has a cycle")
        return out

    def node(self, node_id: str) -> FgNode:
        return next(n for n in self.nodes if n.id == node_id)

    def sinks(self) -> list[str]:
        with_out = {a for a, _ in self.arcs}
        return [n.id for n in self.nodes if n.id not in with_out]

    def with_node(self, node: FgNode) -> "FunctionGraph":
        replaced = tuple(node if n.id == node.id else n for n in self.nodes)
        if node.id not in {n.id for n in self.nodes}:
            replaced = replaced + (node,)
        return FunctionGraph(replaced, self.arcs)


def attach(fg: FunctionGraph, node_id: str, sol: CtmdpSolution,
           m: Ctmdp, t_area: dict[str, float]) -> FunctionGraph:
    """Give a node the occupation-weighted mixture of its column makespans.

    `t_area` maps each CTMDP state to the makespan of its schedule-table
    column; the node's capability is the LP objective (expected cars per
    table period).
    """
    if sol.status != "optimal":
        raise ValueError(f"cannot attach a non-optimal solution ({sol.status})")
    mass: dict[float, float] = {}
    for state in m.states:
        p = sol.state_mass(state)
        if p <= 0:
            continue
        value = t_area[state]
        mass[value] = mass.get(value, 0.0) + p
    total = sum(mass.values())
    dist = PerfDistribution.from_dict({v: p / total for v, p in mass.items()})
    return fg.with_node(FgNode(node_id, dist, capability=float(sol.objective)))


def evaluate(fg: FunctionGraph) -> dict[str, tuple[PerfDistribution, float]]:
    """Exact end-to-end completion distribution and expectation per sink.

    Node durations are independent; the completion of a node is its own
    duration plus the maximum completion of its predecessors (series arcs
    therefore convolve, parallel joins take the maximum).  Evaluated by
    exhaustive enumeration of the joint duration support, which stays
    exact even when branches share ancestors.
    """
    order = fg._topo_order()
    preds: dict[str, list[str]] = {n.id: [] for n in fg.nodes}
    for a, b in fg.arcs:
        preds[b].append(a)
    supports = [fg.node(n).dist.points for n in order]
    joint = 1
    for s in supports:
        joint *= len(s)
    if joint > MAX_JOINT_SUPPORT:
        raise ValueError(f"joint support of {joint} points is too large to enumerate")

    sink_mass: dict[str, dict[float, float]] = {s: {} for s in fg.sinks()}
    for combo in itertools.product(*supports):
        prob = 1.0
        duration = {}
        for node_id, (value, p) in zip(order, combo):
            prob *= p
            duration[node_id] = value
        if prob == 0.0:
            continue
        completion: dict[str, float] = {}
        for node_id in order:
            base = max((completion[p] for p in preds[node_id]), default=0.0)
            completion[node_id] = base + duration[node_id]
        for sink in sink_mass:
            v = completion[sink]
            sink_mass[sink][v] = sink_mass[sink].get(v, 0.0) + prob
    return {sink: (PerfDistribution.from_dict(mass),
                   PerfDistribution.from_dict(mass).expectation())
            for sink, mass in sink_mass.items()}


@dataclass(frozen=True)
class GoalAllocation:
    """Per-node throughput targets (cars per period) and deadlines."""

    targets: tuple[tuple[str, int], ...]
    deadlines: tuple[tuple[str, float], ...]

    def target(self, node_id: str) -> int:
        return dict(self.targets)[node_id]

    def deadline(self, node_id: str) -> float:
        return dict(self.deadlines)[node_id]


class AllocationInfeasible(RuntimeError):
    """The graph has no throughput capability to distribute goals over."""


def distribute_goals(fg: FunctionGraph, target: int, deadline: float,
                     overrides: dict[str, int] | None = None) -> GoalAllocation:
    """Split the global goal into per-node goals proportional to capability.

    Targets use largest-remainder rounding so they always sum exactly to
    the global target; deadlines scale with each node's share of the
    summed expected completion time.  `overrides` pins selected node
    targets (manual out-of-the-order interventions) and distributes the
    remainder over the other nodes.
    """
    if target < 0 or deadline <= 0:
        raise ValueError("need target >= 0 and deadline > 0")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {n.id for n in fg.nodes}
    if unknown:
        raise ValueError(f"override for unknown nodes {sorted(unknown)}")
    free = [n for n in fg.nodes if n.id not in overrides]
    pinned = sum(overrides.values())
    if pinned > target:
        raise AllocationInfeasible(f"overrides ({pinned}) exceed the global target ({target})")
    remaining = target - pinned
    total_cap = sum(n.capability for n in free)
    if free and total_cap <= 0 and remaining > 0:
        raise AllocationInfeasible("zero total capability over unpinned nodes")

    targets: dict[str, int] = dict(overrides)
    if free:
        shares = [Fraction(n.capability).limit_denominator(10**9) for n in free]
        total = sum(shares) or Fraction(1)
        exact = [Fraction(remaining) * s / total for s in shares]
        floors = [int(e) for e in exact]
        leftover = remaining - sum(floors)
        order = sorted(range(len(free)),
                       key=lambda i: (exact[i] - floors[i], -i), reverse=True)
        for i in order[:leftover]:
            floors[i] += 1
        for node, t in zip(free, floors):
            targets[node.id] = t

    exp_times = {n.id: n.dist.expectation() for n in fg.nodes}
    total_time = sum(exp_times.values())
    deadlines = {}
    for n in fg.nodes:
        share = exp_times[n.id] / total_time if total_time > 0 else 1.0 / len(fg.nodes)
        deadlines[n.id] = deadline * share
    return GoalAllocation(tuple((n.id, targets[n.id]) for n in fg.nodes),
                          tuple((n.id, deadlines[n.id]) for n in fg.nodes))


def allocation_to_csv(alloc: GoalAllocation) -> str:
    lines = ["node,target,deadline"]
    deadlines = dict(alloc.deadlines)
    for node, target in alloc.targets:
        lines.append("%s,%d,%.9g" % (node, target, deadlines[node]))
    return "\n".join(lines) + "\n"


def graph_to_csv(fg: FunctionGraph) -> str:
    """Nodes with their support points and capabilities, then order arcs."""
    lines = ["kind,node,successor,value,probability,capability"]
    for n in fg.nodes:
        for value, prob in n.dist.points:
            lines.append("node,%s,,%.9g,%.9g,%.9g" % (n.id, value, prob,
                                                      n.capability))
    for a, b in fg.arcs:
        lines.append(f"arc,{a},{b},,,")
    return "\n".join(lines) + "\n"
