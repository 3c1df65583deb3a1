"""Mesoscopic queue-based traffic world.

Vehicles traverse road segments at free-flow speed, then wait at the stop
line until their signal admits them, the required headway has elapsed,
and the downstream segment has room (a shared single-lane section holds
at most one vehicle).  Arrivals are Poisson with piecewise-constant rates
from seeded, per-entry split random streams, so runs are bit-reproducible
given (network, demand, seed, controls).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .fsm import SignalState
from .textfmt import ParseError, parse_sections

DEFAULT_HEADWAY = 2.0


class TopologyError(ValueError):
    """The parsed network violates a structural invariant."""


@dataclass(frozen=True)
class RoadSegment:
    id: str
    from_node: str
    to_node: str
    length: float
    free_flow_speed: float
    capacity: int
    shared: bool = False
    approach: int | None = None   # 1 or 2 at a signalized to-node
    entry: bool = False
    exit: bool = False
    turns: tuple[str, ...] | None = None  # allowed next segments; None = all non-U-turns

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"segment {self.id}: length must be > 0")
        if self.free_flow_speed <= 0:
            raise ValueError(f"segment {self.id}: speed must be > 0")
        if self.capacity < 1:
            raise ValueError(f"segment {self.id}: capacity must be >= 1")

    @property
    def travel_time(self) -> float:
        return self.length / self.free_flow_speed

    @property
    def occupancy_limit(self) -> int:
        return 1 if self.shared else self.capacity


@dataclass(frozen=True)
class Intersection:
    id: str
    signalized: bool = False


@dataclass(frozen=True)
class SignalSpec:
    """Controller configuration embedded in the network file."""

    intersection: str
    green: float
    yellow: float
    red: float
    offset: float = 0.0
    anchor: str = "Green"
    modes: tuple[tuple[str, float, float, bool], ...] = ()  # (id, latency, cost, safe)
    early_switch: bool = False


@dataclass(frozen=True)
class Zone:
    id: str
    members: frozenset[str]


@dataclass(frozen=True)
class StreetNetwork:
    segments: tuple[RoadSegment, ...]
    intersections: tuple[Intersection, ...]
    zones: tuple[Zone, ...] = ()
    signals: tuple[SignalSpec, ...] = ()

    def __post_init__(self):
        if not self.segments:
            raise TopologyError("network has no segments")
        nodes = {i.id for i in self.intersections}
        seg_ids = [s.id for s in self.segments]
        if len(set(seg_ids)) != len(seg_ids):
            raise TopologyError("duplicate segment id")
        for s in self.segments:
            if s.from_node not in nodes or s.to_node not in nodes:
                raise TopologyError(f"segment {s.id}: endpoint not declared")
        signalized = {i.id for i in self.intersections if i.signalized}
        for s in self.segments:
            if s.to_node in signalized and s.approach not in (1, 2):
                raise TopologyError(
                    f"segment {s.id} feeds signalized {s.to_node} but has no approach")
        for spec in self.signals:
            if spec.intersection not in signalized:
                raise TopologyError(f"signal spec for non-signalized {spec.intersection}")
        incoming = self.incoming()
        outgoing = self.outgoing()
        for s in self.segments:
            if s.entry and incoming[s.from_node]:
                raise TopologyError(f"entry segment {s.id} has upstream feeders")
            if s.exit and outgoing[s.to_node]:
                raise TopologyError(f"exit segment {s.id} has downstream continuations")
        for z in self.zones:
            unknown = z.members - set(seg_ids)
            if unknown:
                raise TopologyError(f"zone {z.id}: unknown members {sorted(unknown)}")
        g = nx.Graph()
        g.add_nodes_from(nodes)
        for s in self.segments:
            g.add_edge(s.from_node, s.to_node)
        if not nx.is_connected(g):
            raise TopologyError("network graph is not connected")

    def segment(self, seg_id: str) -> RoadSegment:
        seg = next((s for s in self.segments if s.id == seg_id), None)
        if seg is None:
            raise KeyError(f"unknown segment {seg_id!r}")
        return seg

    def zone(self, zone_id: str) -> Zone:
        z = next((z for z in self.zones if z.id == zone_id), None)
        if z is None:
            raise KeyError(f"unknown zone {zone_id!r}")
        return z

    def incoming(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {i.id: [] for i in self.intersections}
        for s in self.segments:
            out[s.to_node].append(s.id)
        return out

    def outgoing(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {i.id: [] for i in self.intersections}
        for s in self.segments:
            out[s.from_node].append(s.id)
        return out

    def signalized_nodes(self) -> tuple[str, ...]:
        return tuple(i.id for i in self.intersections if i.signalized)

    def entries(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.segments if s.entry)

    def exits(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.segments if s.exit)

    def allowed_turns(self, seg_id: str) -> tuple[str, ...]:
        s = self.segment(seg_id)
        if s.turns is not None:
            return s.turns
        outgoing = self.outgoing()[s.to_node]
        nexts = []
        for cand_id in outgoing:
            cand = self.segment(cand_id)
            if cand.to_node == s.from_node:
                continue  # no U-turns unless nothing else continues
            nexts.append(cand_id)
        return tuple(nexts) if nexts else tuple(outgoing)

    def segment_graph(self) -> nx.DiGraph:
        """Directed graph over segments following allowed turns."""
        g = nx.DiGraph()
        for s in self.segments:
            g.add_node(s.id)
        for s in self.segments:
            for nxt in self.allowed_turns(s.id):
                g.add_edge(s.id, nxt, weight=self.segment(nxt).travel_time)
        return g


def load_network(text: str) -> StreetNetwork:
    """Parse and validate a network description."""
    sections = parse_sections(text)
    intersections: list[Intersection] = []
    segments: list[RoadSegment] = []
    zones: list[Zone] = []
    signals: list[SignalSpec] = []
    for sec in sections:
        if sec.kind == "intersection":
            intersections.append(Intersection(sec.name, sec.get_bool("signalized")))
        elif sec.kind == "segment":
            approach = sec.get_int("approach")
            turns = tuple(sec.get_list("turns")) if "turns" in sec.values else None
            segments.append(RoadSegment(
                sec.name, sec.require("from"), sec.require("to"),
                sec.get_float("length"), sec.get_float("speed"),
                sec.get_int("capacity", 20), sec.get_bool("shared"),
                approach, sec.get_bool("entry"), sec.get_bool("exit"), turns))
        elif sec.kind == "zone":
            zones.append(Zone(sec.name, frozenset(sec.get_list("members"))))
        elif sec.kind == "signal":
            modes = []
            for item in sec.get_list("modes"):
                parts = item.split(":")
                if len(parts) != 3:
                    raise ParseError(f"[signal {sec.name}]: bad mode {item!r}")
                modes.append((parts[0], float(parts[1]), float(parts[2]), False))
            safe = sec.get("safe_mode")
            if modes:
                if safe is None or safe not in {m[0] for m in modes}:
                    raise ParseError(f"[signal {sec.name}]: safe_mode must name one mode")
                modes = [(mid, lat, cost, mid == safe) for mid, lat, cost, _ in modes]
            signals.append(SignalSpec(
                sec.name, sec.get_float("green", 30.0), sec.get_float("yellow", 5.0),
                sec.get_float("red", 25.0), sec.get_float("offset", 0.0),
                sec.get("anchor", "Green"), tuple(modes),
                sec.get_bool("early_switch")))
        else:
            raise ParseError(f"unknown section kind {sec.kind!r}")
    try:
        return StreetNetwork(tuple(segments), tuple(intersections),
                             tuple(zones), tuple(signals))
    except ValueError as exc:
        if isinstance(exc, TopologyError):
            raise
        raise TopologyError(str(exc)) from exc


@dataclass(frozen=True)
class DemandWindow:
    start: float
    end: float
    rate: float  # vehicles per second

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("window end must exceed start")
        if self.rate < 0:
            raise ValueError("rate must be >= 0")


@dataclass(frozen=True)
class DemandProfile:
    arrivals: tuple[tuple[str, tuple[DemandWindow, ...]], ...]

    def __post_init__(self):
        for seg, windows in self.arrivals:
            for a, b in zip(windows, windows[1:]):
                if b.start != a.end:
                    raise ValueError(f"{seg}: windows must tile without gaps or overlap")


def load_demand(text: str) -> DemandProfile:
    sections = parse_sections(text)
    arrivals = []
    for sec in sections:
        if sec.kind != "arrivals":
            raise ParseError(f"unknown section kind {sec.kind!r} in demand file")
        windows = []
        for item in sec.get_list("windows"):
            parts = item.split(":")
            if len(parts) != 3:
                raise ParseError(f"[arrivals {sec.name}]: bad window {item!r}")
            windows.append(DemandWindow(float(parts[0]), float(parts[1]), float(parts[2])))
        arrivals.append((sec.name, tuple(windows)))
    return DemandProfile(tuple(arrivals))


@dataclass
class Vehicle:
    vid: int
    route: tuple[str, ...]
    leg: int
    entered_at: float
    ready_at: float
    pending_next: str | None = None


@dataclass
class Observation:
    """Per-site cycle observation: completed traversals and their mean time."""

    site: str
    n: int
    t_ex: float | None
    window: tuple[float, float]

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("N must be >= 0")
        if self.n > 0 and (self.t_ex is None or self.t_ex <= 0):
            raise ValueError("T_ex must be > 0 when N > 0")


@dataclass
class WorldState:
    network: StreetNetwork
    clock: float = 0.0
    queues: dict[str, list[Vehicle]] = field(default_factory=dict)
    events: list[tuple] = field(default_factory=list)
    entered: int = 0
    exited: int = 0
    dropped: int = 0
    zone_entered: dict[str, int] = field(default_factory=dict)
    zone_exited: dict[str, int] = field(default_factory=dict)
    last_cross: dict[str, float] = field(default_factory=dict)
    arrivals: list[tuple[float, str, tuple[str, ...]]] = field(default_factory=list)
    arrival_idx: int = 0
    next_vid: int = 0
    min_headway: float = DEFAULT_HEADWAY
    route_rng: np.random.Generator | None = None

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    def vehicle_count(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def log(self, *record) -> None:
        self.events.append(tuple(record))


def _zone_members(network: StreetNetwork) -> dict[str, frozenset[str]]:
    return {z.id: z.members for z in network.zones}


def make_world(network: StreetNetwork, demand: DemandProfile | None = None,
               horizon: float = 0.0, seed: int = 0,
               min_headway: float = DEFAULT_HEADWAY) -> WorldState:
    """Build a world with all randomness drawn up front.

    Arrival instants follow a piecewise-constant-rate Poisson process per
    entry segment, each fed by its own stream split from the seed; routes
    are sampled at generation time (uniform over reachable exits, then the
    fastest path), so stepping the world consumes no randomness.
    """
    world = WorldState(network, min_headway=min_headway,
                       queues={s.id: [] for s in network.segments},
                       zone_entered={z.id: 0 for z in network.zones},
                       zone_exited={z.id: 0 for z in network.zones})
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(len(network.entries()) + 1)
    world.route_rng = np.random.default_rng(children[-1])
    if demand is None or horizon <= 0:
        return world

    seg_graph = network.segment_graph()
    exits = network.exits()
    route_cache: dict[tuple[str, str], tuple[str, ...]] = {}

    def route_from(entry: str, rng: np.random.Generator) -> tuple[str, ...]:
        reachable = [e for e in exits
                     if e == entry or nx.has_path(seg_graph, entry, e)]
        if not reachable:
            raise TopologyError(f"no exit reachable from entry {entry}")
        target = reachable[int(rng.integers(len(reachable)))]
        key = (entry, target)
        if key not in route_cache:
            route_cache[key] = tuple(nx.shortest_path(seg_graph, entry, target,
                                                      weight="weight"))
        return route_cache[key]

    demand_map = dict(demand.arrivals)
    pending: list[tuple[float, str, tuple[str, ...]]] = []
    for idx, entry in enumerate(network.entries()):
        windows = demand_map.get(entry)
        if not windows:
            continue
        rng = np.random.default_rng(children[idx])
        for w in windows:
            if w.rate <= 0:
                continue
            t = w.start
            while True:
                t += rng.exponential(1.0 / w.rate)
                if t >= min(w.end, horizon):
                    break
                pending.append((t, entry, route_from(entry, rng)))
    unknown = set(demand_map) - set(network.entries())
    if unknown:
        raise TopologyError(f"demand on non-entry segments {sorted(unknown)}")
    pending.sort(key=lambda rec: (rec[0], rec[1]))
    world.arrivals = pending
    return world


def seed_vehicles(world: WorldState, placements: list[tuple[str, int]]) -> None:
    """Drop vehicles onto segments at time zero (closed-network studies)."""
    for seg_id, count in placements:
        seg = world.network.segment(seg_id)
        for _ in range(count):
            if len(world.queues[seg_id]) >= seg.occupancy_limit:
                raise ValueError(f"segment {seg_id} over occupancy limit")
            v = Vehicle(world.next_vid, (), 0, 0.0, seg.travel_time)
            world.next_vid += 1
            world.queues[seg_id].append(v)
            world.entered += 1
            world.log("arrive", 0.0, v.vid, seg_id)
            _count_zone_entry(world, None, seg_id)


def _count_zone_entry(world: WorldState, src: str | None, dst: str | None) -> None:
    for zid, members in _zone_members(world.network).items():
        src_in = src in members if src else False
        dst_in = dst in members if dst else False
        if dst_in and not src_in:
            world.zone_entered[zid] += 1
        if src_in and not dst_in:
            world.zone_exited[zid] += 1


def _next_segment(world: WorldState, v: Vehicle, seg: RoadSegment) -> str | None:
    """Planned next leg; draws one lazily for dynamically routed vehicles."""
    if v.route:
        if v.leg + 1 < len(v.route):
            return v.route[v.leg + 1]
        return None  # end of route: leaves the network
    if seg.exit:
        return None
    if v.pending_next is None:
        options = world.network.allowed_turns(seg.id)
        if not options:
            raise TopologyError(f"vehicle stuck: no turns from {seg.id}")
        v.pending_next = options[int(world.route_rng.integers(len(options)))]
    return v.pending_next


def step(world: WorldState, controls: dict[str, SignalState], dt: float) -> WorldState:
    """Advance the world by dt seconds under the given signal states.

    Arrivals due in the interval join their entry queue (or are dropped
    and counted when it is full); then each segment's head vehicle crosses
    if it is ready, the signal admits its approach, the headway since the
    last crossing has elapsed and the downstream segment has room.
    Blocked vehicles simply wait.  Mutates and returns `world`.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    for node in world.network.signalized_nodes():
        if node not in controls:
            raise ValueError(f"controls missing signalized intersection {node}")
    # Snap to a fine grid so repeated fractional steps do not drift.
    now = round(world.clock + dt, 10)
    world.clock = now

    while (world.arrival_idx < len(world.arrivals)
           and world.arrivals[world.arrival_idx][0] <= now):
        at, seg_id, route = world.arrivals[world.arrival_idx]
        world.arrival_idx += 1
        seg = world.network.segment(seg_id)
        if len(world.queues[seg_id]) >= seg.occupancy_limit:
            world.dropped += 1
            world.log("drop", at, seg_id)
            continue
        v = Vehicle(world.next_vid, route, 0, at, at + seg.travel_time)
        world.next_vid += 1
        world.queues[seg_id].append(v)
        world.entered += 1
        world.log("arrive", at, v.vid, seg_id)
        _count_zone_entry(world, None, seg_id)

    for seg in world.network.segments:
        queue = world.queues[seg.id]
        if not queue:
            continue
        v = queue[0]
        if v.ready_at > now:
            continue
        if world.last_cross.get(seg.id, -math.inf) + world.min_headway > now:
            continue
        node = seg.to_node
        state = controls.get(node)
        if state is not None and not state.admits(seg.approach or 0):
            continue
        nxt_id = _next_segment(world, v, seg)
        if nxt_id is None:
            if not seg.exit and v.route:
                raise TopologyError(f"route of vehicle {v.vid} ends on non-exit {seg.id}")
            queue.pop(0)
            world.exited += 1
            world.last_cross[seg.id] = now
            world.log("depart", now, v.vid, seg.id)
            _count_zone_entry(world, seg.id, None)
            continue
        nxt = world.network.segment(nxt_id)
        if len(world.queues[nxt_id]) >= nxt.occupancy_limit:
            continue
        queue.pop(0)
        v.leg += 1
        v.pending_next = None
        v.entered_at = now
        v.ready_at = now + nxt.travel_time
        world.queues[nxt_id].append(v)
        world.last_cross[seg.id] = now
        world.log("move", now, v.vid, seg.id, nxt_id)
        _count_zone_entry(world, seg.id, nxt_id)
    return world


def observe_cycle(world: WorldState, site: str, window: tuple[float, float]) -> Observation:
    """Completed traversals of `site` within (t0, t1] from the event log."""
    t0, t1 = window
    world.network.segment(site)  # validate id
    entered_at: dict[int, float] = {}
    durations: list[float] = []
    for ev in world.events:
        kind, at = ev[0], ev[1]
        if kind == "arrive" and ev[3] == site:
            entered_at[ev[2]] = at
        elif kind == "move":
            _, _, vid, src, dst = ev
            if src == site and t0 < at <= t1 and vid in entered_at:
                durations.append(at - entered_at.pop(vid))
            elif src == site:
                entered_at.pop(vid, None)
            if dst == site:
                entered_at[vid] = at
        elif kind == "depart" and ev[3] == site:
            vid = ev[2]
            if t0 < at <= t1 and vid in entered_at:
                durations.append(at - entered_at.pop(vid))
            else:
                entered_at.pop(vid, None)
    n = len(durations)
    t_ex = (sum(durations) / n) if n else None
    return Observation(site, n, t_ex, window)


def check_zone_balance(world: WorldState, zone_id: str,
                       window: tuple[float, float]) -> int:
    """entered - exited - delta(in-zone count) over the window; 0 when sound."""
    members = world.network.zone(zone_id).members
    t0, t1 = window
    entered = exited = 0
    count_t0 = count_t1 = 0
    for ev in world.events:
        kind, at = ev[0], ev[1]
        if kind == "arrive":
            delta_in = 1 if ev[3] in members else 0
            delta_out = 0
        elif kind == "depart":
            delta_in = 0
            delta_out = 1 if ev[3] in members else 0
        elif kind == "move":
            src_in, dst_in = ev[3] in members, ev[4] in members
            delta_in = 1 if (dst_in and not src_in) else 0
            delta_out = 1 if (src_in and not dst_in) else 0
        else:
            continue
        if at <= t0:
            count_t0 += delta_in - delta_out
        if at <= t1:
            count_t1 += delta_in - delta_out
        if t0 < at <= t1:
            entered += delta_in
            exited += delta_out
    return entered - exited - (count_t1 - count_t0)


def format_event(ev: tuple) -> str:
    """One tab-separated log line; floats carry 9 significant digits."""
    parts = []
    for item in ev:
        if isinstance(item, float):
            parts.append("%.9g" % item)
        else:
            parts.append(str(item))
    return "\t".join(parts)


def write_event_log(events: list[tuple], path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        for ev in events:
            fh.write(format_event(ev) + "\n")
