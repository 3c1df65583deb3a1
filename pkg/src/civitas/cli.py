"""Command-line entry points and deterministic run orchestration.

Every command reads structured-text inputs, writes CSV and event-log
artifacts into the output directory, and is byte-reproducible given the
same inputs and seed.  Exit codes: 0 success, 1 usage/config error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from . import ctg as ctgmod
from . import ctmdp as ctmdpmod
from . import fgraph as fgmod
from . import fsm as fsmmod
from . import fuzzy as fuzzymod
from . import hierarchy as hiermod
from . import metrics as metricsmod
from . import registry as regmod
from . import world as worldmod
from .textfmt import ParseError, parse_sections

logger = logging.getLogger("civitas")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _read_file(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"missing required {what} file")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    with open(path) as fh:
        return fh.read()


def _write(path: str, content: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(content)


@dataclass
class RunConfig:
    network: str
    demand: str
    ctg: str | None
    registry: str | None
    horizon: float
    seed: int
    out: str
    mode: str
    dt: float = 0.1
    jobs: int = 1
    target: int | None = None
    deadline: float | None = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be > 0")
        if self.mode not in ("fixed", "hierarchical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "hierarchical" and not self.ctg:
            raise ConfigError("hierarchical mode needs a --ctg file")


def _build_controllers(net: worldmod.StreetNetwork
                       ) -> dict[str, fsmmod.IntersectionController]:
    controllers = {}
    for spec in net.signals:
        modes = tuple(fsmmod.ImplementationMode(mid, lat, cost, safe)
                      for mid, lat, cost, safe in spec.modes)
        fsm = fsmmod.SignalFsm(spec.green, spec.yellow, spec.red, spec.offset,
                               fsmmod.SignalState(spec.anchor))
        controllers[spec.intersection] = fsmmod.IntersectionController(
            spec.intersection, fsm, modes, early_switch=spec.early_switch)
    for node in net.signalized_nodes():
        if node not in controllers:
            fsm = fsmmod.SignalFsm(30.0, 5.0, 25.0)
            controllers[node] = fsmmod.IntersectionController(node, fsm)
    return controllers


def _maybe_early_switch(net: worldmod.StreetNetwork, world: worldmod.WorldState,
                        ctrl: fsmmod.IntersectionController,
                        t: float) -> fsmmod.IntersectionController:
    """Cut a dwell short when the admitted approach is empty.

    Only used while no zone timing constraints are active (fixed mode);
    pools of vehicles must keep following the coordinated tables.
    """
    state = ctrl.fsm.state_at(t)
    if state is fsmmod.SignalState.YELLOW:
        return ctrl
    admitted = 2 if state is fsmmod.SignalState.GREEN else 1
    queues = {1: 0, 2: 0}
    for seg in net.segments:
        if seg.to_node == ctrl.id and seg.approach in queues:
            queues[seg.approach] += len(world.queues[seg.id])
    if queues[admitted] == 0 and queues[3 - admitted] > 0:
        world.log("early_switch", t, ctrl.id)
        return replace(ctrl, fsm=fsmmod.skip_to_next_state(ctrl.fsm, t))
    return ctrl


def _runtime_registry(top_id: str, area_id: str, zone_id: str,
                      itus: tuple[str, ...]) -> regmod.DmRegistry:
    """Registry mirroring the engine's modules so routing can be checked."""
    reg = regmod.DmRegistry()
    maximize = regmod.Direction.MAXIMIZE
    reg.register(regmod.DmModule(top_id, hiermod.LEVEL_GLOBAL,
                                 (regmod.Goal("network_throughput", maximize),),
                                 inputs=("caps",), outputs=("goals",)))
    reg.register(regmod.DmModule(area_id, hiermod.LEVEL_AREA,
                                 (regmod.Goal("area_throughput", maximize),),
                                 inputs=("goals", "zone_caps"),
                                 outputs=("zone_bounds", "caps")))
    reg.register(regmod.DmModule(zone_id, hiermod.LEVEL_ZONE,
                                 (regmod.Goal("zone_throughput", maximize),),
                                 inputs=("zone_bounds", "itu_caps"),
                                 outputs=("itu_deadlines", "zone_caps")))
    for itu in itus:
        reg.register(regmod.DmModule(itu, hiermod.LEVEL_INTERSECTION,
                                     (regmod.Goal("throughput", maximize),),
                                     inputs=("deadlines",), outputs=("caps",)))
    reg.wire((top_id, "goals"), (area_id, "goals"), regmod.LinkRole.GOAL_SETTING)
    reg.wire((area_id, "zone_bounds"), (zone_id, "zone_bounds"),
             regmod.LinkRole.GOAL_SETTING)
    reg.wire((area_id, "caps"), (top_id, "caps"), regmod.LinkRole.CAPABILITY_REPORT)
    reg.wire((zone_id, "zone_caps"), (area_id, "zone_caps"),
             regmod.LinkRole.CAPABILITY_REPORT)
    for itu in itus:
        reg.wire((zone_id, "itu_deadlines"), (itu, "deadlines"),
                 regmod.LinkRole.GOAL_SETTING)
        reg.wire((itu, "caps"), (zone_id, "itu_caps"),
                 regmod.LinkRole.CAPABILITY_REPORT)
    return reg


def _build_table(ctg: ctgmod.Ctg, jobs: int,
                 objective: str = "makespan") -> ctgmod.ScheduleTable:
    scenarios = ctgmod.enumerate_scenarios(ctg)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(
                lambda s: ctgmod.schedule(ctgmod.resolve(ctg, s), objective),
                scenarios))
        schedules = dict(zip(scenarios, results))
    else:
        schedules = {s: ctgmod.schedule(ctgmod.resolve(ctg, s), objective)
                     for s in scenarios}
    return ctgmod.ScheduleTable(ctg.zone, tuple(scenarios), schedules)


def _payload_desc(payload: object) -> str:
    if isinstance(payload, tuple):
        return f"constraints={len(payload)}"
    return repr(payload)


def _drain_engine_events(engine: hiermod.HierarchyEngine,
                         world: worldmod.WorldState) -> None:
    """Append pending messages and controller events to the world log."""
    for msg in engine.messages:
        if isinstance(msg, hiermod.ConstraintMsg):
            world.log("constraint", msg.issued_at, msg.source, msg.target,
                      _payload_desc(msg.payload))
        else:
            world.log("violation", msg.occurred_at, msg.source, msg.target,
                      msg.quantity, msg.shortfall)
    engine.messages.clear()
    for ctrl in engine.controllers.values():
        for at, kind, detail in ctrl.events:
            world.log(kind, at, detail)
        ctrl.events.clear()


def run_simulation(cfg: RunConfig) -> dict:
    os.makedirs(cfg.out, exist_ok=True)
    net = worldmod.load_network(_read_file(cfg.network, "network"))
    demand = worldmod.load_demand(_read_file(cfg.demand, "demand"))
    world = worldmod.make_world(net, demand, cfg.horizon, cfg.seed)
    controllers = _build_controllers(net)

    engine = None
    estimators: list[ctgmod.RunningMedianThreshold] = []
    shift_log = ctmdpmod.ShiftLog()
    table = None
    zone = None
    reports: list[tuple[float, hiermod.ReconcileReport]] = []
    cycle = max((c.fsm.cycle for c in controllers.values()), default=60.0)

    if cfg.mode == "hierarchical":
        ctg = ctgmod.load_ctg(_read_file(cfg.ctg, "ctg"))
        for site in ctg.sites:
            if not site.segment:
                raise ConfigError(f"site {site.id} names no observed segment")
            try:
                net.segment(site.segment)
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
        table = _build_table(ctg, cfg.jobs)
        itus = tuple(sorted(controllers))
        initial = tuple(s.labels[0] for s in ctg.sites)
        zone = hiermod.ZoneUnit(ctg.zone or "Z", ctg, table, itus, initial, cycle)
        area = hiermod.AreaUnit("area", (zone.id,))
        capability = table.schedules[initial].graph.total_n()
        fg = fgmod.FunctionGraph(
            (fgmod.FgNode("area", fgmod.PerfDistribution.point(
                table.t_area(initial)), capability),))
        target = cfg.target if cfg.target is not None else int(capability)
        deadline = cfg.deadline if cfg.deadline is not None else cycle
        top = hiermod.GlobalUnit("tcu", fg, target, deadline, ("area",))
        registry = _runtime_registry("tcu", "area", zone.id, itus)
        engine = hiermod.HierarchyEngine(top, {"area": area}, {zone.id: zone},
                                         controllers, registry)
        estimators = [ctgmod.RunningMedianThreshold(s) for s in ctg.sites]
        reports.append((0.0, engine.reconcile(at=0.0)))
        _drain_engine_events(engine, world)
        controllers = engine.controllers

    ticks = int(round(cfg.horizon / cfg.dt))
    epoch_every = max(1, int(round(cycle / cfg.dt)))
    epoch_count = 0
    prev_state_name = None
    for k in range(ticks):
        t = round((k + 1) * cfg.dt, 10)
        active = engine.controllers if engine else controllers
        if engine is None:
            for node, ctrl in list(active.items()):
                if ctrl.early_switch:
                    active[node] = _maybe_early_switch(net, world, ctrl, t)
        controls = {node: ctrl.fsm.state_at(t) for node, ctrl in active.items()}
        worldmod.step(world, controls, cfg.dt)

        if engine is not None and (k + 1) % epoch_every == 0:
            epoch_count += 1
            labels = []
            for est in estimators:
                obs = worldmod.observe_cycle(world, est.site.segment,
                                             (t - cycle, t))
                labels.append(est.observe(obs.n))
            scenario = tuple(labels)
            state_name = f"{zone.id}:{ctgmod.scenario_name(scenario)}"
            if prev_state_name is not None:
                shift_log.record(prev_state_name, "default", cycle, state_name)
            prev_state_name = state_name
            zone.set_scenario(scenario)
            if epoch_count % 5 == 0:
                model = ctmdpmod.from_schedule_tables([table], shift_log)
                sol = ctmdpmod.solve_model(model)
                if sol.status == "optimal":
                    engine.areas["area"].set_model(model, sol.objective)
                    t_area = {f"{table.zone}:{ctgmod.scenario_name(s)}":
                              table.t_area(s) for s in table.scenarios}
                    engine.top.fg = fgmod.attach(engine.top.fg, "area", sol,
                                                 model, t_area)
            report = engine.reconcile(at=t)
            reports.append((t, report))
            _drain_engine_events(engine, world)

    if cfg.registry:
        reg = regmod.load_registry(_read_file(cfg.registry, "registry"))
        _write(os.path.join(cfg.out, "interactions.csv"),
               regmod.classification_report(reg))
    if engine is not None:
        alloc = fgmod.distribute_goals(engine.top.fg, engine.top.target,
                                       engine.top.deadline)
        _write(os.path.join(cfg.out, "goal_allocation.csv"),
               fgmod.allocation_to_csv(alloc))
        _write(os.path.join(cfg.out, "function_graph.csv"),
               fgmod.graph_to_csv(engine.top.fg))

    worldmod.write_event_log(world.events, os.path.join(cfg.out, "events.log"))
    summary = {
        "mode": cfg.mode, "seed": cfg.seed, "horizon": cfg.horizon,
        "entered": world.entered, "exited": world.exited,
        "dropped": world.dropped, "remaining": world.vehicle_count(),
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(summary))
    w.writerow([summary[k] for k in summary])
    _write(os.path.join(cfg.out, "summary.csv"), buf.getvalue())

    lines = ["time,converged,passes,unresolved,safe_engaged"]
    for at, report in reports:
        lines.append("%.9g,%s,%d,%d,%s" % (
            at, report.converged, report.passes, len(report.unresolved),
            ";".join(report.safe_engaged)))
    _write(os.path.join(cfg.out, "reports.csv"), "\n".join(lines) + "\n")
    if table is not None:
        _write(os.path.join(cfg.out, "schedule_table.csv"),
               ctgmod.table_to_csv(table))
    logger.info("simulate: %s", summary)
    return summary


def cmd_simulate(args) -> int:
    cfg = RunConfig(args.network, args.demand, args.ctg, args.registry,
                    args.horizon, args.seed, args.out, args.mode, args.dt,
                    args.jobs, args.target, args.deadline)
    run_simulation(cfg)
    return 0


def cmd_schedule(args) -> int:
    ctg = ctgmod.load_ctg(_read_file(args.ctg, "ctg"))
    table = _build_table(ctg, args.jobs, args.objective)
    _write(os.path.join(args.out, "schedule_table.csv"), ctgmod.table_to_csv(table))
    logger.info("schedule: %d columns", len(table.scenarios))
    return 0


def cmd_ctmdp(args) -> int:
    if args.model:
        model = ctmdpmod.model_from_csv(_read_file(args.model, "model"))
    else:
        ctg = ctgmod.load_ctg(_read_file(args.ctg, "ctg"))
        table = _build_table(ctg, args.jobs)
        log = ctmdpmod.ShiftLog()
        for row in csv.DictReader(io.StringIO(_read_file(args.shifts, "shift log"))):
            log.record(row["state"], row["action"], float(row["dwell"]),
                       row.get("next") or None)
        model = ctmdpmod.from_schedule_tables([table], log)
    if model.prior_pairs:
        logger.warning("unvisited pairs given the uniform prior: %s",
                       ", ".join(f"{s}/{a}" for s, a in model.prior_pairs))
    sol = ctmdpmod.solve_model(model)
    if sol.status != "optimal":
        raise RuntimeError(f"CTMDP solve failed: {sol.status}")
    _write(os.path.join(args.out, "ctmdp_solution.csv"),
           ctmdpmod.solution_to_csv(sol, model))
    _write(os.path.join(args.out, "ctmdp_model.csv"), ctmdpmod.model_to_csv(model))
    logger.info("ctmdp objective %.9g", sol.objective)
    return 0


def cmd_fuzzy_surface(args) -> int:
    try:
        m, M, MI = (float(x) for x in args.params.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --params {args.params!r}: expected m,M,MI") from exc
    params = fuzzymod.FuzzyParams.uniform(m, M, MI)
    grid = fuzzymod.surface(params, n=args.n)
    i_axis = np.linspace(0.0, params.i.MI, args.n)
    d_axis = np.linspace(0.0, params.d.MI, args.n)
    lines = ["i,d,u"]
    for a in range(args.n):
        for b in range(args.n):
            lines.append("%.9g,%.9g,%.9g" % (i_axis[a], d_axis[b], grid[a, b]))
    _write(os.path.join(args.out, "surface.csv"), "\n".join(lines) + "\n")
    logger.info("surface: %d rows", args.n * args.n)
    return 0


_RULE_OPS = ("<=", ">=", "<", ">")


def _parse_rule(rule: str):
    for op in _RULE_OPS:
        if op in rule:
            attr, _, value = rule.partition(op)
            attr, bound = attr.strip(), float(value)
            if op == "<=":
                return lambda pt: pt[attr] <= bound
            if op == ">=":
                return lambda pt: pt[attr] >= bound
            if op == "<":
                return lambda pt: pt[attr] < bound
            return lambda pt: pt[attr] > bound
    raise ConfigError(f"bad predicate rule {rule!r}")


def cmd_metrics(args) -> int:
    rows = [("metric", "value", "parameters")]
    base = os.path.dirname(os.path.abspath(args.job))
    for sec in parse_sections(_read_file(args.job, "metrics job")):
        if sec.kind == "scalability":
            value = metricsmod.scalability(
                sec.get_float("p1"), sec.get_float("cost1"),
                sec.get_float("p2"), sec.get_float("cost2"))
            rows.append(("scalability", "%.9g" % value,
                         f"name={sec.name};p1={sec.get('p1')};p2={sec.get('p2')}"))
        elif sec.kind == "efficiency":
            path = os.path.join(base, sec.require("file"))
            data = np.genfromtxt(path, delimiter=",", names=True)
            curves = metricsmod.CurvePair(np.atleast_1d(data["p"]),
                                          np.atleast_1d(data["adaptive"]),
                                          np.atleast_1d(data["single"]))
            rows.append(("efficiency", "%.9g" % metricsmod.efficiency(curves),
                         f"name={sec.name};file={sec.require('file')}"))
        elif sec.kind == "predictability":
            path = os.path.join(base, sec.require("file"))
            pairs = []
            for row in csv.DictReader(open(path)):
                pairs.append((float(row["estimated"]), float(row["actual"])))
            limit = sec.get_float("limit", 0.0)
            rep = metricsmod.predictability(pairs, limit)
            rows.append(("predictability", "%.9g" % rep.max_abs_error,
                         f"name={sec.name};rmse={rep.rmse:.9g};"
                         f"within_limit={rep.within_limit}"))
        elif sec.kind == "autonomy":
            ranges = {}
            for axis in ("perf", "area", "time"):
                lo, hi = (float(x) for x in sec.get_list(axis))
                ranges[axis] = (lo, hi)
            effort = sec.get_float("constant")
            shape = tuple(int(x) for x in sec.get_list("shape")) or (1, 1, 1)
            fieldv = metricsmod.EffortField.from_function(
                lambda p, a, t: effort, ranges["perf"], ranges["area"],
                ranges["time"], shape)
            rows.append(("autonomy", "%.9g" % metricsmod.autonomy(fieldv),
                         f"name={sec.name};constant={effort}"))
        elif sec.kind == "flexibility":
            box = {}
            for item in sec.get_list("attrs"):
                name, lo, hi = item.split(":")
                box[name] = (float(lo), float(hi))
            pred = _parse_rule(sec.require("rule"))
            value = metricsmod.flexibility(
                pred, metricsmod.SpecBox.from_dict(box),
                sec.get_int("n", 10000), sec.get_int("seed", 0))
            rows.append(("flexibility", "%.9g" % value,
                         f"name={sec.name};n={sec.get('n')};seed={sec.get('seed')}"))
        else:
            raise ConfigError(f"unknown metrics section {sec.kind!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    _write(os.path.join(args.out, "metrics.csv"), buf.getvalue())
    return 0


def cmd_classify(args) -> int:
    reg = regmod.load_registry(_read_file(args.registry, "registry"))
    _write(os.path.join(args.out, "interactions.csv"),
           regmod.classification_report(reg))
    logger.info("classify: %d links", len(reg.links()))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="civitas", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="closed-loop traffic simulation")
    sim.add_argument("--network", required=True)
    sim.add_argument("--demand", required=True)
    sim.add_argument("--ctg")
    sim.add_argument("--registry")
    sim.add_argument("--horizon", type=float, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--mode", choices=("fixed", "hierarchical"), default="fixed")
    sim.add_argument("--dt", type=float, default=0.1)
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--target", type=int)
    sim.add_argument("--deadline", type=float)
    sim.set_defaults(func=cmd_simulate)

    sch = sub.add_parser("schedule", help="build the zone schedule table")
    sch.add_argument("--ctg", required=True)
    sch.add_argument("--out", required=True)
    sch.add_argument("--objective", choices=("makespan", "throughput"),
                     default="makespan")
    sch.add_argument("--jobs", type=int, default=1)
    sch.set_defaults(func=cmd_schedule)

    mdp = sub.add_parser("ctmdp", help="solve the area scenario process")
    mdp.add_argument("--model", help="CTMDP CSV export to solve directly")
    mdp.add_argument("--ctg", help="build states from this task graph")
    mdp.add_argument("--shifts", help="CSV shift log (state,action,dwell,next)")
    mdp.add_argument("--out", required=True)
    mdp.add_argument("--jobs", type=int, default=1)
    mdp.set_defaults(func=cmd_ctmdp)

    fz = sub.add_parser("fuzzy-surface", help="sample the lighting control surface")
    fz.add_argument("params", help="membership parameters m,M,MI")
    fz.add_argument("n", type=int, help="grid size per axis")
    fz.add_argument("--out", required=True)
    fz.set_defaults(func=cmd_fuzzy_surface)

    met = sub.add_parser("metrics", help="evaluate metrics from a job file")
    met.add_argument("--job", required=True)
    met.add_argument("--out", required=True)
    met.set_defaults(func=cmd_metrics)

    cls = sub.add_parser("classify", help="classify registry interactions")
    cls.add_argument("--registry", required=True)
    cls.add_argument("--out", required=True)
    cls.set_defaults(func=cmd_classify)
    return parser


def _setup_logging() -> None:
    level = {"quiet": logging.ERROR, "info": logging.INFO,
             "trace": logging.DEBUG}.get(os.environ.get("CIVITAS_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "ctmdp" and not args.model and not (args.ctg and args.shifts):
            raise ConfigError("ctmdp needs --model or both --ctg and --shifts")
        return args.func(args)
    except (ConfigError, ParseError, worldmod.TopologyError) as exc:
        print(f"civitas: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, never a stack-trace crash
        logger.error("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
