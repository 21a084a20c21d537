"""Scenario configuration, the JSON scenario format, and scenario generators.

Scenario files are UTF-8 JSON with the sections ``network``, ``demand``,
``classes``, ``signals`` and ``sim`` (plus optional ``platoon``, ``sensing``,
``queues`` and ``origin``). See ``docs/scenario_format.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .carfollow import KRAUSS_COMPANION, MANUAL, SMART, VehicleClassParams
from .demand import FlowSpec, check_flow_routes
from .network import TURNS, Intersection, Lane, Movement, NetworkGraph, ScenarioError
from .platoon import PlatoonConfig
from .sensing import SensingConfig
from .signal import Phase, SignalConfig, TimingPlan

CF_MODELS = ("krauss", "iidm")
CLASSES = ("manual", "smart")
SATURATION_P = 0.9  # rate*dt used for saturation demand
DEFAULT_LOOKAHEAD = 250.0


@dataclass(frozen=True)
class QueueInit:
    """Initial standing queue: ``n`` vehicles, or ``"fill"`` to pack the lane."""

    lane: str
    n: int | str
    cls: str = "manual"


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkGraph
    demand: tuple
    class_params: Mapping
    smart_share: float = 0.0
    signal_plans: Mapping = field(default_factory=dict)
    dt: float = 0.2
    duration: float = 3600.0
    seed: int = 0
    platooning_enabled: bool = False
    cf_model: str = "krauss"
    platoon: PlatoonConfig = PlatoonConfig()
    sensing: SensingConfig = SensingConfig()
    initial_queues: tuple = ()
    lookahead: float = DEFAULT_LOOKAHEAD
    origin: Mapping | None = None  # generator name and arguments, used by sweeps

    def __post_init__(self):
        object.__setattr__(self, "demand", tuple(self.demand))
        object.__setattr__(self, "initial_queues", tuple(self.initial_queues))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def queue_capacity(lane: Lane, p: VehicleClassParams) -> int:
    """Stopped vehicles that fit between lane start and stop bar.

    The first front sits on the stop bar, the others follow at ``l + g_min``
    and every rear bumper stays on the lane.
    """
    if lane.stop_bar_position < p.l:
        return 0
    return int(math.floor((lane.stop_bar_position - p.l) / (p.l + p.g_min) + 1e-9)) + 1


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check every configuration invariant; raise :class:`ScenarioError` on the first violation."""
    net = cfg.network
    net.validate()
    if not cfg.dt > 0:
        raise ScenarioError("sim.dt must be > 0")
    if not cfg.duration >= 0:
        raise ScenarioError("sim.duration must be >= 0")
    if not 0.0 <= cfg.smart_share <= 1.0:
        raise ScenarioError("sim.smart_share must lie in [0, 1]")
    if cfg.cf_model not in CF_MODELS:
        raise ScenarioError(f"sim.cf_model must be one of {CF_MODELS}")
    if not 0 <= cfg.seed < 2**64:
        raise ScenarioError("sim.seed must be a 64-bit unsigned integer")
    if not cfg.lookahead >= 0:
        raise ScenarioError("sim.lookahead must be >= 0")
    for name in CLASSES:
        if name not in cfg.class_params:
            raise ScenarioError(f"classes: missing class {name!r}")
    if cfg.platooning_enabled:
        smart = cfg.class_params["smart"]
        try:
            cfg.platoon.check_against(smart.tau, smart.g_min)
        except ValueError as exc:
            raise ScenarioError(f"platoon: {exc}") from None
    period_steps = cfg.sensing.sample_period / cfg.dt
    if abs(period_steps - round(period_steps)) > 1e-6:
        raise ScenarioError("sensing.sample_period must be a multiple of dt")
    seen_sources = set()
    for i, flow in enumerate(cfg.demand):
        if flow.source_lane not in net.sources:
            raise ScenarioError(f"demand[{i}]: {flow.source_lane} is not a source lane")
        if flow.source_lane in seen_sources:
            raise ScenarioError(f"demand[{i}]: more than one flow for source {flow.source_lane}")
        seen_sources.add(flow.source_lane)
        flow.check(cfg.dt)
        for inter in flow.turn_ratios:
            if inter not in net.intersections:
                raise ScenarioError(f"demand[{i}]: unknown intersection {inter}")
        check_flow_routes(flow, net)
    for inter_id, inter in net.intersections.items():
        has_plan = inter_id in cfg.signal_plans
        if inter.signalized and not has_plan:
            raise ScenarioError(f"signals: signalized intersection {inter_id} has no plan")
        if not inter.signalized and has_plan:
            raise ScenarioError(f"signals: unsignalized intersection {inter_id} must not have a controller")
    for inter_id, sc in cfg.signal_plans.items():
        if inter_id not in net.intersections:
            raise ScenarioError(f"signals: unknown intersection {inter_id}")
        inter = net.intersections[inter_id]
        keys = {m.key for m in inter.movements}
        covered = set()
        for ph in sc.plan.phases:
            for mv in ph.green_movements:
                if mv not in keys:
                    raise ScenarioError(f"signals.{inter_id}.{ph.id}: unknown movement {mv}")
                covered.add(mv)
            clash = net.conflicts(inter_id, ph.green_movements)
            if clash:
                raise ScenarioError(f"signals.{inter_id}.{ph.id}: conflicting movements green together: {clash[0]}")
        if covered != keys:
            raise ScenarioError(f"signals.{inter_id}: movements never green: {sorted(keys - covered)}")
    for i, q in enumerate(cfg.initial_queues):
        if q.lane not in net.lanes:
            raise ScenarioError(f"queues[{i}]: unknown lane {q.lane}")
        if q.cls not in CLASSES:
            raise ScenarioError(f"queues[{i}]: unknown class {q.cls!r}")
        if q.n != "fill":
            if not isinstance(q.n, int) or q.n < 0:
                raise ScenarioError(f"queues[{i}]: n must be a non-negative integer or 'fill'")
            cap = queue_capacity(net.lanes[q.lane], cfg.class_params[q.cls])
            if q.n > cap:
                raise ScenarioError(f"queues[{i}]: {q.n} vehicles exceed lane capacity {cap}")
    return cfg


# --------------------------------------------------------------------------
# JSON serialization

_MISSING = object()


def _take(d: Mapping, key: str, path: str, kind, default=_MISSING):
    if key not in d:
        if default is _MISSING:
            raise ScenarioError(f"{path}.{key}: required field missing")
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ScenarioError(f"{path}.{key}: expected {name}, got {type(value).__name__}")
    return value


def _no_extra(d: Mapping, allowed, path: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ScenarioError(f"{path}: unknown field(s) {sorted(extra)}")


def _obj(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{path}: expected an object")
    return value


def _lane_from(d, path) -> Lane:
    _no_extra(d, ("id", "length", "upstream_node", "downstream_node", "speed_limit", "stop_bar_position", "heading"), path)
    return Lane(
        id=_take(d, "id", path, str),
        length=_take(d, "length", path, float),
        upstream_node=_take(d, "upstream_node", path, (str, type(None)), None),
        downstream_node=_take(d, "downstream_node", path, (str, type(None)), None),
        speed_limit=_take(d, "speed_limit", path, float, 20.0),
        stop_bar_position=_take(d, "stop_bar_position", path, (float, int, type(None)), None),
        heading=_take(d, "heading", path, (str, type(None)), None),
    )


def _network_from(d, path) -> NetworkGraph:
    _no_extra(d, ("lanes", "intersections", "sources", "sinks"), path)
    lanes = {}
    for i, ld in enumerate(_take(d, "lanes", path, list)):
        lane = _lane_from(_obj(ld, f"{path}.lanes[{i}]"), f"{path}.lanes[{i}]")
        if lane.id in lanes:
            raise ScenarioError(f"{path}.lanes[{i}]: duplicate lane id {lane.id}")
        lanes[lane.id] = lane
    inters = {}
    for i, idd in enumerate(_take(d, "intersections", path, list, [])):
        p = f"{path}.intersections[{i}]"
        idd = _obj(idd, p)
        _no_extra(idd, ("id", "signalized", "incoming_lanes", "movements"), p)
        moves = []
        for j, m in enumerate(_take(idd, "movements", p, list)):
            if not (isinstance(m, list) and len(m) == 3 and all(isinstance(x, str) for x in m)):
                raise ScenarioError(f"{p}.movements[{j}]: expected [from_lane, turn, to_lane]")
            moves.append(Movement(*m))
        inter = Intersection(
            id=_take(idd, "id", p, str),
            signalized=_take(idd, "signalized", p, bool, True),
            incoming_lanes=tuple(_take(idd, "incoming_lanes", p, list)),
            movements=tuple(moves),
        )
        if inter.id in inters:
            raise ScenarioError(f"{p}: duplicate intersection id {inter.id}")
        inters[inter.id] = inter
    return NetworkGraph(lanes, inters, tuple(_take(d, "sources", path, list)), tuple(_take(d, "sinks", path, list)))


def _flow_from(d, path) -> FlowSpec:
    _no_extra(d, ("source_lane", "rate", "turn_ratios", "route_mode", "destinations"), path)
    ratios = _take(d, "turn_ratios", path, dict, {})
    for inter, r in ratios.items():
        _obj(r, f"{path}.turn_ratios.{inter}")
        for turn, p in r.items():
            if turn not in TURNS:
                raise ScenarioError(f"{path}.turn_ratios.{inter}: unknown turn {turn!r}")
            if not isinstance(p, (int, float)) or isinstance(p, bool):
                raise ScenarioError(f"{path}.turn_ratios.{inter}.{turn}: expected a number")
    return FlowSpec(
        source_lane=_take(d, "source_lane", path, str),
        rate=_take(d, "rate", path, float),
        turn_ratios={k: {t: float(p) for t, p in v.items()} for k, v in ratios.items()},
        route_mode=_take(d, "route_mode", path, str, "turns"),
        destinations=_take(d, "destinations", path, (dict, type(None)), None),
    )


def _dataclass_from(cls, d, path, **fixed):
    allowed = [f.name for f in fields(cls) if f.name not in fixed]
    _no_extra(d, allowed, path)
    kwargs = dict(fixed)
    for f in fields(cls):
        if f.name in d:
            kwargs[f.name] = d[f.name]
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _signal_from(d, path) -> SignalConfig:
    phases = []
    for i, pd in enumerate(_take(d, "phases", path, list)):
        p = f"{path}.phases[{i}]"
        pd = _obj(pd, p)
        _no_extra(pd, ("id", "green_movements", "nominal_green"), p)
        moves = _take(pd, "green_movements", p, list)
        for j, m in enumerate(moves):
            if not (isinstance(m, list) and len(m) == 2 and all(isinstance(x, str) for x in m)):
                raise ScenarioError(f"{p}.green_movements[{j}]: expected [from_lane, turn]")
        try:
            phases.append(Phase(_take(pd, "id", p, str), frozenset(tuple(m) for m in moves), _take(pd, "nominal_green", p, float)))
        except ValueError as exc:
            raise ScenarioError(f"{p}: {exc}") from None
    try:
        plan = TimingPlan(
            tuple(phases),
            _take(d, "red_clear", path, float),
            _take(d, "cycle", path, float),
            _take(d, "offset", path, float, 0.0),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    rest = {k: v for k, v in d.items() if k not in ("phases", "red_clear", "cycle", "offset")}
    return _dataclass_from(SignalConfig, rest, path, plan=plan)


def config_from_dict(doc: Mapping) -> ScenarioConfig:
    """Build and validate a configuration from a parsed scenario document."""
    doc = _obj(doc, "<root>")
    _no_extra(doc, ("network", "demand", "classes", "signals", "sim", "platoon", "sensing", "queues", "origin"), "<root>")
    net = _network_from(_obj(_take(doc, "network", "<root>", dict), "network"), "network")
    demand = tuple(
        _flow_from(_obj(f, f"demand[{i}]"), f"demand[{i}]") for i, f in enumerate(_take(doc, "demand", "<root>", list, []))
    )
    classes = {}
    for name, cd in _take(doc, "classes", "<root>", dict).items():
        classes[name] = _dataclass_from(VehicleClassParams, _obj(cd, f"classes.{name}"), f"classes.{name}")
    signals = {
        k: _signal_from(_obj(v, f"signals.{k}"), f"signals.{k}")
        for k, v in _take(doc, "signals", "<root>", dict, {}).items()
    }
    sim = _obj(_take(doc, "sim", "<root>", dict), "sim")
    _no_extra(sim, ("dt", "duration", "seed", "smart_share", "platooning_enabled", "cf_model", "lookahead"), "sim")
    queues = []
    for i, qd in enumerate(_take(doc, "queues", "<root>", list, [])):
        p = f"queues[{i}]"
        qd = _obj(qd, p)
        _no_extra(qd, ("lane", "n", "cls"), p)
        queues.append(QueueInit(_take(qd, "lane", p, str), _take(qd, "n", p, (int, str)), _take(qd, "cls", p, str, "manual")))
    cfg = ScenarioConfig(
        network=net,
        demand=demand,
        class_params=classes,
        smart_share=_take(sim, "smart_share", "sim", float, 0.0),
        signal_plans=signals,
        dt=_take(sim, "dt", "sim", float),
        duration=_take(sim, "duration", "sim", float),
        seed=_take(sim, "seed", "sim", int, 0),
        platooning_enabled=_take(sim, "platooning_enabled", "sim", bool, False),
        cf_model=_take(sim, "cf_model", "sim", str, "krauss"),
        platoon=_dataclass_from(PlatoonConfig, _obj(doc.get("platoon", {}), "platoon"), "platoon"),
        sensing=_dataclass_from(SensingConfig, _obj(doc.get("sensing", {}), "sensing"), "sensing"),
        initial_queues=tuple(queues),
        lookahead=_take(sim, "lookahead", "sim", float, DEFAULT_LOOKAHEAD),
        origin=doc.get("origin"),
    )
    return validate(cfg)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    net = cfg.network
    signals = {}
    for k, sc in cfg.signal_plans.items():
        d = {f.name: getattr(sc, f.name) for f in fields(sc) if f.name != "plan"}
        d.update(
            red_clear=sc.plan.red_clear,
            cycle=sc.plan.cycle,
            offset=sc.plan.offset,
            phases=[
                {"id": ph.id, "green_movements": [list(m) for m in sorted(ph.green_movements)], "nominal_green": ph.nominal_green}
                for ph in sc.plan.phases
            ],
        )
        signals[k] = d
    doc = {
        "network": {
            "lanes": [asdict(l) for l in net.lanes.values()],
            "intersections": [
                {
                    "id": it.id,
                    "signalized": it.signalized,
                    "incoming_lanes": list(it.incoming_lanes),
                    "movements": [[m.from_lane, m.turn, m.to_lane] for m in it.movements],
                }
                for it in net.intersections.values()
            ],
            "sources": list(net.sources),
            "sinks": list(net.sinks),
        },
        "demand": [
            {
                "source_lane": f.source_lane,
                "rate": f.rate,
                "turn_ratios": {k: dict(v) for k, v in f.turn_ratios.items()},
                "route_mode": f.route_mode,
                **({"destinations": dict(f.destinations)} if f.destinations is not None else {}),
            }
            for f in cfg.demand
        ],
        "classes": {k: asdict(v) for k, v in cfg.class_params.items()},
        "signals": signals,
        "sim": {
            "dt": cfg.dt,
            "duration": cfg.duration,
            "seed": cfg.seed,
            "smart_share": cfg.smart_share,
            "platooning_enabled": cfg.platooning_enabled,
            "cf_model": cfg.cf_model,
            "lookahead": cfg.lookahead,
        },
        "platoon": asdict(cfg.platoon),
        "sensing": asdict(cfg.sensing),
        "queues": [asdict(q) for q in cfg.initial_queues],
    }
    if cfg.origin is not None:
        doc["origin"] = cfg.origin
    return doc


def dumps(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=False)


def loads(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), str(path))


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps(cfg) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# generators


def _two_phase_signal(first, second, cycle, red_clear, offset=0.0, names=("EW", "NS")) -> SignalConfig:
    return SignalConfig(TimingPlan.two_phase(first, second, cycle, red_clear, offset, names))


SINGLE_APPROACH_LENGTH = 600.0
SINGLE_SATURATION_RATE = 4.5  # veh/s, rate*dt = 0.9 at dt = 0.2
# Exit length matters: a despawning head frees its follower and shortens later headways.
SINGLE_EXIT_LENGTH = 400.0


def build_single_intersection(
    downstream_distance: float | None = None,
    cycle: float = 120.0,
    red_clear: float = 3.0,
    *,
    cf_model: str = "krauss",
    params: VehicleClassParams = KRAUSS_COMPANION,
    dt: float = 0.2,
    duration: float = 3600.0,
    seed: int = 0,
) -> ScenarioConfig:
    """One signalized crossing fed by saturated West and North approaches, both bound East.

    The West approach goes straight, the North approach turns left; each gets
    ``(cycle - 2*red_clear)/2`` of green, West first. With
    ``downstream_distance`` an eastbound lane of that length leads to a second
    signal whose phase order is flipped (a dummy cross approach with no demand
    takes the first green).
    """
    if not cycle > 2 * red_clear:
        raise ScenarioError("cycle must exceed twice the red clear time")
    if downstream_distance is not None and not downstream_distance > params.l + params.g_min:
        raise ScenarioError(
            f"downstream_distance {downstream_distance} m cannot hold one vehicle (needs > {params.l + params.g_min} m)"
        )
    L = SINGLE_APPROACH_LENGTH
    lanes = {
        "W_in": Lane("W_in", L, None, "I1", heading="E"),
        "N_in": Lane("N_in", L, None, "I1", heading="S"),
    }
    sinks = ["E_out"]
    sources = ["W_in", "N_in"]
    signals = {}
    if downstream_distance is None:
        lanes["E_out"] = Lane("E_out", SINGLE_EXIT_LENGTH, "I1", None, heading="E")
        first = "E_out"
        inters = {}
    else:
        lanes["E_mid"] = Lane("E_mid", float(downstream_distance), "I1", "I2", heading="E")
        lanes["X_in"] = Lane("X_in", 200.0, None, "I2", heading="S")
        lanes["E_out"] = Lane("E_out", SINGLE_EXIT_LENGTH, "I2", None, heading="E")
        lanes["X_out"] = Lane("X_out", 100.0, "I2", None, heading="S")
        first = "E_mid"
        sources.append("X_in")
        sinks.append("X_out")
        inters = {
            "I2": Intersection(
                "I2", True, ("E_mid", "X_in"),
                (Movement("E_mid", "straight", "E_out"), Movement("X_in", "straight", "X_out")),
            )
        }
        signals["I2"] = _two_phase_signal({("X_in", "straight")}, {("E_mid", "straight")}, cycle, red_clear, names=("NS", "EW"))
    inters["I1"] = Intersection(
        "I1", True, ("W_in", "N_in"),
        (Movement("W_in", "straight", first), Movement("N_in", "left", first)),
    )
    signals["I1"] = _two_phase_signal({("W_in", "straight")}, {("N_in", "left")}, cycle, red_clear)
    demand = [FlowSpec("W_in", SINGLE_SATURATION_RATE), FlowSpec("N_in", SINGLE_SATURATION_RATE)]
    if downstream_distance is not None:
        demand.append(FlowSpec("X_in", 0.0))
    net = NetworkGraph(lanes, dict(sorted(inters.items())), tuple(sources), tuple(sinks))
    cfg = ScenarioConfig(
        network=net,
        demand=tuple(demand),
        class_params={"manual": params, "smart": SMART.with_(v_max=params.v_max)},
        signal_plans=signals,
        dt=dt,
        duration=duration,
        seed=seed,
        cf_model=cf_model,
        initial_queues=(QueueInit("W_in", "fill"), QueueInit("N_in", "fill")),
        origin={
            "builder": "single_intersection",
            "args": {"downstream_distance": downstream_distance, "cycle": cycle, "red_clear": red_clear},
            "main": "I1",
        },
    )
    return validate(cfg)


# Arterial defaults. Lane rates are per arterial entry lane and per cross
# approach; they load the main line above its all-manual green capacity and
# below its mixed-fleet capacity.
ARTERIAL_LANE_VPH = 700.0
CROSS_VPH = 200.0
ARTERIAL_CYCLE = 90.0
ARTERIAL_RED_CLEAR = 3.0
ARTERIAL_NS_GREEN = 30.0
PROGRESSION_SPEED = 15.0
TURN_SHARE = 0.1
CROSS_RATIOS = {"left": 0.2, "straight": 0.6, "right": 0.2}
RIGHT_LANE = {"straight": 1.0 - TURN_SHARE, "right": TURN_SHARE}
LEFT_LANE = {"left": TURN_SHARE, "straight": 1.0 - TURN_SHARE}


def _arterial_network(n: int, spacing: float) -> NetworkGraph:
    lanes, inters = {}, {}
    cross_in, cross_out = 200.0, 100.0
    for s in range(n + 1):
        up = f"I{s - 1}" if s > 0 else None
        down = f"I{s}" if s < n else None
        for k in (0, 1):
            lanes[f"EB{s}_{k}"] = Lane(f"EB{s}_{k}", spacing, up, down, heading="E")
            # westbound lanes on segment s run from I_s to I_(s-1)
            lanes[f"WB{s}_{k}"] = Lane(f"WB{s}_{k}", spacing, down, up, heading="W")
    for i in range(n):
        I = f"I{i}"
        lanes[f"N{i}_in"] = Lane(f"N{i}_in", cross_in, None, I, heading="S")
        lanes[f"S{i}_in"] = Lane(f"S{i}_in", cross_in, None, I, heading="N")
        lanes[f"N{i}_out"] = Lane(f"N{i}_out", cross_out, I, None, heading="N")
        lanes[f"S{i}_out"] = Lane(f"S{i}_out", cross_out, I, None, heading="S")
        moves = (
            Movement(f"EB{i}_0", "straight", f"EB{i + 1}_0"),
            Movement(f"EB{i}_0", "right", f"S{i}_out"),
            Movement(f"EB{i}_1", "left", f"N{i}_out"),
            Movement(f"EB{i}_1", "straight", f"EB{i + 1}_1"),
            Movement(f"WB{i + 1}_0", "straight", f"WB{i}_0"),
            Movement(f"WB{i + 1}_0", "right", f"N{i}_out"),
            Movement(f"WB{i + 1}_1", "left", f"S{i}_out"),
            Movement(f"WB{i + 1}_1", "straight", f"WB{i}_1"),
            Movement(f"N{i}_in", "left", f"EB{i + 1}_1"),
            Movement(f"N{i}_in", "straight", f"S{i}_out"),
            Movement(f"N{i}_in", "right", f"WB{i}_0"),
            Movement(f"S{i}_in", "left", f"WB{i}_1"),
            Movement(f"S{i}_in", "straight", f"N{i}_out"),
            Movement(f"S{i}_in", "right", f"EB{i + 1}_0"),
        )
        incoming = (f"EB{i}_0", f"EB{i}_1", f"WB{i + 1}_0", f"WB{i + 1}_1", f"N{i}_in", f"S{i}_in")
        inters[I] = Intersection(I, True, incoming, moves)
    sources = ("EB0_0", "EB0_1", f"WB{n}_0", f"WB{n}_1") + tuple(
        x for i in range(n) for x in (f"N{i}_in", f"S{i}_in")
    )
    sinks = (f"EB{n}_0", f"EB{n}_1", "WB0_0", "WB0_1") + tuple(
        x for i in range(n) for x in (f"N{i}_out", f"S{i}_out")
    )
    return NetworkGraph(lanes, inters, sources, sinks)


def _arterial_demand(n: int, lane_rate: float, cross_rate: float) -> tuple:
    def along(indices, ratios):
        return {f"I{j}": dict(ratios) for j in indices}

    flows = [
        FlowSpec("EB0_0", lane_rate, along(range(n), RIGHT_LANE)),
        FlowSpec("EB0_1", lane_rate, along(range(n), LEFT_LANE)),
        FlowSpec(f"WB{n}_0", lane_rate, along(range(n), RIGHT_LANE)),
        FlowSpec(f"WB{n}_1", lane_rate, along(range(n), LEFT_LANE)),
    ]
    for i in range(n):
        # southbound: left joins the eastbound left lane, right the westbound right lane
        n_ratios = {f"I{i}": dict(CROSS_RATIOS)}
        n_ratios.update(along(range(i + 1, n), LEFT_LANE))
        n_ratios.update(along(range(i), RIGHT_LANE))
        s_ratios = {f"I{i}": dict(CROSS_RATIOS)}
        s_ratios.update(along(range(i + 1, n), RIGHT_LANE))
        s_ratios.update(along(range(i), LEFT_LANE))
        flows.append(FlowSpec(f"N{i}_in", cross_rate, dict(sorted(n_ratios.items()))))
        flows.append(FlowSpec(f"S{i}_in", cross_rate, dict(sorted(s_ratios.items()))))
    return tuple(flows)


def _arterial_signals(n: int, spacing: float, cycle: float, red_clear: float) -> dict:
    ns_green = ARTERIAL_NS_GREEN * (cycle - 2 * red_clear) / (ARTERIAL_CYCLE - 2 * ARTERIAL_RED_CLEAR)
    ew_green = cycle - 2 * red_clear - ns_green
    out = {}
    for i in range(n):
        ew = {(f"EB{i}_{k}", t) for k, t in ((0, "straight"), (0, "right"), (1, "left"), (1, "straight"))}
        ew |= {(f"WB{i + 1}_{k}", t) for k, t in ((0, "straight"), (0, "right"), (1, "left"), (1, "straight"))}
        ns = {(f"{d}{i}_in", t) for d in "NS" for t in TURNS}
        # eastbound green wave: intersection i starts its green i*spacing/v later
        offset = (-i * spacing / PROGRESSION_SPEED) % cycle
        plan = TimingPlan(
            (Phase("EW", frozenset(ew), ew_green), Phase("NS", frozenset(ns), ns_green)),
            red_clear,
            cycle,
            offset,
        )
        out[f"I{i}"] = SignalConfig(plan)
    return out


def build_arterial(
    n_intersections: int,
    spacing: float,
    smart_share: float,
    *,
    demand: str = "default",
    cf_model: str = "krauss",
    dt: float = 0.2,
    duration: float = 3600.0,
    seed: int = 0,
    platooning: bool = False,
    cycle: float = ARTERIAL_CYCLE,
    red_clear: float = ARTERIAL_RED_CLEAR,
) -> ScenarioConfig:
    """Synthetic two-lane-per-direction arterial with signalized cross streets.

    Segment ``s`` carries lanes ``EB{s}_{k}`` and ``WB{s}_{k}`` (``k=0`` right,
    ``k=1`` left); intersection ``I{i}`` has cross approaches ``N{i}_in`` and
    ``S{i}_in`` and exits ``N{i}_out``/``S{i}_out``. ``demand="saturation"``
    loads every source with ``rate*dt = 0.9``. The result depends only on the
    arguments.
    """
    if n_intersections < 1:
        raise ScenarioError("n_intersections must be >= 1")
    if not spacing > 0:
        raise ScenarioError("spacing must be > 0")
    if demand == "default":
        lane_rate, cross_rate = ARTERIAL_LANE_VPH / 3600.0, CROSS_VPH / 3600.0
    elif demand == "saturation":
        lane_rate = cross_rate = SATURATION_P / dt
    else:
        raise ScenarioError(f"unknown demand profile {demand!r}")
    n = n_intersections
    cfg = ScenarioConfig(
        network=_arterial_network(n, spacing),
        demand=_arterial_demand(n, lane_rate, cross_rate),
        class_params={"manual": MANUAL, "smart": SMART},
        smart_share=smart_share,
        signal_plans=_arterial_signals(n, spacing, cycle, red_clear),
        dt=dt,
        duration=duration,
        seed=seed,
        platooning_enabled=platooning,
        cf_model=cf_model,
        origin={
            "builder": "arterial",
            "args": {"n_intersections": n, "spacing": spacing, "demand": demand},
            "main": f"I{n // 2}",
        },
    )
    return validate(cfg)


def saturated(cfg: ScenarioConfig) -> ScenarioConfig:
    """Same scenario with every source at ``rate*dt = 0.9``."""
    rate = SATURATION_P / cfg.dt
    return validate(cfg.with_(demand=tuple(replace(f, rate=rate) for f in cfg.demand)))


def main_intersection(cfg: ScenarioConfig) -> str:
    if cfg.origin and "main" in cfg.origin:
        return cfg.origin["main"]
    signalized = sorted(k for k, v in cfg.network.intersections.items() if v.signalized)
    if not signalized:
        raise ScenarioError("scenario has no signalized intersection")
    return signalized[len(signalized) // 2]


SWEEP_PARAMS = ("a_max", "red_clear", "cycle", "smart_share", "downstream_distance", "platooning")


def _rebuild(cfg: ScenarioConfig, **arg_changes) -> ScenarioConfig:
    origin = cfg.origin or {}
    if origin.get("builder") != "single_intersection":
        raise ScenarioError("downstream_distance applies only to single-intersection scenarios")
    args = dict(origin["args"])
    args.update(arg_changes)
    base = build_single_intersection(
        args["downstream_distance"], args["cycle"], args["red_clear"],
        cf_model=cfg.cf_model, params=cfg.class_params["manual"], dt=cfg.dt,
        duration=cfg.duration, seed=cfg.seed,
    )
    return validate(
        base.with_(
            class_params=cfg.class_params,
            smart_share=cfg.smart_share,
            platooning_enabled=cfg.platooning_enabled,
            platoon=cfg.platoon,
            sensing=cfg.sensing,
            lookahead=cfg.lookahead,
        )
    )


def apply_parameter(cfg: ScenarioConfig, name: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one sweep parameter set to ``value``."""
    if name == "a_max":
        classes = {k: p.with_(a_max=float(value)) for k, p in cfg.class_params.items()}
        return validate(cfg.with_(class_params=classes))
    if name in ("red_clear", "cycle"):
        if not cfg.signal_plans:
            raise ScenarioError(f"{name} needs at least one signalized intersection")
        plans = {}
        for k, sc in cfg.signal_plans.items():
            try:
                plans[k] = replace(sc, plan=sc.plan.rescaled(**{name: float(value)}))
            except ValueError as exc:
                raise ScenarioError(f"signals.{k}: {exc}") from None
        out = cfg.with_(signal_plans=plans)
        if cfg.origin and "args" in cfg.origin and name in cfg.origin["args"]:
            origin = dict(cfg.origin)
            origin["args"] = {**origin["args"], name: float(value)}
            out = out.with_(origin=origin)
        return validate(out)
    if name == "smart_share":
        return validate(cfg.with_(smart_share=float(value)))
    if name == "downstream_distance":
        return _rebuild(cfg, downstream_distance=None if value is None else float(value))
    if name == "platooning":
        if isinstance(value, str):
            value = value.strip().lower() in ("1", "true", "yes", "on")
        return validate(cfg.with_(platooning_enabled=bool(value)))
    raise ScenarioError(f"unknown sweep parameter {name!r}; expected one of {SWEEP_PARAMS}")
