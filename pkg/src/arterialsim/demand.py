"""Vehicle generation at sources and route assignment.

Two routing modes exist per flow:

* ``turns``: walk the network from the source, drawing the turn at every
  intersection from cumulative turn probabilities (left, straight, right).
* ``shortest``: draw a destination sink and use the free-flow-time shortest
  path to it, precomputed with Dijkstra.
"""

from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import TURNS, NetworkGraph, ScenarioError

Route = tuple  # lane ids, source first, sink last

RATIO_TOL = 1e-9


@dataclass(frozen=True)
class FlowSpec:
    source_lane: str
    rate: float  # veh/s
    turn_ratios: Mapping = field(default_factory=dict)  # intersection -> {turn: p}
    route_mode: str = "turns"
    destinations: Mapping | None = None  # sink -> weight, shortest mode only

    def check(self, dt: float) -> None:
        if self.rate < 0:
            raise ScenarioError(f"flow {self.source_lane}: rate must be >= 0")
        if self.rate * dt > 1.0 + 1e-12:
            raise ScenarioError(
                f"flow {self.source_lane}: rate*dt = {self.rate * dt:g} exceeds 1 (one vehicle per step)"
            )
        if self.route_mode not in ("turns", "shortest"):
            raise ScenarioError(f"flow {self.source_lane}: unknown route_mode {self.route_mode!r}")
        for inter, ratios in self.turn_ratios.items():
            bad = set(ratios) - set(TURNS)
            if bad:
                raise ScenarioError(f"flow {self.source_lane}: unknown turns {sorted(bad)} at {inter}")
            if any(p < 0 for p in ratios.values()):
                raise ScenarioError(f"flow {self.source_lane}: negative turn probability at {inter}")
            total = sum(ratios.values())
            if abs(total - 1.0) > RATIO_TOL:
                raise ScenarioError(
                    f"flow {self.source_lane}: turn ratios at {inter} sum to {total!r}, not 1"
                )


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stream (e.g. ``spawn:EB0_0``)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


class UniformStream:
    """Block-buffered uniform draws from a generator; same values as ``rng.random()``."""

    __slots__ = ("_rng", "_buf", "_i", "_block")

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._buf = rng.random(block)
        self._i = 0

    def __call__(self) -> float:
        if self._i == self._block:
            self._buf = self._rng.random(self._block)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return float(u)


def spawn_step(flow: FlowSpec, dt: float, draw, smart_share: float = 0.0) -> str | None:
    """One Bernoulli generation trial at a source.

    ``draw`` is a zero-argument callable returning uniforms in [0, 1) (a
    :class:`UniformStream` or ``rng.random``). Returns ``None`` or the class
    name of the generated vehicle (``"smart"`` with probability
    ``smart_share``). Whether the vehicle fits is the engine's business.
    """
    p = flow.rate * dt
    if p > 1.0 + 1e-12:
        raise ValueError(f"rate*dt = {p:g} > 1")
    if p <= 0.0 or draw() >= p:
        return None
    if smart_share <= 0.0:
        return "manual"
    return "smart" if draw() < smart_share else "manual"


def _lane_cost(net: NetworkGraph, lane_id: str) -> float:
    lane = net.lanes[lane_id]
    return lane.length / lane.speed_limit


def shortest_routes(net: NetworkGraph, source: str) -> dict:
    """Free-flow-time shortest route from ``source`` to every reachable sink.

    Ties are broken by the lexicographically smallest lane-id sequence;
    unreachable sinks are left out.
    """
    sinks = set(net.sinks)
    best = {}
    heap = [(round(_lane_cost(net, source), 9), (source,))]
    while heap:
        cost, path = heapq.heappop(heap)
        lane = path[-1]
        if lane in best:
            continue
        best[lane] = path
        for m in net.movements_from(lane):
            if m.to_lane not in best:
                heapq.heappush(heap, (round(cost + _lane_cost(net, m.to_lane), 9), path + (m.to_lane,)))
    return {lane: path for lane, path in best.items() if lane in sinks}


def choose_turn(ratios: Mapping, u: float) -> str:
    """Turn whose cumulative interval (ordered left, straight, right) contains ``u``."""
    acc = 0.0
    last = None
    for turn in TURNS:
        p = ratios.get(turn, 0.0)
        if p <= 0:
            continue
        acc += p
        last = turn
        if u < acc:
            return turn
    if last is None:
        raise ValueError("no turn has positive probability")
    return last  # u within rounding of 1


def assign_route(flow: FlowSpec, net: NetworkGraph, draw) -> Route:
    """Route for a new vehicle of ``flow`` using cumulative turn probabilities."""
    lane = flow.source_lane
    route = [lane]
    sinks = set(net.sinks)
    guard = len(net.lanes) + 1
    while lane not in sinks:
        inter = net.next_intersection(lane)
        if inter is None:
            raise ScenarioError(f"route from {flow.source_lane} stops at non-sink lane {lane}")
        options = inter.turns_from(lane)
        ratios = flow.turn_ratios.get(inter.id)
        if ratios is None:
            if len(options) != 1:
                raise ScenarioError(
                    f"flow {flow.source_lane}: no turn ratios for intersection {inter.id}"
                )
            move = options[0]
        else:
            turn = choose_turn(ratios, draw())
            move = inter.movement(lane, turn)
            if move is None:
                raise ScenarioError(
                    f"flow {flow.source_lane}: dead end at intersection {inter.id}, "
                    f"no {turn} movement from lane {lane}"
                )
        lane = move.to_lane
        route.append(lane)
        guard -= 1
        if guard < 0:
            raise ScenarioError(f"flow {flow.source_lane}: route does not terminate (cycle)")
    return tuple(route)


def choose_destination(destinations: Mapping, u: float) -> str:
    keys = sorted(destinations)
    weights = np.array([destinations[k] for k in keys], dtype=float)
    cum = np.cumsum(weights / weights.sum())
    return keys[min(int(np.searchsorted(cum, u, side="right")), len(keys) - 1)]


class RouteSampler:
    """Per-flow route assignment in either mode."""

    def __init__(self, flow: FlowSpec, net: NetworkGraph, draw):
        self.flow = flow
        self.net = net
        self.draw = draw
        self._routes = None
        if flow.route_mode == "shortest":
            self._routes = shortest_routes(net, flow.source_lane)
            if not self._routes:
                raise ScenarioError(f"flow {flow.source_lane}: no reachable sink")
            dest = flow.destinations or {k: 1.0 for k in self._routes}
            missing = set(dest) - set(self._routes)
            if missing:
                raise ScenarioError(f"flow {flow.source_lane}: unreachable destinations {sorted(missing)}")
            self._dest = dest

    def __call__(self) -> Route:
        if self._routes is None:
            return assign_route(self.flow, self.net, self.draw)
        return self._routes[choose_destination(self._dest, self.draw())]


def check_flow_routes(flow: FlowSpec, net: NetworkGraph) -> None:
    """Every turn with positive probability on every reachable lane has a movement."""
    if flow.route_mode == "shortest":
        RouteSampler(flow, net, lambda: 0.0)
        return
    todo, seen = [flow.source_lane], set()
    sinks = set(net.sinks)
    while todo:
        lane = todo.pop()
        if lane in seen or lane in sinks:
            continue
        seen.add(lane)
        inter = net.next_intersection(lane)
        if inter is None:
            raise ScenarioError(f"flow {flow.source_lane}: lane {lane} leads nowhere")
        options = inter.turns_from(lane)
        ratios = flow.turn_ratios.get(inter.id)
        if ratios is None:
            if len(options) != 1:
                raise ScenarioError(f"flow {flow.source_lane}: no turn ratios for intersection {inter.id}")
            todo.append(options[0].to_lane)
            continue
        for turn, p in ratios.items():
            if p <= 0:
                continue
            move = inter.movement(lane, turn)
            if move is None:
                raise ScenarioError(
                    f"flow {flow.source_lane}: dead end at intersection {inter.id}, "
                    f"no {turn} movement from lane {lane}"
                )
            todo.append(move.to_lane)
