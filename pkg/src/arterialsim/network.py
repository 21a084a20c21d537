"""Road network topology: lanes, intersections and turn movements."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

TURNS = ("left", "straight", "right")
HEADINGS = ("N", "S", "E", "W")


class ScenarioError(ValueError):
    """Invalid scenario: parse failure or a violated configuration invariant."""


@dataclass(frozen=True)
class Lane:
    """One directed lane.

    ``upstream_node``/``downstream_node`` are intersection ids, ``None`` at the
    network boundary. ``stop_bar_position`` defaults to one metre before the
    lane end. ``heading`` is the direction of travel and drives the conflict
    table of the downstream intersection.
    """

    id: str
    length: float
    upstream_node: str | None = None
    downstream_node: str | None = None
    speed_limit: float = 20.0
    stop_bar_position: float | None = None
    heading: str | None = None

    def __post_init__(self):
        if self.stop_bar_position is None:
            object.__setattr__(self, "stop_bar_position", max(self.length - 1.0, self.length / 2.0))

    def check(self) -> None:
        if not self.length > 0:
            raise ScenarioError(f"lane {self.id}: length must be > 0")
        if not 0 < self.stop_bar_position <= self.length:
            raise ScenarioError(f"lane {self.id}: stop bar must lie in (0, length]")
        if not self.speed_limit > 0:
            raise ScenarioError(f"lane {self.id}: speed_limit must be > 0")
        if self.heading is not None and self.heading not in HEADINGS:
            raise ScenarioError(f"lane {self.id}: unknown heading {self.heading!r}")


@dataclass(frozen=True)
class Movement:
    from_lane: str
    turn: str
    to_lane: str

    @property
    def key(self) -> tuple:
        return (self.from_lane, self.turn)


@dataclass(frozen=True)
class Intersection:
    id: str
    signalized: bool
    incoming_lanes: tuple
    movements: tuple

    def __post_init__(self):
        object.__setattr__(self, "incoming_lanes", tuple(self.incoming_lanes))
        object.__setattr__(self, "movements", tuple(self.movements))

    def movement(self, from_lane: str, turn: str) -> Movement | None:
        for m in self.movements:
            if m.from_lane == from_lane and m.turn == turn:
                return m
        return None

    def turns_from(self, from_lane: str) -> list:
        """Movements available from a lane, ordered left, straight, right."""
        found = {m.turn: m for m in self.movements if m.from_lane == from_lane}
        return [found[t] for t in TURNS if t in found]


def _perpendicular(h1: str, h2: str) -> bool:
    return {h1, h2} not in ({"N", "S"}, {"E", "W"}) and h1 != h2


@dataclass(frozen=True)
class NetworkGraph:
    lanes: Mapping
    intersections: Mapping
    sources: tuple
    sinks: tuple
    _outgoing: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "sinks", tuple(self.sinks))
        out = {}
        for inter in self.intersections.values():
            for m in inter.movements:
                out.setdefault(m.from_lane, []).append(m)
        object.__setattr__(self, "_outgoing", out)

    def movements_from(self, lane_id: str) -> list:
        return list(self._outgoing.get(lane_id, ()))

    def next_intersection(self, lane_id: str) -> Intersection | None:
        node = self.lanes[lane_id].downstream_node
        return None if node is None else self.intersections[node]

    def conflicts(self, inter_id: str, movements) -> list:
        """Pairs of movements (by key) from perpendicular approaches."""
        heads = {}
        for from_lane, turn in movements:
            h = self.lanes[from_lane].heading
            if h is not None:
                heads[(from_lane, turn)] = h
        keys = sorted(heads)
        return [
            (a, b)
            for i, a in enumerate(keys)
            for b in keys[i + 1 :]
            if _perpendicular(heads[a], heads[b])
        ]

    def validate(self) -> None:
        """Raise :class:`ScenarioError` naming the first violated invariant."""
        for lane_id, lane in self.lanes.items():
            if lane_id != lane.id:
                raise ScenarioError(f"lane key {lane_id!r} does not match lane id {lane.id!r}")
            lane.check()
        incoming_owner = {}
        for inter_id, inter in self.intersections.items():
            if inter_id != inter.id:
                raise ScenarioError(f"intersection key {inter_id!r} does not match id {inter.id!r}")
            for lane_id in inter.incoming_lanes:
                if lane_id not in self.lanes:
                    raise ScenarioError(f"intersection {inter_id}: unknown incoming lane {lane_id}")
                if lane_id in incoming_owner:
                    raise ScenarioError(
                        f"lane {lane_id} is incoming to both {incoming_owner[lane_id]} and {inter_id}"
                    )
                incoming_owner[lane_id] = inter_id
                if self.lanes[lane_id].downstream_node != inter_id:
                    raise ScenarioError(f"lane {lane_id}: downstream_node does not match {inter_id}")
            seen = set()
            for m in inter.movements:
                if m.turn not in TURNS:
                    raise ScenarioError(f"intersection {inter_id}: unknown turn {m.turn!r}")
                if m.from_lane not in self.lanes:
                    raise ScenarioError(f"intersection {inter_id}: movement from unknown lane {m.from_lane}")
                if m.to_lane not in self.lanes:
                    raise ScenarioError(f"intersection {inter_id}: movement to unknown lane {m.to_lane}")
                if m.from_lane not in inter.incoming_lanes:
                    raise ScenarioError(
                        f"intersection {inter_id}: movement from {m.from_lane} which is not an incoming lane"
                    )
                if self.lanes[m.to_lane].upstream_node != inter_id:
                    raise ScenarioError(f"lane {m.to_lane}: upstream_node does not match {inter_id}")
                if m.key in seen:
                    raise ScenarioError(
                        f"intersection {inter_id}: ({m.from_lane}, {m.turn}) maps to more than one lane"
                    )
                seen.add(m.key)
            for lane_id in inter.incoming_lanes:
                if not inter.turns_from(lane_id):
                    raise ScenarioError(f"intersection {inter_id}: incoming lane {lane_id} has no movement")
        for s in self.sources + self.sinks:
            if s not in self.lanes:
                raise ScenarioError(f"unknown source/sink lane {s}")
        if set(self.sources) & set(self.sinks):
            raise ScenarioError(f"lanes are both source and sink: {sorted(set(self.sources) & set(self.sinks))}")
        for lane_id, lane in self.lanes.items():
            is_sink = lane_id in self.sinks
            owned = lane_id in incoming_owner
            if is_sink == owned:
                raise ScenarioError(
                    f"lane {lane_id} must be either a sink or incoming to exactly one intersection"
                )
            if is_sink and lane.downstream_node is not None:
                raise ScenarioError(f"sink lane {lane_id} has a downstream intersection")
        for src in self.sources:
            if not self._reaches_sink(src):
                raise ScenarioError(f"source {src} cannot reach any sink")

    def _reaches_sink(self, start: str) -> bool:
        sinks = set(self.sinks)
        todo, seen = deque([start]), {start}
        while todo:
            lane = todo.popleft()
            if lane in sinks:
                return True
            for m in self._outgoing.get(lane, ()):
                if m.to_lane not in seen:
                    seen.add(m.to_lane)
                    todo.append(m.to_lane)
        return False
