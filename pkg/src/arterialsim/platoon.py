"""Platoon lifecycle: formation, deceleration propagation, splits, dissolution.

The functions here are pure: they decide membership and parameter changes
and return them; the engine applies the results to its vehicle arrays. A
platoon moves through ``FORMING -> ACTIVE -> (SPLITTING -> ACTIVE)* ->
DISSOLVED``. Only followers get the tightened ``(tau, g_min)``; the leader
keeps its class values.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence


class PlatoonPhase(enum.Enum):
    FORMING = "forming"
    ACTIVE = "active"
    SPLITTING = "splitting"
    DISSOLVED = "dissolved"


_ALLOWED = {
    PlatoonPhase.FORMING: {PlatoonPhase.ACTIVE, PlatoonPhase.DISSOLVED},
    PlatoonPhase.ACTIVE: {PlatoonPhase.SPLITTING, PlatoonPhase.DISSOLVED},
    PlatoonPhase.SPLITTING: {PlatoonPhase.ACTIVE, PlatoonPhase.DISSOLVED},
    PlatoonPhase.DISSOLVED: set(),
}

EVENTS = ("form", "split_sensor", "split_green", "dissolve")


@dataclass(frozen=True)
class PlatoonConfig:
    """Platoon constants.

    Attributes:
        tau_platoon: follower reaction time inside a platoon [s]
        gmin_platoon: follower standstill gap inside a platoon [m]
        accel_boost: speed allowance above v_max for members, as a fraction
        comm_latency: delay of leader-to-member messages [s]
    """

    tau_platoon: float = 0.5
    gmin_platoon: float = 0.25
    accel_boost: float = 0.10
    comm_latency: float = 0.0

    def __post_init__(self):
        if not self.tau_platoon > 0 or not self.gmin_platoon > 0:
            raise ValueError("platoon gap parameters must be positive")
        if not 0.0 <= self.accel_boost <= 0.10:
            raise ValueError("accel_boost must lie in [0, 0.10]")
        if self.comm_latency < 0:
            raise ValueError("comm_latency must be >= 0")

    def check_against(self, smart_tau: float, smart_gmin: float) -> None:
        if not (self.tau_platoon < smart_tau and self.gmin_platoon < smart_gmin):
            raise ValueError("platoon gaps must be tighter than the smart class values")


@dataclass
class Platoon:
    id: int
    members: list
    lane: str
    shared_turn: str
    state: PlatoonPhase = PlatoonPhase.FORMING
    saved_params: dict = field(default_factory=dict)  # vid -> (tau, g_min)

    @property
    def leader(self) -> int:
        return self.members[0]

    @property
    def followers(self) -> list:
        return self.members[1:]

    def transition(self, new: PlatoonPhase) -> None:
        if new not in _ALLOWED[self.state]:
            raise RuntimeError(f"platoon {self.id}: illegal transition {self.state.value} -> {new.value}")
        self.state = new


class LaneVehicle(NamedTuple):
    """What formation needs to know about one vehicle on an approach lane."""

    id: int
    smart: bool
    next_turn: str | None
    free: bool  # not already in a platoon
    tau: float
    g_min: float


def find_runs(vehicles: Sequence[LaneVehicle]) -> list:
    """Maximal runs (start, stop) of adjacent free smart vehicles sharing a next turn."""
    runs = []
    i, n = 0, len(vehicles)
    while i < n:
        v = vehicles[i]
        if not (v.smart and v.free and v.next_turn is not None):
            i += 1
            continue
        j = i + 1
        while j < n:
            w = vehicles[j]
            if not (w.smart and w.free and w.next_turn == v.next_turn):
                break
            j += 1
        if j - i >= 2:
            runs.append((i, j))
        i = j
    return runs


def form_platoons(vehicles: Sequence[LaneVehicle], lane: str, first_id: int) -> list:
    """New platoons on one approach lane (vehicles front first).

    Returned platoons are ACTIVE and carry the saved ``(tau, g_min)`` of
    every member so dissolution can restore them exactly.
    """
    out = []
    for k, (i, j) in enumerate(find_runs(vehicles)):
        run = vehicles[i:j]
        p = Platoon(
            id=first_id + k,
            members=[v.id for v in run],
            lane=lane,
            shared_turn=run[0].next_turn,
            saved_params={v.id: (v.tau, v.g_min) for v in run},
        )
        p.transition(PlatoonPhase.ACTIVE)
        out.append(p)
    return out


class Directive(NamedTuple):
    apply_step: int
    vehicle: int
    speed_cap: float


def latency_steps(latency: float, dt: float) -> int:
    return int(round(latency / dt))


def propagate_deceleration(
    p: Platoon, leader_decelerating: bool, leader_speed: float, step: int, delay_steps: int
) -> list:
    """Speed-cap directives for every follower when the leader brakes."""
    if p.state is not PlatoonPhase.ACTIVE or not leader_decelerating:
        return []
    return [Directive(step + delay_steps, vid, leader_speed) for vid in p.followers]


def partition_by_turn(members: Sequence[int], turns: Mapping) -> list:
    """Maximal runs of consecutive members with the same next turn."""
    parts = []
    for vid in members:
        if parts and turns[parts[-1][-1]] == turns[vid]:
            parts[-1].append(vid)
        else:
            parts.append([vid])
    return parts


def split_at_sensors(p: Platoon, turns: Mapping, next_id: int) -> tuple:
    """Split ``p`` by the members' turns at the coming intersection.

    Returns ``(platoons, released)``: the surviving platoons front first (the
    first keeps ``p``'s id, later ones are numbered from ``next_id``) and the
    vehicles released as singletons together with their saved parameters.
    An unchanged platoon comes back as ``[p]`` with its shared turn set to
    the coming one.
    """
    parts = partition_by_turn(p.members, turns)
    if len(parts) == 1:
        p.shared_turn = turns[p.members[0]]
        return [p], []
    return _split_parts(p, parts, [turns[part[0]] for part in parts], next_id)


def _split_parts(p: Platoon, parts: list, part_turns: list, next_id: int) -> tuple:
    """Turn ``parts`` of ``p`` into platoons; singletons are released."""
    p.transition(PlatoonPhase.SPLITTING)
    saved = p.saved_params
    platoons, released = [], []
    nid = next_id
    for part, turn in zip(parts, part_turns):
        if len(part) < 2:
            released.append((part[0], saved[part[0]]))
            continue
        if not platoons:
            q = p
            q.members = list(part)
            q.shared_turn = turn
            q.saved_params = {v: saved[v] for v in part}
            q.transition(PlatoonPhase.ACTIVE)
        else:
            q = Platoon(nid, list(part), p.lane, turn, PlatoonPhase.ACTIVE, {v: saved[v] for v in part})
            nid += 1
        platoons.append(q)
    if not platoons:
        p.members = []
        p.saved_params = {}
        p.transition(PlatoonPhase.DISSOLVED)
    return platoons, released


def split_at_breaks(p: Platoon, adjacent: Callable[[int, int], bool], next_id: int) -> tuple:
    """Split ``p`` wherever two consecutive members are no longer adjacent.

    ``adjacent(a, b)`` tells whether ``b`` directly follows ``a``. Same
    return shape as :func:`split_at_sensors`; every part keeps the shared turn.
    """
    parts = [[p.members[0]]]
    for a, b in zip(p.members, p.members[1:]):
        if adjacent(a, b):
            parts[-1].append(b)
        else:
            parts.append([b])
    if len(parts) == 1:
        return [p], []
    return _split_parts(p, parts, [p.shared_turn] * len(parts), next_id)


def arrival_time(distance: float, v: float, a_max: float, v_cap: float) -> float:
    """Time to cover ``distance`` starting at ``v``, accelerating at ``a_max`` up to ``v_cap``."""
    if distance <= 0:
        return 0.0
    v = min(v, v_cap)
    if v_cap <= 0:
        return math.inf
    t_acc = (v_cap - v) / a_max
    d_acc = v * t_acc + 0.5 * a_max * t_acc * t_acc
    if distance <= d_acc:
        return (-v + math.sqrt(v * v + 2.0 * a_max * distance)) / a_max
    return t_acc + (distance - d_acc) / v_cap


def platoon_arrivals(distances, speeds, a_max, v_caps, lag: float) -> list:
    """Conservative stop-bar arrival times of platoon members, front first.

    A follower cannot arrive earlier than its predecessor plus ``lag``.
    """
    out = []
    prev = -math.inf
    for d, v, a, cap in zip(distances, speeds, a_max, v_caps):
        t = max(arrival_time(d, v, a, cap), prev + lag)
        out.append(t)
        prev = t
    return out


def green_prefix(arrivals: Sequence[float], remaining_green: float, dt: float) -> int:
    """Length of the longest prefix whose arrivals are all before ``remaining_green - dt``."""
    k = 0
    for t in arrivals:
        if t < remaining_green - dt:
            k += 1
        else:
            break
    return k


def split_for_green_window(p: Platoon, arrivals: Sequence[float], remaining_green: float, dt: float, next_id: int):
    """Split off the members that cannot reach the stop bar before the green ends.

    Returns ``(passing, remainder, released)``: the prefix length, the new
    platoon formed by the members left behind (``None`` if fewer than two)
    and the ``(vehicle, (tau, g_min))`` pairs of members that no longer
    belong to any platoon. An empty or full prefix leaves ``p`` untouched.
    """
    k = green_prefix(arrivals, remaining_green, dt)
    n = len(p.members)
    if k == 0 or k == n:
        return k, None, []
    p.transition(PlatoonPhase.SPLITTING)
    head, tail = p.members[:k], p.members[k:]
    saved = p.saved_params
    released = []
    rest = None
    if len(tail) >= 2:
        rest = Platoon(next_id, tail, p.lane, p.shared_turn, PlatoonPhase.ACTIVE, {v: saved[v] for v in tail})
    else:
        released.append((tail[0], saved[tail[0]]))
    if k >= 2:
        p.members = head
        p.saved_params = {v: saved[v] for v in head}
        p.transition(PlatoonPhase.ACTIVE)
    else:
        released.append((head[0], saved[head[0]]))
        p.members = []
        p.saved_params = {}
        p.transition(PlatoonPhase.DISSOLVED)
    return k, rest, released


def dissolve_on_red(p: Platoon) -> list:
    """Dissolve ``p``; returns ``(vehicle, (tau, g_min))`` pairs to restore. No-op once dissolved."""
    if p.state is PlatoonPhase.DISSOLVED:
        return []
    restore = [(vid, p.saved_params[vid]) for vid in p.members]
    p.members = []
    p.saved_params = {}
    p.transition(PlatoonPhase.DISSOLVED)
    return restore


class PlatoonEvent(NamedTuple):
    time_s: float
    platoon_id: int
    event: str
    member_count: int


def write_events_csv(path, events: Iterable[PlatoonEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PlatoonEvent._fields)
        for e in events:
            w.writerow([repr(float(e.time_s)), e.platoon_id, e.event, e.member_count])


def read_events_csv(path) -> list:
    with open(path, newline="") as fh:
        return [
            PlatoonEvent(float(r["time_s"]), int(r["platoon_id"]), r["event"], int(r["member_count"]))
            for r in csv.DictReader(fh)
        ]
