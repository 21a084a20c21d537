"""Deterministic discrete-time simulation loop.

Vehicles live in structure-of-arrays storage indexed by vehicle id; every
lane keeps a deque of ids, front first. One step runs, in this order:

1. sensing: queue estimates (every ``sensing.sample_period``)
2. signals: advance controllers, detect red/green onsets, commit vehicles
   that cannot stop at red onset
3. platoons: dissolve on red, sensor splits, formation, green-window splits,
   deceleration directives
4. car-following for every vehicle against its leader context
5. integration and detector crossings
6. transfer across lane ends, despawn at sinks
7. spawn at sources

The clock is ``step_count * dt``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import chain
from typing import NamedTuple

import numpy as np

from . import platoon as pl
from .carfollow import VehicleClassParams, iidm_accel_array, krauss_safe_speed_array, krauss_update
from .demand import RouteSampler, UniformStream, rng_stream, shortest_routes, spawn_step
from .network import ScenarioError
from .scenario import ScenarioConfig, queue_capacity, validate
from .sensing import Detector, DetectorPair, QueueEstimate, crossing_time, estimate_queue
from .signal import Controller, UnsupportedModeError, request_extension

_KEY = 1.0e5  # lane stride for detector keys; lanes must be shorter
_INF = math.inf
_MIN_LOOKAHEAD_GAP = 1e-3


class SimulationInvariantError(RuntimeError):
    """An engine invariant broke; ``dump`` holds the offending state."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class BlockingVehicle(NamedTuple):
    """Virtual stopped leader that models a red light for car-following."""

    lane: str
    x_b: float
    v: float = 0.0
    virtual: bool = True


def place_blocking(lane: str, x_s: float, p: VehicleClassParams) -> BlockingVehicle:
    """Blocker whose rear sits ``g_min`` past the stop bar: ``x_b = x_s + g_min + l``."""
    return BlockingVehicle(lane, x_s + p.g_min + p.l)


def queue_initializer(lane, n, p: VehicleClassParams) -> list:
    """Front positions of ``n`` standing vehicles packed back from the stop bar.

    ``n == "fill"`` packs the lane to capacity.
    """
    cap = queue_capacity(lane, p)
    if n == "fill":
        n = cap
    if n > cap:
        raise ScenarioError(f"lane {lane.id}: {n} vehicles exceed queue capacity {cap}")
    step = p.l + p.g_min
    return [lane.stop_bar_position - k * step for k in range(n)]


def entry_speed(room: float, v_tail: float, tau: float, b: float) -> float:
    """Largest insertion speed that can still stop behind the lane tail.

    Solves ``v*tau + v^2/(2b) = room + v_tail^2/(2b)`` for ``v``, where
    ``room`` is the net gap beyond ``g_min``.
    """
    reach = room + v_tail * v_tail / (2.0 * b)
    return b * (-tau + math.sqrt(tau * tau + 2.0 * reach / b))


@dataclass
class Counters:
    generated: int = 0  # Bernoulli successes at sources
    spawned: int = 0  # inserted by sources
    suppressed: int = 0  # generated but no room at the entry
    initial: int = 0  # placed by queue initializers
    replenished: int = 0  # re-inserted at the tail of "fill" queues
    exited: int = 0
    transfer_refused: int = 0
    green_window_violations: int = 0

    def in_network(self) -> int:
        return self.initial + self.spawned + self.replenished - self.exited


@dataclass
class SimResult:
    """Everything a run produces."""

    config: ScenarioConfig
    steps: int
    clock: float
    counters: Counters
    detectors: dict
    queue_times: list
    queue_series: dict  # lane -> list of (count, clamped)
    platoon_events: list
    decisions: dict  # intersection -> max-pressure decision log
    exits: list  # (vehicle id, time)
    trajectory_hash: int
    in_network: int
    trajectories: list | None = None
    restoration_failures: int = 0
    platoon_partition_failures: int = 0

    @property
    def hash_hex(self) -> str:
        return f"{self.trajectory_hash:016x}"

    def crossings(self, detector_id: str) -> list:
        return self.detectors[detector_id].times


class _Storage:
    """Growable per-vehicle arrays."""

    FLOAT = ("x", "v", "a", "tau", "gmin", "amax", "b", "vmax", "l", "eps", "d1", "d2", "base_tau", "base_gmin", "vsafe")
    INT = ("lane", "ridx", "mv", "platoon")
    BOOL = ("smart", "alive", "committed", "admitted")

    def __init__(self, cap: int = 1024):
        self.cap = cap
        for name in self.FLOAT:
            setattr(self, name, np.zeros(cap))
        for name in self.INT:
            setattr(self, name, np.full(cap, -1, dtype=np.int64))
        for name in self.BOOL:
            setattr(self, name, np.zeros(cap, dtype=bool))
        self.route = []
        self.spawn_t = []
        self.n = 0

    def add(self) -> int:
        if self.n == self.cap:
            new = self.cap * 2
            for name in self.FLOAT + self.INT + self.BOOL:
                old = getattr(self, name)
                arr = np.zeros(new, dtype=old.dtype) if name not in self.INT else np.full(new, -1, dtype=np.int64)
                arr[: self.cap] = old
                setattr(self, name, arr)
            self.cap = new
        vid = self.n
        self.n += 1
        self.route.append(None)
        self.spawn_t.append(0.0)
        return vid


class SimState:
    """Mutable simulation state for one scenario."""

    def __init__(self, cfg: ScenarioConfig, *, record_trajectories: bool = False, trajectory_every: int = 1,
                 check_invariants: bool = True):
        validate(cfg)
        self.cfg = cfg
        self.dt = cfg.dt
        self.step_count = 0
        self.counters = Counters()
        self.check = check_invariants
        net = cfg.network
        self.net = net
        self.lane_ids = list(net.lanes)
        self.lane_index = {lid: i for i, lid in enumerate(self.lane_ids)}
        nl = len(self.lane_ids)
        for lane in net.lanes.values():
            if lane.length >= _KEY:
                raise ScenarioError(f"lane {lane.id}: length must be below {_KEY:g} m")
        self.lane_len = np.array([net.lanes[l].length for l in self.lane_ids])
        self.lane_stop = np.array([net.lanes[l].stop_bar_position for l in self.lane_ids])
        self.lane_limit = np.array([net.lanes[l].speed_limit for l in self.lane_ids])
        self.is_sink = np.array([l in set(net.sinks) for l in self.lane_ids])
        self.lanes = [deque() for _ in range(nl)]
        self.veh = _Storage()

        # movements: index per (from, to) lane pair
        self.mv_index = {}
        self.mv_key = []
        self.mv_turn = []
        self.mv_ctrl = []
        ctrl_ids = sorted(cfg.signal_plans)
        self.controllers = [Controller(k, cfg.signal_plans[k]) for k in ctrl_ids]
        ctrl_of = {k: i for i, k in enumerate(ctrl_ids)}
        for inter in net.intersections.values():
            for m in inter.movements:
                idx = len(self.mv_key)
                self.mv_index[(self.lane_index[m.from_lane], self.lane_index[m.to_lane])] = idx
                self.mv_key.append(m.key)
                self.mv_turn.append(m.turn)
                self.mv_ctrl.append(ctrl_of.get(inter.id, -1))
        nm = len(self.mv_key)
        self.mv_green = np.ones(nm, dtype=bool)
        self.ctrl_mvs = [np.array([i for i in range(nm) if self.mv_ctrl[i] == c], dtype=np.int64) for c in range(len(ctrl_ids))]
        self.ctrl_phase_mvs = []
        key_to_mv = {(self.mv_ctrl[i], self.mv_key[i]): i for i in range(nm)}
        for c, ctl in enumerate(self.controllers):
            self.ctrl_phase_mvs.append(
                [np.array(sorted(key_to_mv[(c, k)] for k in ph.green_movements), dtype=np.int64) for ph in ctl.plan.phases]
            )
        # approach lanes of signalized intersections
        self.approach_ctrl = {}
        for c, k in enumerate(ctrl_ids):
            for lid in net.intersections[k].incoming_lanes:
                self.approach_ctrl[self.lane_index[lid]] = c

        # detectors: stop bar on every incoming lane of an intersection, pair upstream sensor
        sc = cfg.sensing
        ref = cfg.class_params["manual"]
        self.detectors = {}
        self.pairs = {}
        det_list = []
        for inter in net.intersections.values():
            for lid in inter.incoming_lanes:
                lane = net.lanes[lid]
                li = self.lane_index[lid]
                stop = Detector(f"{lid}/stop", lid, lane.stop_bar_position)
                up_pos = max(lane.stop_bar_position - sc.pair_spacing, min(1.0, lane.stop_bar_position / 2))
                pair = DetectorPair(f"{lid}/pair", lid, up_pos, lane.stop_bar_position, ref.l, ref.g_min, sc.noise, sc.footprint)
                up = Detector(f"{lid}/up", lid, up_pos)
                self.detectors[stop.id] = stop
                self.detectors[up.id] = up
                self.pairs[li] = pair
                det_list += [(li, stop, "stop"), (li, up, "up")]
        det_list.sort(key=lambda d: d[0] * _KEY + d[1].position)
        self.det_keys = np.array([li * _KEY + d.position for li, d, _ in det_list])
        self.det_objs = [d for _, d, _ in det_list]
        self.det_kind = [k for _, _, k in det_list]
        self.stop_passed = set()
        self.up_passed = []

        # queue estimates
        self.sample_steps = int(round(sc.sample_period / cfg.dt))
        self.queue_times = []
        self.queue_series = {self.lane_ids[li]: [] for li in sorted(self.pairs)}
        self.latest_queue = {li: 0 for li in self.pairs}
        self.noise_rng = rng_stream(cfg.seed, "sensing")

        # demand
        self.sources = []
        for flow in cfg.demand:
            li = self.lane_index[flow.source_lane]
            spawn_draw = UniformStream(rng_stream(cfg.seed, f"spawn:{flow.source_lane}"))
            route_draw = UniformStream(rng_stream(cfg.seed, f"route:{flow.source_lane}"))
            self.sources.append((li, flow, spawn_draw, RouteSampler(flow, net, route_draw)))
        self.driver_rng = rng_stream(cfg.seed, "driver")
        self.any_eps = any(p.eps > 0 for p in cfg.class_params.values())

        # platoons
        self.platoons = {}
        self.next_platoon_id = 0
        self.platoon_events = []
        self.directives = deque()
        self.delay_steps = pl.latency_steps(cfg.platoon.comm_latency, cfg.dt)
        self.restoration_failures = 0
        self.partition_failures = 0

        self.exits = []
        self._hash = hashlib.blake2b(digest_size=8)
        self.record = record_trajectories
        self.traj_every = max(1, int(trajectory_every))
        self.trajectories = [] if record_trajectories else None

        for c in self.controllers:
            c.start(0.0)
        self._refresh_green()
        self._place_initial_queues()

    # ------------------------------------------------------------------ setup

    @property
    def clock(self) -> float:
        return self.step_count * self.dt

    def _new_vehicle(self, li: int, x: float, cls: str, route: tuple, t: float) -> int:
        p = self.cfg.class_params[cls]
        s = self.veh
        vid = s.add()
        s.x[vid] = x
        s.v[vid] = 0.0
        s.a[vid] = 0.0
        s.lane[vid] = li
        s.tau[vid] = s.base_tau[vid] = p.tau
        s.gmin[vid] = s.base_gmin[vid] = p.g_min
        s.amax[vid], s.b[vid], s.vmax[vid], s.l[vid] = p.a_max, p.b, p.v_max, p.l
        s.eps[vid], s.d1[vid], s.d2[vid] = p.eps, p.delta1, p.delta2
        s.smart[vid] = cls == "smart"
        s.alive[vid] = True
        s.committed[vid] = False
        s.admitted[vid] = False
        s.platoon[vid] = -1
        s.vsafe[vid] = _INF
        idx = tuple(self.lane_index[l] for l in route)
        s.route[vid] = idx
        s.ridx[vid] = 0
        s.mv[vid] = self._movement_of(idx, 0)
        s.spawn_t[vid] = t
        self.lanes[li].append(vid)
        return vid

    def _movement_of(self, route: tuple, i: int) -> int:
        if i + 1 >= len(route):
            return -1
        return self.mv_index[(route[i], route[i + 1])]

    def _place_initial_queues(self) -> None:
        samplers = {li: sampler for li, _, _, sampler in self.sources}
        self.fill_lanes = []
        for q in self.cfg.initial_queues:
            li = self.lane_index[q.lane]
            lane = self.net.lanes[q.lane]
            p = self.cfg.class_params[q.cls]
            sampler = samplers.get(li)
            fallback = None
            if sampler is None:
                routes = shortest_routes(self.net, q.lane)
                if not routes:
                    raise ScenarioError(f"queues: lane {q.lane} reaches no sink")
                fallback = routes[min(routes)]
            if self.lanes[li]:
                raise ScenarioError(f"queues: lane {q.lane} initialised twice")
            xs = queue_initializer(lane, q.n, p)
            for x in xs:
                route = sampler() if sampler is not None else fallback
                self._new_vehicle(li, x, q.cls, route, 0.0)
                self.counters.initial += 1
            if q.n == "fill" and xs:
                self.fill_lanes.append((li, xs[-1], q.cls, sampler, fallback))

    # ---------------------------------------------------------------- helpers

    def lane_vehicles(self, lane_id: str) -> list:
        return list(self.lanes[self.lane_index[lane_id]])

    def in_network(self) -> int:
        return sum(len(d) for d in self.lanes)

    def _refresh_green(self) -> np.ndarray:
        prev = self.mv_green.copy()
        g = self.mv_green
        for c, ctl in enumerate(self.controllers):
            g[self.ctrl_mvs[c]] = False
            ph = ctl.green_phase
            if ph is not None:
                g[self.ctrl_phase_mvs[c][ph]] = True
        return prev

    def _dump(self, reason: str) -> dict:
        s = self.veh
        return {
            "reason": reason,
            "clock": self.clock,
            "step": self.step_count,
            "lanes": {
                self.lane_ids[li]: [(int(v), float(s.x[v]), float(s.v[v]), float(s.l[v])) for v in d]
                for li, d in enumerate(self.lanes)
                if d
            },
            "counters": vars(self.counters).copy(),
        }

    # ------------------------------------------------------------------ step

    def step(self) -> None:
        k = self.step_count
        dt = self.dt
        t = k * dt
        # (1) sensing
        if k % self.sample_steps == 0:
            self._sample_queues(t)
        # (2) signals
        red_lanes, green_lanes = self._signal_step(t, dt)
        # (3) platoons
        if self.cfg.platooning_enabled:
            self._platoon_step(t, dt, red_lanes, green_lanes)
        # (4)-(6) car-following, integration and transfers
        self._move(t, dt)
        if self.cfg.platooning_enabled:
            # a vehicle merging between members breaks the platoon there
            for p in list(self.platoons.values()):
                self._maintain(p, t + dt)
        # (7) spawn
        self._spawn(t + dt)
        self.step_count = k + 1

    # (1) ---------------------------------------------------------------------

    def _sample_queues(self, t: float) -> None:
        s = self.veh
        self.queue_times.append(t)
        for li, pair in self.pairs.items():
            ids = self.lanes[li]
            if ids:
                arr = np.fromiter(ids, dtype=np.int64, count=len(ids))
                est = estimate_queue(pair, s.x[arr], s.l[arr], self.noise_rng, t)
            else:
                est = estimate_queue(pair, (), (), self.noise_rng, t)
            self.latest_queue[li] = est.count
            self.queue_series[pair.lane].append((est.count, est.clamped))

    def _movement_queues(self, c: int) -> dict:
        out = {}
        li_of = self.lane_index
        for i in self.ctrl_mvs[c]:
            frm, turn = self.mv_key[i]
            to = self._mv_to[i]
            out[(frm, turn)] = (float(self.latest_queue.get(li_of[frm], 0)), float(self.latest_queue.get(to, 0)))
        return out

    @property
    def _mv_to(self) -> list:
        cache = getattr(self, "_mv_to_cache", None)
        if cache is None:
            cache = [0] * len(self.mv_key)
            for (frm, to), i in self.mv_index.items():
                cache[i] = to
            self._mv_to_cache = cache
        return cache

    # (2) ---------------------------------------------------------------------

    def _occupancy(self, c: int) -> dict:
        s = self.veh
        out = {}
        inter = self.net.intersections[self.controllers[c].id]
        half = self.cfg.sensing.footprint / 2.0
        for lid in inter.incoming_lanes:
            li = self.lane_index[lid]
            occ = li in self.stop_passed
            if not occ:
                xs = self.lane_stop[li]
                for vid in self.lanes[li]:
                    if s.x[vid] < xs - half:
                        break
                    if s.x[vid] - s.l[vid] <= xs + half:
                        occ = True
                        break
            out[lid] = occ
        return out

    def _signal_step(self, t: float, dt: float):
        for c, ctl in enumerate(self.controllers):
            if ctl.mode == "fixed":
                ctl.advance(t, dt)
            elif ctl.mode == "actuated":
                ctl.advance(t, dt, occupancy=self._occupancy(c))
            else:
                ctl.advance(t, dt, queues=self._movement_queues(c))
        self.stop_passed = set()
        prev = self._refresh_green()
        now = self.mv_green
        changed = np.flatnonzero(prev != now)
        if changed.size == 0:
            return (), ()
        red_lanes, green_lanes = set(), set()
        lane_of = self.lane_index
        for i in changed:
            li = lane_of[self.mv_key[i][0]]
            (green_lanes if now[i] else red_lanes).add(li)
        s = self.veh
        for li in sorted(green_lanes):
            for vid in self.lanes[li]:
                s.committed[vid] = False
        for li in sorted(red_lanes):
            self._commit_at_red(li)
        return sorted(red_lanes), sorted(green_lanes)

    def _commit_at_red(self, li: int) -> None:
        """Vehicles that cannot stop for the new red keep going; the scan stops at the first that can."""
        s = self.veh
        xs = self.lane_stop[li]
        dt = self.dt
        green = self.mv_green
        iidm = self.cfg.cf_model == "iidm"
        for vid in self.lanes[li]:
            if s.x[vid] > xs or s.committed[vid]:
                continue
            if s.mv[vid] < 0 or green[s.mv[vid]]:
                break
            v = s.v[vid]
            if iidm:
                a = float(iidm_accel_array(v, 0.0, xs + s.gmin[vid] - s.x[vid], s.amax[vid], s.b[vid], s.tau[vid],
                                           s.gmin[vid], s.vmax[vid], s.d1[vid], s.d2[vid]))
                cannot_stop = a < -s.b[vid]
            else:
                vb = float(krauss_safe_speed_array(v, 0.0, xs - s.x[vid], s.tau[vid], s.b[vid]))
                cannot_stop = v > vb + s.b[vid] * dt
            if not cannot_stop:
                break
            s.committed[vid] = True

    # (3) ---------------------------------------------------------------------

    def _event(self, t, pid, kind, n):
        self.platoon_events.append(pl.PlatoonEvent(t, pid, kind, n))

    def _restore(self, pairs) -> None:
        s = self.veh
        for vid, (tau, gmin) in pairs:
            s.tau[vid] = tau
            s.gmin[vid] = gmin
            s.platoon[vid] = -1
            s.admitted[vid] = False

    def _apply_members(self, p: pl.Platoon) -> None:
        """Leader keeps its own values, followers get the platoon gaps."""
        s = self.veh
        cfg = self.cfg.platoon
        for i, vid in enumerate(p.members):
            s.platoon[vid] = p.id
            if i == 0:
                s.tau[vid], s.gmin[vid] = p.saved_params[vid]
            else:
                s.tau[vid] = cfg.tau_platoon
                s.gmin[vid] = cfg.gmin_platoon

    def _dissolve(self, p: pl.Platoon, t: float) -> None:
        n = len(p.members)
        self._restore(pl.dissolve_on_red(p))
        self.platoons.pop(p.id, None)
        self._event(t, p.id, "dissolve", n)

    def _turn_at(self, vid: int, approach_lane: int) -> str | None:
        """Turn ``vid`` takes when leaving ``approach_lane``."""
        route = self.veh.route[vid]
        r = int(self.veh.ridx[vid])
        for i in range(r, len(route) - 1):
            if route[i] == approach_lane:
                return self.mv_turn[self.mv_index[(route[i], route[i + 1])]]
        return None

    def _lane_candidates(self, li: int) -> list:
        s = self.veh
        out = []
        for vid in self.lanes[li]:
            mv = s.mv[vid]
            out.append(
                pl.LaneVehicle(int(vid), bool(s.smart[vid]), self.mv_turn[mv] if mv >= 0 else None,
                               s.platoon[vid] < 0, float(s.tau[vid]), float(s.gmin[vid]))
            )
        return out

    def _form(self, li: int, t: float) -> None:
        if li not in self.approach_ctrl:
            return
        new = pl.form_platoons(self._lane_candidates(li), self.lane_ids[li], self.next_platoon_id)
        for p in new:
            self.next_platoon_id = p.id + 1
            self.platoons[p.id] = p
            self._apply_members(p)
            self._event(t, p.id, "form", len(p.members))

    def _neighbour(self, vid: int, ahead: bool) -> int:
        d = self.lanes[self.veh.lane[vid]]
        i = d.index(vid)
        j = i - 1 if ahead else i + 1
        if 0 <= j < len(d):
            return d[j]
        return -1

    def _adjacent(self, a: int, b: int) -> bool:
        """Whether ``b`` directly follows ``a``, on one lane or across a lane boundary."""
        s = self.veh
        la, lb = int(s.lane[a]), int(s.lane[b])
        if la == lb:
            d = self.lanes[la]
            return d.index(b) == d.index(a) + 1
        return self.lanes[la][-1] == a and self.lanes[lb][0] == b

    def _maintain(self, p: pl.Platoon, t: float) -> None:
        """Split ``p`` where another vehicle has come between two members."""
        parts, released = pl.split_at_breaks(p, self._adjacent, self.next_platoon_id)
        if parts == [p] and not released:
            return
        self._restore(released)
        for q in parts:
            self.next_platoon_id = max(self.next_platoon_id, q.id + 1)
            self.platoons[q.id] = q
            self._apply_members(q)
            q.lane = self.lane_ids[int(self.veh.lane[q.members[-1]])]
        if p.id not in {q.id for q in parts}:
            self.platoons.pop(p.id, None)
        self._event(t, p.id, "split_break", len(parts))

    def _try_join(self, p: pl.Platoon, approach: int, ahead: bool) -> None:
        s = self.veh
        while True:
            edge = p.members[0] if ahead else p.members[-1]
            cand = self._neighbour(edge, ahead)
            if cand < 0 or not s.smart[cand] or s.platoon[cand] >= 0:
                return
            if self._turn_at(cand, approach) != p.shared_turn:
                return
            p.saved_params[cand] = (float(s.tau[cand]), float(s.gmin[cand]))
            if ahead:
                p.members.insert(0, int(cand))
            else:
                p.members.append(int(cand))
            self._apply_members(p)

    def _sensor_split(self, p: pl.Platoon, t: float) -> None:
        s = self.veh
        approach = int(s.lane[p.leader])
        turns = {vid: self._turn_at(vid, approach) for vid in p.members}
        if any(v is None for v in turns.values()):
            return
        parts, released = pl.split_at_sensors(p, turns, self.next_platoon_id)
        self._restore(released)
        for q in parts:
            if q.id >= self.next_platoon_id:
                self.next_platoon_id = q.id + 1
            self.platoons[q.id] = q
            q.lane = self.lane_ids[int(s.lane[q.members[-1]])]
        if p.id not in {q.id for q in parts}:
            self.platoons.pop(p.id, None)
        if len(parts) != 1 or released:
            self._event(t, p.id, "split_sensor", len(parts))
        if parts:
            self._try_join(parts[0], approach, ahead=True)
            self._try_join(parts[-1], approach, ahead=False)
            for q in parts:
                self._apply_members(q)
                q.lane = self.lane_ids[int(s.lane[q.members[-1]])]

    def _green_window(self, p: pl.Platoon, t: float, dt: float) -> None:
        """Admit the members that clear the rear's stop bar before the green ends; split off the rest."""
        s = self.veh
        li = int(s.lane[p.members[-1]])
        c = self.approach_ctrl.get(li)
        if c is None:
            return
        xs = self.lane_stop[li]
        waiting = [i for i, vid in enumerate(p.members) if int(s.lane[vid]) == li and s.x[vid] <= xs]
        if not waiting:
            return
        first = p.members[waiting[0]]
        mv = s.mv[first]
        if mv < 0 or not self.mv_green[mv]:
            return
        if s.platoon[self.lanes[li][0]] != p.id:
            return  # a vehicle outside the platoon controls when the members clear
        ctl = self.controllers[c]
        cfgp = self.cfg.platoon
        lead = p.leader
        # followers obey the leader's speed while it brakes
        lead_cap = float(s.v[lead]) if s.a[lead] < 0 else math.inf
        dists, speeds, acc, caps = [], [], [], []
        for i in waiting:
            vid = p.members[i]
            dists.append(float(xs - s.x[vid]))
            speeds.append(float(s.v[vid]))
            acc.append(float(s.amax[vid]))
            cap = float(s.vmax[vid] * (1.0 + cfgp.accel_boost))
            caps.append(cap if vid == lead else min(cap, max(lead_cap, float(s.v[vid]))))
        lag = cfgp.tau_platoon + (cfgp.gmin_platoon + float(s.l[first])) / max(caps)
        est = pl.platoon_arrivals(dists, speeds, acc, caps, lag)
        arrivals = [0.0] * len(p.members)
        for j, i in enumerate(waiting):
            arrivals[i] = est[j]
        # only members that fit on the next lane as it is now are admitted; its
        # tail never moves back, so current room is a lower bound. The others
        # stay in the platoon and are reconsidered next step.
        nl = s.route[first][int(s.ridx[first]) + 1]
        dest = self.lanes[nl]
        room = s.x[dest[-1]] - s.l[dest[-1]] if dest else self.lane_len[nl]
        fit = int(max(0.0, room - float(s.l[first])) // (float(s.l[first]) + cfgp.gmin_platoon))
        admit = waiting[fit] if fit < len(waiting) else len(p.members)
        remaining = ctl.remaining_green()
        if ctl.mode != "fixed" and pl.green_prefix(arrivals, remaining, dt) < len(p.members):
            needed = arrivals[-1] - (remaining - dt) + dt
            opposing = self._opposing_pressure(c)
            try:
                if request_extension(ctl.state, len(p.members), opposing, needed) > 0:
                    remaining = ctl.remaining_green()
            except UnsupportedModeError:
                pass
        members = list(p.members)
        k, rest, released = pl.split_for_green_window(p, arrivals, remaining, dt, self.next_platoon_id)
        for i in waiting:
            if i < min(k, admit):
                s.admitted[members[i]] = True
        if rest is None and not released:
            return
        self._restore(released)
        if rest is not None:
            self.next_platoon_id = rest.id + 1
            self.platoons[rest.id] = rest
            self._apply_members(rest)
            rest.lane = self.lane_ids[int(s.lane[rest.members[-1]])]
        if p.state is pl.PlatoonPhase.DISSOLVED:
            self.platoons.pop(p.id, None)
        else:
            self._apply_members(p)
            p.lane = self.lane_ids[int(s.lane[p.members[-1]])]
        self._event(t, p.id, "split_green", k)

    def _opposing_pressure(self, c: int) -> float:
        ctl = self.controllers[c]
        ph = ctl.green_phase
        lanes = set()
        for i, phase in enumerate(ctl.plan.phases):
            if i != ph:
                lanes |= phase.lanes
        return float(sum(self.latest_queue.get(self.lane_index[l], 0) for l in lanes))

    def _platoon_step(self, t: float, dt: float, red_lanes, green_lanes) -> None:
        s = self.veh
        # dissolve platoons whose rear is on a lane that just turned red
        for li in red_lanes:
            xs = self.lane_stop[li]
            for vid in self.lanes[li]:
                if s.admitted[vid] and s.x[vid] <= xs and not s.committed[vid]:
                    self.counters.green_window_violations += 1
            for p in list(self.platoons.values()):
                if int(s.lane[p.members[-1]]) == li:
                    self._dissolve(p, t)
        # sensor-triggered splits for leaders that passed an upstream sensor
        if self.up_passed:
            leaders = {p.leader: p for p in self.platoons.values()}
            for vid in self.up_passed:
                p = leaders.get(vid)
                if p is not None and p.id in self.platoons:
                    self._sensor_split(p, t)
            self.up_passed = []
        # formation: lanes that just turned green and lanes whose green starts next
        triggers = set(green_lanes)
        for c, ctl in enumerate(self.controllers):
            if ctl.mode != "fixed" or ctl.green_phase is None:
                continue
            if ctl.remaining_green() <= dt + 1e-9:
                nxt = (ctl.green_phase + 1) % len(ctl.plan.phases)
                for lid in ctl.plan.phases[nxt].lanes:
                    triggers.add(self.lane_index[lid])
        for li in sorted(triggers):
            self._form(li, t)
        # green-window prefix splits and extension requests
        for p in list(self.platoons.values()):
            if p.id in self.platoons and len(p.members) >= 2:
                self._green_window(p, t, dt)
        # deceleration directives
        for p in self.platoons.values():
            lead = p.leader
            for d in pl.propagate_deceleration(p, s.a[lead] < 0, float(s.v[lead]), self.step_count, self.delay_steps):
                self.directives.append(d)

    def _leave_platoon(self, vid: int, t: float) -> None:
        s = self.veh
        pid = int(s.platoon[vid])
        p = self.platoons.get(pid)
        s.platoon[vid] = -1
        if p is None:
            return
        saved = p.saved_params.pop(vid)
        s.tau[vid], s.gmin[vid] = saved
        p.members.remove(vid)
        if len(p.members) < 2:
            self._dissolve(p, t)
        else:
            self._apply_members(p)

    # (4)-(6) -----------------------------------------------------------------

    def _move(self, t: float, dt: float) -> None:
        s = self.veh
        lanes = self.lanes
        sizes = [len(d) for d in lanes]
        n = sum(sizes)
        if n == 0:
            self._hash.update(np.int64(self.step_count).tobytes())
            return
        order = np.fromiter(chain.from_iterable(lanes), dtype=np.int64, count=n)
        starts = np.cumsum([0] + sizes[:-1])
        nonempty = [li for li, m in enumerate(sizes) if m]
        head_pos = starts[nonempty]
        leader = np.empty(n, dtype=np.int64)
        leader[0] = -1
        leader[1:] = order[:-1]
        leader[head_pos] = -1
        has = leader >= 0
        ld = np.where(has, leader, 0)
        x = s.x[order]
        v = s.v[order]
        gap = np.where(has, s.x[ld] - s.l[ld] - x, _INF)
        vl = np.where(has, s.v[ld], 0.0)
        if self.check and n > 1:
            bad = has & (gap <= 0.0)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SimulationInvariantError(
                    f"non-positive gap {gap[i]:.6g} m behind vehicle {int(leader[i])} at t={t:.3f}",
                    self._dump("overlap"),
                )
        blk, gb = self._head_contexts(order, starts, nonempty, gap, vl)

        tau, gmin, amax, b = s.tau[order], s.gmin[order], s.amax[order], s.b[order]
        vmax = s.vmax[order]
        if self.cfg.platooning_enabled:
            vmax = np.where(s.platoon[order] >= 0, vmax * (1.0 + self.cfg.platoon.accel_boost), vmax)
        cap = self._directive_caps(order)
        if self.cfg.cf_model == "krauss":
            vsafe = krauss_safe_speed_array(v, vl, gap - gmin, tau, b)
            if blk.size:
                vsafe[blk] = np.minimum(vsafe[blk], krauss_safe_speed_array(v[blk], 0.0, gb - gmin[blk], tau[blk], b[blk]))
            if self.any_eps:
                u = self.driver_rng.random(n)
            else:
                u = 0.0
            v_new = krauss_update(v, vsafe, amax, vmax, b, s.eps[order], u, dt)
            if cap is not None:
                v_new = np.minimum(v_new, cap)
            s.vsafe[order] = vsafe
            a = (v_new - v) / dt
            dx = v_new * dt
        else:
            d1, d2 = s.d1[order], s.d2[order]
            a = iidm_accel_array(v, vl, gap, amax, b, tau, gmin, vmax, d1, d2)
            if blk.size:
                a[blk] = np.minimum(a[blk], iidm_accel_array(v[blk], 0.0, gb, amax[blk], b[blk], tau[blk], gmin[blk],
                                                             vmax[blk], d1[blk], d2[blk]))
            if cap is not None:
                a = np.minimum(a, (cap - v) / dt)
            v_new = v + a * dt
            neg = v_new < 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                dx = np.where(neg, -v * v / (2.0 * np.where(neg, a, -1.0)), v * dt + 0.5 * a * dt * dt)
            v_new = np.maximum(v_new, 0.0)
        x_new = x + dx
        s.x[order] = x_new
        s.v[order] = v_new
        s.a[order] = a
        self._record_crossings(order, x, x_new, t, dt)
        h = self._hash
        h.update(order.tobytes())
        h.update(x_new.tobytes())
        h.update(v_new.tobytes())
        if self.record and self.step_count % self.traj_every == 0:
            self.trajectories.append((t + dt, order.copy(), s.lane[order].copy(), x_new.copy(), v_new.copy(), np.asarray(a).copy()))
        self._transfer(order, x_new, t, dt)

    def _head_contexts(self, order, starts, nonempty, gap, vl):
        """Leader context of every lane head; returns red-light blocker positions and gaps.

        The blocker is a second, independent constraint: a vehicle waiting at
        red may also see a moving vehicle on its next lane.
        """
        s = self.veh
        X, V, Lv = s.x, s.v, s.l
        lanes = self.lanes
        lane_len = self.lane_len
        lane_stop = self.lane_stop
        green = self.mv_green
        lookahead = self.cfg.lookahead
        is_sink = self.is_sink
        blk_pos, blk_gap = [], []
        for li in nonempty:
            if is_sink[li]:
                continue
            d = lanes[li]
            pos = int(starts[li])
            head = d[0]
            route = s.route[head]
            r = int(s.ridx[head]) + 1
            dist = lane_len[li] - X[head]
            while r < len(route) and dist <= lookahead:
                nxt = lanes[route[r]]
                if nxt:
                    tail = nxt[-1]
                    # a vehicle merging from another approach can sit right at the lane start
                    gap[pos] = max(dist + X[tail] - Lv[tail], _MIN_LOOKAHEAD_GAP)
                    vl[pos] = V[tail]
                    break
                dist += lane_len[route[r]]
                r += 1
            xs = lane_stop[li]
            j = 0
            for vid in d:
                if X[vid] > xs or s.committed[vid]:
                    j += 1
                    continue
                mv = s.mv[vid]
                if mv >= 0 and not green[mv]:
                    blk_pos.append(pos + j)
                    blk_gap.append(xs + s.gmin[vid] - X[vid])
                break
        return np.array(blk_pos, dtype=np.int64), np.array(blk_gap)

    def _directive_caps(self, order):
        if not self.directives:
            return None
        k = self.step_count
        caps = {}
        keep = deque()
        while self.directives:
            d = self.directives.popleft()
            if d.apply_step == k:
                caps[d.vehicle] = min(caps.get(d.vehicle, _INF), d.speed_cap)
            elif d.apply_step > k:
                keep.append(d)
        self.directives = keep
        if not caps:
            return None
        s = self.veh
        cap = np.full(len(order), _INF)
        pos = {int(v): i for i, v in enumerate(order)}
        for vid, c in caps.items():
            if s.alive[vid] and s.platoon[vid] >= 0 and vid in pos:
                cap[pos[vid]] = c
        return cap

    def _record_crossings(self, order, x_old, x_new, t, dt) -> None:
        if not len(self.det_keys):
            return
        moving = np.flatnonzero(x_new > x_old)
        if moving.size == 0:
            return
        base = self.veh.lane[order[moving]] * _KEY
        lo = np.searchsorted(self.det_keys, base + x_old[moving], side="left")
        hi = np.searchsorted(self.det_keys, base + x_new[moving], side="left")
        hits = np.flatnonzero(hi > lo)
        for h in hits:
            i = moving[h]
            vid = int(order[i])
            for j in range(lo[h], hi[h]):
                det = self.det_objs[j]
                det.log.append((vid, crossing_time(t, dt, x_old[i], x_new[i], det.position)))
                if self.det_kind[j] == "stop":
                    self.stop_passed.add(self.lane_index[det.lane])
                else:
                    self.up_passed.append(vid)

    def _transfer(self, order, x_new, t, dt) -> None:
        s = self.veh
        lane_len = self.lane_len
        over = np.flatnonzero(x_new > lane_len[s.lane[order]])
        if over.size == 0:
            return
        lanes = self.lanes
        for i in over:
            vid = int(order[i])
            li = int(s.lane[vid])
            L = lane_len[li]
            if self.is_sink[li]:
                lanes[li].popleft()
                s.alive[vid] = False
                self.counters.exited += 1
                self.exits.append((vid, crossing_time(t, dt, x_new[i] - s.v[vid] * dt, x_new[i], L) if s.v[vid] > 0 else t + dt))
                if s.platoon[vid] >= 0:
                    self._leave_platoon(vid, t + dt)
                continue
            route = s.route[vid]
            r = int(s.ridx[vid]) + 1
            nl = route[r]
            nx = s.x[vid] - L
            dest = lanes[nl]
            if dest:
                tail = dest[-1]
                room = s.x[tail] - s.l[tail] - nx
            else:
                room = _INF
            if room <= 0.0 or lanes[li][0] != vid:
                s.x[vid] = L
                s.v[vid] = 0.0
                self.counters.transfer_refused += 1
                continue
            lanes[li].popleft()
            dest.append(vid)
            s.lane[vid] = nl
            s.x[vid] = nx
            s.ridx[vid] = r
            s.mv[vid] = self._movement_of(route, r)
            s.committed[vid] = False
            s.admitted[vid] = False

    # (7) ---------------------------------------------------------------------

    def _spawn(self, t: float) -> None:
        s = self.veh
        c = self.counters
        for li, x_back, cls, sampler, fallback in self.fill_lanes:
            # keep the queue packed: a standing vehicle joins at the initial back slot
            d = self.lanes[li]
            p = self.cfg.class_params[cls]
            if d and s.x[d[-1]] - s.l[d[-1]] - x_back < p.g_min:
                continue
            self._new_vehicle(li, x_back, cls, sampler() if sampler is not None else fallback, t)
            c.replenished += 1
        share = self.cfg.smart_share
        dt = self.dt
        for li, flow, draw, sampler in self.sources:
            cls = spawn_step(flow, dt, draw, share)
            if cls is None:
                continue
            c.generated += 1
            p = self.cfg.class_params[cls]
            d = self.lanes[li]
            v0 = min(p.v_max, self.lane_limit[li])
            if d:
                tail = d[-1]
                room = s.x[tail] - s.l[tail] - p.l - p.g_min
                if room < 0.0:
                    c.suppressed += 1
                    continue
                v0 = min(v0, entry_speed(room, float(s.v[tail]), p.tau, p.b))
            vid = self._new_vehicle(li, p.l, cls, sampler(), t)
            s.v[vid] = v0
            c.spawned += 1

    # ------------------------------------------------------------- invariants

    def check_state(self) -> None:
        """Conservation, parameter restoration and platoon partition checks."""
        c = self.counters
        if c.generated != c.spawned + c.suppressed:
            raise SimulationInvariantError("generated != spawned + suppressed", self._dump("conservation"))
        if c.initial + c.spawned + c.replenished != c.exited + self.in_network():
            raise SimulationInvariantError("spawned != exited + in network", self._dump("conservation"))
        s = self.veh
        n = s.n
        free = s.alive[:n] & (s.platoon[:n] < 0)
        if np.any(free & ((s.tau[:n] != s.base_tau[:n]) | (s.gmin[:n] != s.base_gmin[:n]))):
            self.restoration_failures += 1
        seen = set()
        for p in self.platoons.values():
            members = p.members
            if len(members) < 2 or seen.intersection(members) or not all(s.smart[m] for m in members):
                self.partition_failures += 1
            seen.update(members)
            if not all(self._adjacent(a, b) for a, b in zip(members, members[1:])):
                self.partition_failures += 1


def step(state: SimState, dt: float | None = None) -> SimState:
    """Advance ``state`` by one step (``dt`` must match the scenario's)."""
    if dt is not None and abs(dt - state.dt) > 1e-12:
        raise ValueError("dt is fixed by the scenario")
    state.step()
    return state


def run(cfg: ScenarioConfig, *, record_trajectories: bool = False, trajectory_every: int = 1,
        check_invariants: bool = True, progress=None) -> SimResult:
    """Run ``cfg`` for ``duration/dt`` steps."""
    state = SimState(cfg, record_trajectories=record_trajectories, trajectory_every=trajectory_every,
                     check_invariants=check_invariants)
    n = cfg.n_steps
    for k in range(n):
        state.step()
        if check_invariants:
            state.check_state()
        if progress is not None:
            progress(k + 1, n)
    return result_of(state)


def result_of(state: SimState) -> SimResult:
    return SimResult(
        config=state.cfg,
        steps=state.step_count,
        clock=state.clock,
        counters=state.counters,
        detectors=state.detectors,
        queue_times=state.queue_times,
        queue_series=state.queue_series,
        platoon_events=state.platoon_events,
        decisions={c.id: c.state.decisions for c in state.controllers if c.mode == "max_pressure"},
        exits=state.exits,
        trajectory_hash=int.from_bytes(state._hash.digest(), "big"),
        in_network=state.in_network(),
        trajectories=state.trajectories,
        restoration_failures=state.restoration_failures,
        platoon_partition_failures=state.partition_failures,
    )


def write_trajectories_csv(path, result: SimResult, lane_ids) -> None:
    """Trajectory dump as ``time_s, vehicle_id, lane_id, x_m, v_mps, a_mps2`` rows."""
    if result.trajectories is None:
        raise ValueError("run was not recorded; pass record_trajectories=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "vehicle_id", "lane_id", "x_m", "v_mps", "a_mps2"])
        for t, ids, lanes, x, v, a in result.trajectories:
            for row in zip(ids, lanes, x, v, a):
                w.writerow([repr(float(t)), int(row[0]), lane_ids[int(row[1])], repr(float(row[2])),
                            repr(float(row[3])), repr(float(row[4]))])
