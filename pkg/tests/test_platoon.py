from __future__ import annotations

import math

import pytest

from arterialsim.platoon import (
    LaneVehicle,
    Platoon,
    PlatoonConfig,
    PlatoonEvent,
    PlatoonPhase,
    arrival_time,
    dissolve_on_red,
    form_platoons,
    latency_steps,
    platoon_arrivals,
    propagate_deceleration,
    read_events_csv,
    split_at_breaks,
    split_at_sensors,
    split_for_green_window,
    write_events_csv,
)


def lane(classes, turns):
    return [
        LaneVehicle(i, c == "S", t, True, 1.0 if c == "S" else 2.5, 0.5 if c == "S" else 2.0)
        for i, (c, t) in enumerate(zip(classes, turns))
    ]


def active(members, turn="straight"):
    p = Platoon(1, list(members), "L", turn, saved_params={m: (1.0, 0.5) for m in members})
    p.transition(PlatoonPhase.ACTIVE)
    return p


def test_manual_breaks_adjacency():
    ps = form_platoons(lane("SSMS", ["straight"] * 4), "L", 0)
    assert [p.members for p in ps] == [[0, 1]]
    assert ps[0].state is PlatoonPhase.ACTIVE
    assert ps[0].shared_turn == "straight"


def test_all_manual_no_platoon():
    assert form_platoons(lane("MMMM", ["straight"] * 4), "L", 0) == []


def test_turn_mismatch_splits_runs():
    ps = form_platoons(lane("SSS", ["left", "left", "straight"]), "L", 0)
    assert [p.members for p in ps] == [[0, 1]]
    assert ps[0].shared_turn == "left"


def test_members_already_in_platoon_are_skipped():
    vs = lane("SSSS", ["straight"] * 4)
    vs[1] = vs[1]._replace(free=False)
    ps = form_platoons(vs, "L", 0)
    assert [p.members for p in ps] == [[2, 3]]


def test_formation_saves_parameters():
    ps = form_platoons(lane("SSS", ["right"] * 3), "L", 10)
    assert ps[0].id == 10
    assert ps[0].saved_params == {0: (1.0, 0.5), 1: (1.0, 0.5), 2: (1.0, 0.5)}


def test_deceleration_directives_all_followers():
    p = active([4, 5, 6])
    ds = propagate_deceleration(p, True, 7.5, step=100, delay_steps=0)
    assert [(d.apply_step, d.vehicle, d.speed_cap) for d in ds] == [(100, 5, 7.5), (100, 6, 7.5)]


def test_no_directives_when_cruising():
    assert propagate_deceleration(active([1, 2]), False, 10.0, 5, 0) == []


def test_latency_lands_two_steps_later():
    assert latency_steps(0.4, 0.2) == 2
    ds = propagate_deceleration(active([1, 2]), True, 3.0, step=10, delay_steps=latency_steps(0.4, 0.2))
    assert ds[0].apply_step == 12


def test_split_two_runs():
    p = active([1, 2, 3, 4])
    turns = {1: "straight", 2: "straight", 3: "left", 4: "left"}
    ps, released = split_at_sensors(p, turns, next_id=50)
    assert [q.members for q in ps] == [[1, 2], [3, 4]]
    assert ps[0] is p and ps[1].id == 50
    assert ps[1].shared_turn == "left"
    assert released == []
    assert all(q.state is PlatoonPhase.ACTIVE for q in ps)


def test_split_identity():
    p = active([1, 2, 3])
    ps, released = split_at_sensors(p, {1: "s", 2: "s", 3: "s"}, 9)
    assert ps == [p] and released == []
    assert p.members == [1, 2, 3]


def test_split_identity_refreshes_shared_turn():
    p = active([1, 2], turn="left")
    ps, _ = split_at_sensors(p, {1: "right", 2: "right"}, 9)
    assert ps[0].shared_turn == "right"


def test_split_all_singletons_dissolves():
    p = active([1, 2, 3])
    ps, released = split_at_sensors(p, {1: "straight", 2: "left", 3: "straight"}, 9)
    assert ps == []
    assert [vid for vid, _ in released] == [1, 2, 3]
    assert p.state is PlatoonPhase.DISSOLVED


def test_split_at_breaks():
    p = active([1, 2, 3, 4, 5])
    ps, released = split_at_breaks(p, lambda a, b: (a, b) != (2, 3) and (a, b) != (4, 5), 20)
    assert [q.members for q in ps] == [[1, 2], [3, 4]]
    assert [vid for vid, _ in released] == [5]
    assert ps[1].id == 20 and ps[1].shared_turn == "straight"


def test_split_at_breaks_contiguous_is_identity():
    p = active([1, 2, 3])
    assert split_at_breaks(p, lambda a, b: True, 9) == ([p], [])


def test_split_green_window_prefix():
    p = active([1, 2, 3, 4])
    k, rest, released = split_for_green_window(p, [4.0, 5.0, 6.0, 7.0], 6.0, 0.2, next_id=7)
    assert k == 2
    assert p.members == [1, 2]
    assert rest.members == [3, 4] and rest.id == 7
    assert released == []


def test_split_green_window_no_split_when_all_pass():
    p = active([1, 2, 3])
    k, rest, released = split_for_green_window(p, [1.0, 2.0, 3.0], 10.0, 0.2, 5)
    assert (k, rest, released) == (3, None, [])
    assert p.members == [1, 2, 3]


def test_split_green_window_empty_prefix_holds():
    p = active([1, 2])
    k, rest, released = split_for_green_window(p, [5.0, 6.0], 4.0, 0.2, 5)
    assert (k, rest, released) == (0, None, [])
    assert p.state is PlatoonPhase.ACTIVE and p.members == [1, 2]


def test_split_green_window_singleton_parts_released():
    p = active([1, 2, 3])
    k, rest, released = split_for_green_window(p, [1.0, 9.0, 9.5], 5.0, 0.2, 5)
    assert k == 1
    assert rest.members == [2, 3]
    assert [vid for vid, _ in released] == [1]
    assert p.state is PlatoonPhase.DISSOLVED


def test_arrival_time_closed_form():
    # from rest, a=2, no cap reached: d = a t^2 / 2
    assert arrival_time(16.0, 0.0, 2.0, 100.0) == pytest.approx(4.0)
    # reach the cap of 10 m/s after 5 s and 25 m, then cruise
    assert arrival_time(45.0, 0.0, 2.0, 10.0) == pytest.approx(7.0)
    assert arrival_time(0.0, 3.0, 2.0, 10.0) == 0.0
    assert arrival_time(30.0, 15.0, 2.0, 10.0) == pytest.approx(3.0)


def test_platoon_arrivals_enforce_lag():
    t = platoon_arrivals([10.0, 11.0], [10.0, 10.0], [2.0, 2.0], [10.0, 10.0], lag=1.5)
    assert t[1] == pytest.approx(t[0] + 1.5)


def test_dissolve_restores_saved_values():
    saved = {1: (1.0, 0.5), 2: (0.9999999999, 0.4999999)}
    p = Platoon(3, [1, 2], "L", "straight", saved_params=dict(saved))
    p.transition(PlatoonPhase.ACTIVE)
    restore = dissolve_on_red(p)
    assert dict(restore) == saved
    assert p.members == [] and p.state is PlatoonPhase.DISSOLVED
    assert dissolve_on_red(p) == []


def test_illegal_transition_rejected():
    p = Platoon(1, [1, 2], "L", "s")
    with pytest.raises(RuntimeError):
        p.transition(PlatoonPhase.SPLITTING)
    p.transition(PlatoonPhase.DISSOLVED)
    with pytest.raises(RuntimeError):
        p.transition(PlatoonPhase.ACTIVE)


def test_config_bounds():
    with pytest.raises(ValueError):
        PlatoonConfig(accel_boost=0.2)
    with pytest.raises(ValueError):
        PlatoonConfig().check_against(0.5, 0.5)
    PlatoonConfig().check_against(1.0, 0.5)


def test_events_csv_round_trip(tmp_path):
    events = [PlatoonEvent(0.2, 1, "form", 3), PlatoonEvent(1.0 / 3.0, 1, "dissolve", 3)]
    path = tmp_path / "e.csv"
    write_events_csv(path, events)
    assert read_events_csv(path) == events
    assert not math.isnan(events[1].time_s)
