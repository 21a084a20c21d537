from __future__ import annotations

import math

import numpy as np
import pytest

from arterialsim.demand import (
    FlowSpec,
    RouteSampler,
    UniformStream,
    assign_route,
    choose_turn,
    rng_stream,
    shortest_routes,
    spawn_step,
)
from arterialsim.network import Intersection, Lane, Movement, NetworkGraph, ScenarioError
from arterialsim.scenario import build_arterial


def diamond(len_a=100.0, len_b=300.0, len_c=400.0, len_d=100.0):
    lanes = {
        "S": Lane("S", 50.0, None, "IA"),
        "A": Lane("A", len_a, "IA", "IB"),
        "B": Lane("B", len_b, "IA", "IC"),
        "C": Lane("C", len_c, "IB", "ID"),
        "D": Lane("D", len_d, "IC", "ID"),
        "T": Lane("T", 50.0, "ID", None),
        "U": Lane("U", 10.0, "IX", None),
        "X": Lane("X", 10.0, None, "IX"),
    }
    inters = {
        "IA": Intersection("IA", False, ("S",), (Movement("S", "left", "A"), Movement("S", "right", "B"))),
        "IB": Intersection("IB", False, ("A",), (Movement("A", "straight", "C"),)),
        "IC": Intersection("IC", False, ("B",), (Movement("B", "straight", "D"),)),
        "ID": Intersection("ID", False, ("C", "D"), (Movement("C", "right", "T"), Movement("D", "left", "T"))),
        "IX": Intersection("IX", False, ("X",), (Movement("X", "straight", "U"),)),
    }
    net = NetworkGraph(lanes, inters, ("S", "X"), ("T", "U"))
    net.validate()
    return net


def brute_force(net, source, sink):
    best = None

    def walk(path, cost):
        nonlocal best
        lane = path[-1]
        if lane == sink:
            key = (round(cost, 9), tuple(path))
            if best is None or key < best:
                best = key
            return
        for m in net.movements_from(lane):
            if m.to_lane not in path:
                nxt = net.lanes[m.to_lane]
                walk(path + [m.to_lane], cost + nxt.length / nxt.speed_limit)

    walk([source], net.lanes[source].length / net.lanes[source].speed_limit)
    return None if best is None else best[1]


@pytest.mark.parametrize("lengths", [(100, 300, 400, 100), (100, 300, 100, 400), (200, 200, 200, 200), (50, 500, 900, 20)])
def test_shortest_routes_match_enumeration(lengths):
    net = diamond(*map(float, lengths))
    routes = shortest_routes(net, "S")
    assert routes["T"] == brute_force(net, "S", "T")


def test_shortest_routes_tie_break_lexicographic():
    net = diamond(200.0, 200.0, 200.0, 200.0)
    assert shortest_routes(net, "S")["T"] == ("S", "A", "C", "T")


def test_shortest_routes_omit_unreachable_sink():
    assert "U" not in shortest_routes(diamond(), "S")


def test_shortest_routes_single_edge():
    lanes = {"S": Lane("S", 10.0, None, "I"), "T": Lane("T", 10.0, "I", None)}
    net = NetworkGraph(lanes, {"I": Intersection("I", False, ("S",), (Movement("S", "straight", "T"),))}, ("S",), ("T",))
    assert shortest_routes(net, "S") == {"T": ("S", "T")}


def test_choose_turn_cumulative_intervals():
    ratios = {"left": 0.2, "straight": 0.7, "right": 0.1}
    assert choose_turn(ratios, 0.85) == "straight"
    assert choose_turn(ratios, 0.0) == "left"
    assert choose_turn(ratios, 0.2) == "straight"
    assert choose_turn(ratios, 0.9) == "right"
    assert choose_turn(ratios, 0.999999) == "right"


def test_turn_frequencies_match_ratios():
    ratios = {"left": 0.2, "straight": 0.7, "right": 0.1}
    draw = UniformStream(rng_stream(7, "turns"))
    n = 100_000
    counts = {t: 0 for t in ratios}
    for _ in range(n):
        counts[choose_turn(ratios, draw())] += 1
    for t, p in ratios.items():
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[t] - n * p) < 3 * sigma


def test_assign_route_straight_matches_shortest_on_arterial():
    cfg = build_arterial(3, 300.0, 0.0)
    net = cfg.network
    ratios = {i: {"straight": 1.0} for i in net.intersections}
    flow = FlowSpec("EB0_0", 0.1, ratios)
    route = assign_route(flow, net, lambda: 0.5)
    assert route == shortest_routes(net, "EB0_0")[route[-1]]
    assert all(lane.startswith("EB") for lane in route)


def test_assign_route_dead_end_names_intersection():
    net = diamond()
    flow = FlowSpec("S", 0.1, {"IA": {"straight": 1.0}})
    with pytest.raises(ScenarioError, match="IA"):
        assign_route(flow, net, lambda: 0.0)


def test_spawn_zero_rate_never_spawns():
    draw = UniformStream(rng_stream(1, "x"))
    flow = FlowSpec("S", 0.0)
    assert all(spawn_step(flow, 0.2, draw) is None for _ in range(1000))


def test_spawn_binomial_count():
    draw = UniformStream(rng_stream(2024, "spawn:S"))
    flow = FlowSpec("S", 0.4)
    n = 18000
    count = sum(spawn_step(flow, 0.2, draw) is not None for _ in range(n))
    p = 0.08
    assert abs(count - n * p) < 3 * math.sqrt(n * p * (1 - p))


def test_spawn_rejects_probability_above_one():
    with pytest.raises(ValueError):
        spawn_step(FlowSpec("S", 6.0), 0.2, lambda: 0.0)
    with pytest.raises(ScenarioError):
        FlowSpec("S", 6.0).check(0.2)


def test_spawn_smart_share_split():
    draw = UniformStream(rng_stream(5, "cls"))
    flow = FlowSpec("S", 5.0)
    classes = [spawn_step(flow, 0.2, draw, smart_share=0.75) for _ in range(40000)]
    smart = sum(c == "smart" for c in classes)
    assert None not in classes
    assert abs(smart - 30000) < 3 * math.sqrt(40000 * 0.75 * 0.25)


def test_named_streams_are_independent_and_reproducible():
    a1 = rng_stream(3, "spawn:A").random(5)
    a2 = rng_stream(3, "spawn:A").random(5)
    b = rng_stream(3, "spawn:B").random(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_uniform_stream_matches_generator():
    ref = rng_stream(9, "u").random(10000)
    s = UniformStream(rng_stream(9, "u"), block=64)
    assert np.array_equal(ref, np.array([s() for _ in range(10000)]))


def test_flow_ratio_sum_checked():
    with pytest.raises(ScenarioError):
        FlowSpec("S", 0.1, {"IA": {"left": 0.5, "right": 0.4}}).check(0.2)


def test_route_sampler_shortest_mode_weights():
    net = diamond()
    flow = FlowSpec("S", 0.1, route_mode="shortest", destinations={"T": 1.0})
    sampler = RouteSampler(flow, net, UniformStream(rng_stream(0, "r")))
    assert sampler() == brute_force(net, "S", "T")
