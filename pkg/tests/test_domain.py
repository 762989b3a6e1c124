import json
import math
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fso_sim.config import ConfigError, StrategyKind, WorldConfig
from fso_sim.domain import (
    HELD,
    SEVERE_DISEASES,
    Ambulance,
    Appliance,
    Disease,
    Doctor,
    Position,
    distribute_resources,
    hospital_positions,
    sample_disease,
    travel_time,
)
from fso_sim.rng import RngStreams, Stream
from fso_sim.world import build_world

GOLDEN = Path(__file__).parent / "golden"

coords = st.floats(0, 100, allow_nan=False)
points = st.builds(Position, coords, coords)


@pytest.mark.parametrize(
    "src,dst,speed,expected",
    [((0, 0), (0, 0), 1.0, 0), ((0, 0), (3, 4), 1.0, 5), ((0, 0), (3, 4), 2.0, 3)],
)
def test_travel_time_examples(src, dst, speed, expected):
    assert travel_time(Position(*src), Position(*dst), speed) == expected


def test_travel_time_rejects_bad_speed():
    with pytest.raises(ValueError):
        travel_time(Position(0, 0), Position(1, 1), 0.0)


def test_travel_time_short_hop_takes_a_tick():
    assert travel_time(Position(0, 0), Position(0, 0.01), 2.0) == 1


@given(points, points, st.sampled_from([0.5, 1.0, 2.0]))
def test_travel_time_symmetric_and_zero_iff_equal(a, b, speed):
    t = travel_time(a, b, speed)
    assert t == travel_time(b, a, speed)
    assert (t == 0) == (a == b)


@given(points, points, points, st.sampled_from([0.5, 2.0]))
def test_travel_time_triangle_with_rounding(a, b, c, speed):
    assert travel_time(a, c, speed) <= travel_time(a, b, speed) + travel_time(b, c, speed) + 1


@given(points, points, st.floats(0.1, 5))
def test_toward_never_overshoots(a, b, step):
    nxt = a.toward(b, step)
    assert a.distance(nxt) <= step + 1e-9
    assert nxt.distance(b) <= a.distance(b) + 1e-9


def test_disease_split():
    assert Disease(3).minor and not Disease(3).severe
    assert Disease(4).severe and Disease(10).severe
    for bad in (0, 11):
        with pytest.raises(ValueError):
            Disease(bad)


def test_sample_disease_frequencies():
    s = Stream(3, "sickness")
    counts = Counter(sample_disease(s).id for _ in range(10_000))
    sigma = math.sqrt(10_000 * 0.1 * 0.9)
    assert set(counts) == set(range(1, 11))
    for c in counts.values():
        assert abs(c - 1000) <= 3 * sigma


def test_sample_disease_deterministic():
    a, b = Stream(8, "sickness"), Stream(8, "sickness")
    assert [sample_disease(a).id for _ in range(50)] == [sample_disease(b).id for _ in range(50)]


def test_doctor_expertise_validated():
    assert Doctor(0, 0, expertise=frozenset({4, 5, 6})).treats(Disease(2))
    assert not Doctor(0, 0, expertise=frozenset({4, 5, 6})).treats(Disease(7))
    with pytest.raises(ValueError):
        Doctor(0, 0, expertise=frozenset({1, 5, 6}))
    with pytest.raises(ValueError):
        Doctor(0, 0, expertise=frozenset({5, 6}))
    with pytest.raises(ValueError):
        Appliance(0, 0, disease_type=2)


def test_resource_free_gate():
    r = Ambulance(0, 0, position=Position(0, 0))
    assert r.is_free(0)
    r.busy_until = 10
    assert not r.is_free(9) and r.is_free(10)
    r.busy_until = HELD
    assert not r.is_free(10**9)


def test_ambulance_interpolates_route():
    a = Ambulance(0, 0, position=Position(0, 0))
    a.route = [(0, Position(0, 0)), (10, Position(10, 0)), (20, Position(10, 10))]
    assert a.position_at(5) == Position(5, 0)
    assert a.position_at(15) == Position(10, 5)
    assert a.position_at(99) == Position(10, 10)


def test_four_hospitals_at_quadrant_centres():
    assert hospital_positions(4, 100, 100) == [Position(25, 25), Position(75, 25), Position(25, 75), Position(75, 75)]


@given(st.integers(1, 12))
def test_hospital_sites_inside_grid(n):
    sites = hospital_positions(n, 100, 100)
    assert len(sites) == n
    assert all(0 <= p.x <= 100 and 0 <= p.y <= 100 for p in sites)


def test_distribute_all_zero():
    a = distribute_resources(Stream(1, "resource_placement"), {"doctors": 0, "ambulances": 0, "appliances": 0}, 4)
    assert a.per_hospital_counts(4) == [(0, 0, 0)] * 4


def test_distribute_rejects_no_hospitals():
    with pytest.raises(ValueError):
        distribute_resources(Stream(1, "resource_placement"), {"doctors": 1}, 0)


def test_distribute_golden_seed42():
    golden = json.loads((GOLDEN / "distribute_seed42.json").read_text())
    s = RngStreams(42)
    a = distribute_resources(s.resource_placement, golden["counts"], golden["n_hospitals"], s.expertise)
    assert a.doctor_hospitals == golden["doctor_hospitals"]
    assert [sorted(e) for e in a.doctor_expertise] == golden["doctor_expertise"]
    assert a.ambulance_hospitals == golden["ambulance_hospitals"]
    assert a.appliance_hospitals == golden["appliance_hospitals"]
    assert a.appliance_types == golden["appliance_types"]
    totals = [sum(c[i] for c in a.per_hospital_counts(4)) for i in range(3)]
    assert totals == [15, 8, 70]


@given(st.integers(0, 2**32), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(1, 6))
def test_distribute_conserves_and_validates(seed, nd, na, np_, nh):
    s = RngStreams(seed)
    a = distribute_resources(s.resource_placement, {"doctors": nd, "ambulances": na, "appliances": np_}, nh, s.expertise)
    counts = a.per_hospital_counts(nh)
    assert [sum(c[i] for c in counts) for i in range(3)] == [nd, na, np_]
    assert all(len(e) == 3 and e <= set(SEVERE_DISEASES) for e in a.doctor_expertise)
    assert all(t in SEVERE_DISEASES for t in a.appliance_types)


def test_build_world_default_counts():
    w = build_world(WorldConfig(), 1)
    assert (len(w.hospitals), len(w.doctors), len(w.ambulances), len(w.appliances), len(w.individuals)) == (
        4, 15, 8, 70, 100,
    )
    assert w.clock == 0


def test_build_world_empty():
    cfg = WorldConfig(n_hospitals=1, n_doctors=0, n_ambulances=0, n_appliances=0, n_individuals=0)
    w = build_world(cfg, 7)
    assert len(w.hospitals) == 1 and not w.hospitals[0].resources() and not w.individuals


def test_build_world_pure():
    cfg = WorldConfig(n_hospitals=2, n_doctors=2)
    assert build_world(cfg, 5).snapshot() == build_world(cfg, 5).snapshot()


def test_placement_identical_across_strategies():
    snaps = []
    for kind in StrategyKind:
        s = build_world(WorldConfig(strategy=kind), 11).snapshot()
        snaps.append((s["doctors"], s["ambulances"], s["appliances"], s["individuals"]))
    assert snaps[0] == snaps[1] == snaps[2]


@pytest.mark.parametrize(
    "change,key",
    [({"n_hospitals": 0}, "n_hospitals"), ({"width": 0}, "width"), ({"height": -1}, "height"),
     ({"sickness_probability": 1.5}, "sickness_probability"), ({"n_doctors": -1}, "n_doctors")],
)
def test_build_world_reports_bad_key(change, key):
    with pytest.raises(ConfigError) as exc:
        build_world(WorldConfig(**change), 1)
    assert exc.value.key == key
