from __future__ import annotations

import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphaorder.core import (
    Vehicle,
    build_schedule,
    encode_critic_input,
    encode_pointer_input,
    evaluate_objective,
    is_enforceable,
    load_scenario,
    make_scenario,
    random_scenario,
    repair_order,
    save_scenario,
)
from alphaorder.exceptions import ContractViolation
from alphaorder.geometry import Steering

from .oracles import oracle_delays, oracle_enforceable, oracle_optimum

T = 1e-9


def veh(geo, vid, lane, steering, distance, speed=None):
    return Vehicle(
        vehicle_id=vid,
        lane=lane,
        steering=Steering(steering),
        exit_lane=geo.exit_lane(lane, Steering(steering)),
        distance=distance,
        speed=geo.v_max if speed is None else speed,
    )


# --- enforceability ---------------------------------------------------------


def test_single_vehicle_enforceable(geometry):
    s = make_scenario(geometry, [veh(geometry, 0, 1, 1, 100.0)])
    assert is_enforceable((0,), s)


def test_same_lane_pair(geometry):
    s = make_scenario(
        geometry, [veh(geometry, 0, 1, 1, 50.0), veh(geometry, 1, 1, 1, 80.0)]
    )
    assert is_enforceable((0, 1), s)
    assert not is_enforceable((1, 0), s)


def test_not_a_permutation_rejected(geometry):
    s = make_scenario(
        geometry, [veh(geometry, 0, 1, 1, 50.0), veh(geometry, 1, 1, 1, 80.0)]
    )
    with pytest.raises(ContractViolation):
        is_enforceable((0, 0), s)
    with pytest.raises(ContractViolation):
        build_schedule((0,), s)


def test_enforceable_matches_pairwise_oracle(geometry, rng):
    s = random_scenario(geometry, 8, rng)
    ids = [v.vehicle_id for v in s.vehicles]
    for _ in range(300):
        perm = tuple(rng.permutation(ids))
        assert is_enforceable(perm, s) == oracle_enforceable(perm, s)


def test_repair_restores_lane_fifo(geometry, rng):
    for _ in range(50):
        s = random_scenario(geometry, 7, rng)
        ids = [v.vehicle_id for v in s.vehicles]
        perm = tuple(rng.permutation(ids))
        fixed = repair_order(perm, s)
        assert is_enforceable(fixed, s)
        if is_enforceable(perm, s):
            assert fixed == perm
        # repair only reassigns slots within each lane
        lanes_perm = [s.vehicle(v).lane for v in perm]
        lanes_fixed = [s.vehicle(v).lane for v in fixed]
        assert lanes_perm == lanes_fixed


# --- schedule builder --------------------------------------------------------


def test_single_unimpeded_vehicle(geometry):
    s = make_scenario(geometry, [veh(geometry, 0, 1, 1, 150.0)])
    sched = build_schedule((0,), s)
    assert sched.entry_time[0] == pytest.approx(10.0, abs=T)
    assert sched.delay[0] == pytest.approx(0.0, abs=T)


def test_conflict_free_pair_any_order(geometry):
    # opposite right turns never share a subzone
    s = make_scenario(
        geometry, [veh(geometry, 0, 2, 2, 60.0), veh(geometry, 1, 8, 2, 90.0)]
    )
    for order in [(0, 1), (1, 0)]:
        sched = build_schedule(order, s)
        assert sched.delay[0] == pytest.approx(0.0, abs=T)
        assert sched.delay[1] == pytest.approx(0.0, abs=T)


def test_schedule_matches_oracle_random(geometry, rng):
    for _ in range(60):
        n = int(rng.integers(2, 7))
        s = random_scenario(geometry, n, rng, rightofway_max=float(rng.uniform(0, 8)))
        order = tuple(v.vehicle_id for v in s.vehicles)
        sched = build_schedule(order, s)
        ref = oracle_delays(order, s)
        for vid in order:
            assert sched.delay[vid] == pytest.approx(ref[vid], abs=T)


def test_schedule_matches_oracle_all_permutations(geometry, rng):
    for _ in range(10):
        s = random_scenario(geometry, 5, rng)
        ids = [v.vehicle_id for v in s.vehicles]
        for perm in itertools.permutations(ids):
            if not is_enforceable(perm, s):
                continue
            sched = build_schedule(perm, s)
            ref = oracle_delays(perm, s)
            for vid in perm:
                assert sched.delay[vid] == pytest.approx(ref[vid], abs=T)


def test_updated_rightofway_monotone(geometry, rng):
    s = random_scenario(geometry, 6, rng, rightofway_max=5.0)
    order = tuple(v.vehicle_id for v in s.vehicles)
    sched = build_schedule(order, s)
    assert np.all(sched.updated_rightofway >= s.rightofway)


# --- objective ---------------------------------------------------------------


def test_single_vehicle_objective_zero(geometry):
    s = make_scenario(geometry, [veh(geometry, 0, 1, 1, 150.0)])
    assert evaluate_objective((0,), s) == 0.0


def test_unenforceable_penalty(geometry):
    # same-lane pair far apart so the repaired order has zero delay
    s = make_scenario(
        geometry, [veh(geometry, 0, 1, 1, 50.0), veh(geometry, 1, 1, 1, 250.0)]
    )
    assert evaluate_objective((0, 1), s) == pytest.approx(0.0, abs=T)
    assert evaluate_objective((1, 0), s) == pytest.approx(1000.0, abs=T)


def test_objective_min_matches_oracle(geometry, rng):
    for _ in range(3):
        s = random_scenario(geometry, 6, rng)
        ids = [v.vehicle_id for v in s.vehicles]
        best = min(
            (evaluate_objective(p, s), p)
            for p in itertools.permutations(ids)
            if is_enforceable(p, s)
        )
        _, oracle_best = oracle_optimum(s)
        assert best[0] == pytest.approx(oracle_best, abs=T)


def test_objective_invariant_under_relabeling(geometry, rng):
    s = random_scenario(geometry, 6, rng)
    order = tuple(v.vehicle_id for v in s.vehicles)
    j0 = evaluate_objective(order, s)
    # relabel ids by adding 100 (keeps distance sort and tie-breaks)
    relabeled = [
        Vehicle(v.vehicle_id + 100, v.lane, v.steering, v.exit_lane, v.distance, v.speed)
        for v in s.vehicles
    ]
    s2 = make_scenario(s.geometry, relabeled, s.rightofway)
    assert evaluate_objective(tuple(v + 100 for v in order), s2) == pytest.approx(j0, abs=T)


@settings(max_examples=40, deadline=None)
@given(bump=st.floats(0.1, 30.0), zone=st.integers(0, 35), data=st.integers(0, 10_000))
def test_rightofway_monotonicity(geometry, bump, zone, data):
    rng = np.random.default_rng(data)
    s = random_scenario(geometry, 5, rng, rightofway_max=4.0)
    order = tuple(v.vehicle_id for v in s.vehicles)
    j0 = evaluate_objective(order, s)
    row = s.rightofway.copy()
    row[zone] += bump
    s2 = make_scenario(s.geometry, list(s.vehicles), row)
    assert evaluate_objective(order, s2) >= j0 - T


def test_linear_scaling(geometry):
    # evaluator cost grows at most ~linearly in N (log-log slope bound);
    # min-of-reps CPU time keeps the measurement stable under system load
    rng = np.random.default_rng(7)
    sizes = [10, 20, 40, 80, 160]
    times = []
    for n in sizes:
        s = random_scenario(geometry, n, rng)
        order = tuple(v.vehicle_id for v in s.vehicles)
        build_schedule(order, s)  # warm caches
        best = min(
            _timed(build_schedule, order, s) for _ in range(7)
        )
        times.append(best)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    assert slope <= 1.2


def _timed(fn, *args):
    t0 = time.process_time()
    fn(*args)
    return time.process_time() - t0


# --- encodings ---------------------------------------------------------------


def test_pointer_encoding_shape_and_onehots(geometry, rng):
    for _ in range(50):
        s = random_scenario(geometry, int(rng.integers(1, 12)), rng)
        enc = encode_pointer_input(s)
        assert enc.shape == (s.n, 27)
        for i, v in enumerate(s.vehicles):
            entry = enc[i, 3:15]
            exit_ = enc[i, 15:27]
            assert entry.sum() == 1.0 and entry[v.lane] == 1.0
            assert exit_.sum() == 1.0 and exit_[v.exit_lane] == 1.0
            assert enc[i, 2] == float(int(v.steering))


def test_pointer_encoding_speed_normalization(geometry):
    s = make_scenario(geometry, [veh(geometry, 0, 1, 1, 100.0, speed=15.0)])
    assert encode_pointer_input(s)[0, 0] == 1.0


def test_critic_encoding(geometry, rng):
    s = random_scenario(geometry, 5, rng, rightofway_max=12.0)
    enc = encode_critic_input(s)
    assert enc.shape == (5, 63)
    np.testing.assert_array_equal(enc[:, :27], encode_pointer_input(s))
    np.testing.assert_allclose(enc[0, 27:], s.rightofway / 60.0)
    s0 = make_scenario(geometry, list(s.vehicles))
    assert np.all(encode_critic_input(s0)[:, 27:] == 0.0)


# --- serialization -----------------------------------------------------------


def test_scenario_roundtrip(tmp_path, geometry, rng):
    s = random_scenario(geometry, 6, rng, rightofway_max=9.0)
    p = tmp_path / "s.scn.json"
    save_scenario(s, str(p))
    s2 = load_scenario(str(p))
    assert s2.vehicles == s.vehicles
    np.testing.assert_array_equal(s2.rightofway, s.rightofway)
    order = tuple(v.vehicle_id for v in s.vehicles)
    assert evaluate_objective(order, s2) == evaluate_objective(order, s)
