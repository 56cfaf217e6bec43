"""Scenarios, passing orders, and the delay-sum objective.

A scenario is a set of vehicles inside the control zone plus the per-subzone
right-of-way vector carried over from previously committed schedules. A
passing order is a permutation of the vehicle ids; it is *enforceable* when
vehicles sharing an entry lane keep their physical front-to-behind order.

``build_schedule`` assigns conflict-area entry times by processing vehicles
in the given order: each vehicle enters at the earliest time permitted by its
own free-flow arrival, the entry headway to the previous vehicle in its lane,
and the release times of every subzone on its path. The total of the
resulting delays (entry minus free-flow arrival) is the objective; orders
that are not enforceable are charged a flat penalty on top of the delay-sum
of a minimally repaired order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractViolation
from .geometry import (
    IntersectionGeometry,
    Steering,
    geometry_from_dict,
    geometry_to_dict,
)

DEFAULT_PENALTY = 1000.0
RIGHTOFWAY_NORM = 60.0  # seconds; scales right-of-way entries for the critic input
POINTER_ONE_HOT = 12    # lane one-hot width of the policy input encoding

PassingOrder = tuple[int, ...]


@dataclass(frozen=True)
class Vehicle:
    vehicle_id: int
    lane: int
    steering: Steering
    exit_lane: int
    distance: float  # meters to the conflict-area entry
    speed: float     # current longitudinal speed, m/s


@dataclass(frozen=True)
class Scenario:
    geometry: IntersectionGeometry
    vehicles: tuple[Vehicle, ...]
    rightofway: np.ndarray  # earliest assignable time per subzone, seconds

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rightofway", np.asarray(self.rightofway, dtype=np.float64)
        )

    @property
    def n(self) -> int:
        return len(self.vehicles)

    def vehicle(self, vehicle_id: int) -> Vehicle:
        return self.vehicles[self._index[vehicle_id]]

    @property
    def _index(self) -> dict[int, int]:
        idx = self.__dict__.get("_index_cache")
        if idx is None:
            idx = {v.vehicle_id: i for i, v in enumerate(self.vehicles)}
            self.__dict__["_index_cache"] = idx
        return idx


def validate_scenario(s: Scenario) -> None:
    """Raise if the scenario violates its invariants."""
    geo = s.geometry
    if s.rightofway.shape != (geo.n_subzones,):
        raise ContractViolation(
            f"rightofway length {s.rightofway.shape} != subzone count {geo.n_subzones}"
        )
    if np.any(s.rightofway < 0):
        raise ContractViolation("rightofway entries must be non-negative")
    ids = [v.vehicle_id for v in s.vehicles]
    if len(set(ids)) != len(ids):
        raise ContractViolation("duplicate vehicle ids")
    key = [(v.distance, v.vehicle_id) for v in s.vehicles]
    if key != sorted(key):
        raise ContractViolation("vehicles must be sorted by ascending distance (ties by id)")
    for v in s.vehicles:
        if not 0 <= v.distance <= geo.control_zone_length:
            raise ContractViolation(f"vehicle {v.vehicle_id} outside the control zone")
        if not 0 <= v.speed <= geo.v_max:
            raise ContractViolation(f"vehicle {v.vehicle_id} speed outside [0, v_max]")
        if (v.lane, v.steering) not in geo.movement_table:
            raise ContractViolation(
                f"vehicle {v.vehicle_id}: steering {v.steering.name} not permitted from lane {v.lane}"
            )
        if geo.exit_lane(v.lane, v.steering) != v.exit_lane:
            raise ContractViolation(f"vehicle {v.vehicle_id}: exit lane inconsistent with movement")


def make_scenario(
    geometry: IntersectionGeometry,
    vehicles: list[Vehicle],
    rightofway: np.ndarray | None = None,
    validate: bool = True,
) -> Scenario:
    """Sort vehicles into canonical order and wrap them into a Scenario."""
    ordered = tuple(sorted(vehicles, key=lambda v: (v.distance, v.vehicle_id)))
    row = (
        np.zeros(geometry.n_subzones)
        if rightofway is None
        else np.asarray(rightofway, dtype=np.float64)
    )
    s = Scenario(geometry=geometry, vehicles=ordered, rightofway=row)
    if validate:
        validate_scenario(s)
    return s


def check_order(order: PassingOrder, s: Scenario) -> None:
    if sorted(order) != sorted(v.vehicle_id for v in s.vehicles):
        raise ContractViolation("order is not a permutation of the scenario's vehicles")


def is_enforceable(order: PassingOrder, s: Scenario) -> bool:
    """True iff every lane's vehicles appear in ascending-distance order."""
    check_order(order, s)
    last_rank: dict[int, int] = {}
    rank = {v.vehicle_id: i for i, v in enumerate(s.vehicles)}  # ascending distance
    for vid in order:
        lane = s.vehicle(vid).lane
        r = rank[vid]
        if lane in last_rank and r < last_rank[lane]:
            return False
        last_rank[lane] = r
    return True


def repair_order(order: PassingOrder, s: Scenario) -> PassingOrder:
    """Restore lane FIFO by reassigning each lane's slots in ascending-distance
    order; positions of other vehicles are untouched (stable repair)."""
    check_order(order, s)
    by_lane_sorted: dict[int, list[int]] = {}
    for v in s.vehicles:  # scenario order is ascending distance
        by_lane_sorted.setdefault(v.lane, []).append(v.vehicle_id)
    taken: dict[int, int] = {lane: 0 for lane in by_lane_sorted}
    repaired = []
    for vid in order:
        lane = s.vehicle(vid).lane
        repaired.append(by_lane_sorted[lane][taken[lane]])
        taken[lane] += 1
    return tuple(repaired)


@dataclass(frozen=True)
class Schedule:
    entry_time: dict[int, float]
    delay: dict[int, float]
    updated_rightofway: np.ndarray

    @property
    def delay_sum(self) -> float:
        return float(sum(self.delay.values()))


def free_flow_time(v: Vehicle, geometry: IntersectionGeometry) -> float:
    return v.distance / geometry.v_max


def build_schedule(order: PassingOrder, s: Scenario) -> Schedule:
    """Entry times and delays for an enforceable order; O(N * path length).

    Processing vehicles in order, each enters at::

        max(free_flow, lane_release[lane], max_z(release[z] - offset(z)))

    and then pushes its lane release (entry + headway) and the release of
    every subzone it crosses (entry + offset + crossing time + clearance).
    """
    if not is_enforceable(order, s):
        raise ContractViolation("order is not enforceable; evaluate_objective handles penalties")
    return _schedule_unchecked(order, s)


def _vehicle_timing(s: Scenario) -> dict[int, tuple[float, int, list[tuple[int, float]]]]:
    """Per vehicle: (free-flow time, lane, [(subzone, entry offset), ...]).

    Cached on the scenario; shared by the schedule builder and the search
    rollouts, which evaluate thousands of orders per planning round.
    """
    cached = s.__dict__.get("_timing_cache")
    if cached is None:
        geo = s.geometry
        cached = {}
        for v in s.vehicles:
            path = geo.path(v.lane, v.steering)
            cached[v.vehicle_id] = (
                v.distance / geo.v_max,
                v.lane,
                list(zip(path.subzones, path.entry_offsets)),
            )
        s.__dict__["_timing_cache"] = cached
    return cached


def _schedule_unchecked(order: PassingOrder, s: Scenario) -> Schedule:
    geo = s.geometry
    timing = _vehicle_timing(s)
    release = s.rightofway.tolist()
    lane_release: dict[int, float] = {}
    entry: dict[int, float] = {}
    delay: dict[int, float] = {}
    hold = geo.subzone_time + geo.clearance
    headway = geo.headway
    for vid in order:
        free, lane, zones = timing[vid]
        t = max(free, lane_release.get(lane, 0.0))
        for z, off in zones:
            r = release[z] - off
            if r > t:
                t = r
        entry[vid] = t
        delay[vid] = t - free
        lane_release[lane] = t + headway
        for z, off in zones:
            release[z] = t + off + hold
    return Schedule(
        entry_time=entry, delay=delay, updated_rightofway=np.array(release)
    )


def evaluate_objective(
    order: PassingOrder, s: Scenario, penalty: float = DEFAULT_PENALTY
) -> float:
    """Delay-sum of the order; unenforceable orders are repaired first and
    charged a flat penalty so the objective stays finite and comparable."""
    if is_enforceable(order, s):
        return _schedule_unchecked(order, s).delay_sum
    return _schedule_unchecked(repair_order(order, s), s).delay_sum + penalty


def partial_delay_sum(prefix: PassingOrder, s: Scenario) -> float:
    """Delay-sum of scheduling only the prefix's vehicles, in prefix order."""
    geo = s.geometry
    timing = _vehicle_timing(s)
    release = s.rightofway.tolist()
    lane_release: dict[int, float] = {}
    total = 0.0
    hold = geo.subzone_time + geo.clearance
    headway = geo.headway
    for vid in prefix:
        free, lane, zones = timing[vid]
        t = max(free, lane_release.get(lane, 0.0))
        for z, off in zones:
            r = release[z] - off
            if r > t:
                t = r
        total += t - free
        lane_release[lane] = t + headway
        for z, off in zones:
            release[z] = t + off + hold
    return total


# --- network input encodings -------------------------------------------------


def encode_pointer_input(s: Scenario) -> np.ndarray:
    """Per-vehicle feature rows for the policy network, scenario order.

    Row = [speed / v_max, distance / zone length, steering code,
    entry-lane one-hot, exit-lane one-hot]. One-hot width is fixed at 12 so
    the encoding is identical across intersection layouts (27 features for
    any geometry with at most 12 entry lanes).
    """
    geo = s.geometry
    if geo.n_lanes > POINTER_ONE_HOT:
        raise ContractViolation(
            f"pointer encoding supports at most {POINTER_ONE_HOT} entry lanes, "
            f"geometry has {geo.n_lanes}"
        )
    rows = np.zeros((s.n, 3 + 2 * POINTER_ONE_HOT))
    for i, v in enumerate(s.vehicles):
        rows[i, 0] = v.speed / geo.v_max
        rows[i, 1] = v.distance / geo.control_zone_length
        rows[i, 2] = float(int(v.steering))
        rows[i, 3 + v.lane] = 1.0
        rows[i, 3 + POINTER_ONE_HOT + v.exit_lane] = 1.0
    return rows


def encode_critic_input(s: Scenario) -> np.ndarray:
    """Pointer rows with the normalized right-of-way vector appended to each."""
    base = encode_pointer_input(s)
    row = np.clip(s.rightofway / RIGHTOFWAY_NORM, 0.0, None)
    return np.hstack([base, np.tile(row, (s.n, 1))])


def pointer_input_dim() -> int:
    return 3 + 2 * POINTER_ONE_HOT


def critic_input_dim(geometry: IntersectionGeometry) -> int:
    return pointer_input_dim() + geometry.n_subzones


# --- synthetic scenarios ------------------------------------------------------


def random_scenario(
    geometry: IntersectionGeometry,
    n: int,
    rng: np.random.Generator,
    min_distance: float = 5.0,
    rightofway_max: float = 0.0,
) -> Scenario:
    """A scenario with uniformly random movements and distances.

    Used for tests and quick benchmarks; training data should come from
    simulator snapshots instead (see ``training.sample_dataset``).
    """
    movements = geometry.permitted_movements()
    vehicles = []
    for vid in range(n):
        lane, steering = movements[rng.integers(len(movements))]
        vehicles.append(
            Vehicle(
                vehicle_id=vid,
                lane=lane,
                steering=steering,
                exit_lane=geometry.exit_lane(lane, steering),
                distance=float(rng.uniform(min_distance, geometry.control_zone_length)),
                speed=float(rng.uniform(0.5, 1.0) * geometry.v_max),
            )
        )
    row = None
    if rightofway_max > 0:
        row = rng.uniform(0.0, rightofway_max, size=geometry.n_subzones)
    return make_scenario(geometry, vehicles, row)


# --- serialization ------------------------------------------------------------

SCENARIO_SCHEMA_VERSION = 1


def vehicle_to_dict(v: Vehicle) -> dict:
    return {
        "id": v.vehicle_id,
        "lane": v.lane,
        "steering": int(v.steering),
        "exit_lane": v.exit_lane,
        "distance": v.distance,
        "speed": v.speed,
    }


def vehicle_from_dict(d: dict) -> Vehicle:
    return Vehicle(
        vehicle_id=d["id"],
        lane=d["lane"],
        steering=Steering(d["steering"]),
        exit_lane=d["exit_lane"],
        distance=d["distance"],
        speed=d["speed"],
    )


def scenario_to_dict(s: Scenario, include_geometry: bool = True) -> dict:
    out = {
        "schema": "alphaorder/scenario",
        "version": SCENARIO_SCHEMA_VERSION,
        "vehicles": [vehicle_to_dict(v) for v in s.vehicles],
        "rightofway": [float(x) for x in s.rightofway],
    }
    if include_geometry:
        out["geometry"] = geometry_to_dict(s.geometry)
    return out


def scenario_from_dict(data: dict, geometry: IntersectionGeometry | None = None) -> Scenario:
    if data.get("schema") != "alphaorder/scenario":
        raise ContractViolation("not a scenario file (missing schema marker)")
    geo = geometry if geometry is not None else geometry_from_dict(data["geometry"])
    s = Scenario(
        geometry=geo,
        vehicles=tuple(vehicle_from_dict(d) for d in data["vehicles"]),
        rightofway=np.array(data["rightofway"], dtype=np.float64),
    )
    validate_scenario(s)
    return s


def save_scenario(s: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def shift_rightofway(s: Scenario, dt: float) -> Scenario:
    """Right-of-way vector advanced by dt seconds (floored at zero)."""
    return replace(s, rightofway=np.maximum(s.rightofway - dt, 0.0))
