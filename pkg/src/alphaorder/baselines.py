"""Reference order generators: FIFO, exhaustive enumeration, random sampling.

The enumerator walks only enforceable permutations (at each position the
candidates are the front-most unplaced vehicle of each lane) and keeps the
schedule state incrementally, so full enumeration at small N is cheap. It is
the optimality oracle every other algorithm is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PassingOrder, Scenario, evaluate_objective
from .exceptions import ContractViolation

FULL_ENUMERATION_MAX_N = 10


def fifo_order(s: Scenario) -> PassingOrder:
    """Vehicles by ascending estimated arrival time (distance / v_max), ties by id."""
    v_max = s.geometry.v_max
    return tuple(
        v.vehicle_id
        for v in sorted(s.vehicles, key=lambda v: (v.distance / v_max, v.vehicle_id))
    )


@dataclass(frozen=True)
class EnumerationResult:
    best_order: PassingOrder
    best_j: float
    orders_evaluated: int
    j_samples: list[float] | None = None


def enumerate_optimal(
    s: Scenario,
    limit: int | None = None,
    collect_samples: bool = False,
) -> EnumerationResult:
    """Best enforceable order by exhaustive search over the enforceable space.

    ``limit`` caps the number of complete orders evaluated (best-so-far is
    returned once reached). Unlimited runs are refused above
    ``FULL_ENUMERATION_MAX_N`` vehicles.
    """
    if s.n == 0:
        raise ContractViolation("scenario has no vehicles")
    if limit is None and s.n > FULL_ENUMERATION_MAX_N:
        raise ContractViolation(
            f"full enumeration refused for N={s.n} > {FULL_ENUMERATION_MAX_N}; pass a limit"
        )
    geo = s.geometry
    hold = geo.subzone_time + geo.clearance
    v_max = geo.v_max

    # per-lane FIFO queues (scenario order is ascending distance)
    lanes: list[list[int]] = []
    lane_of: dict[int, int] = {}
    lane_index: dict[int, int] = {}
    for v in s.vehicles:
        if v.lane not in lane_index:
            lane_index[v.lane] = len(lanes)
            lanes.append([])
        lane_of[v.vehicle_id] = lane_index[v.lane]
        lanes[lane_index[v.lane]].append(v.vehicle_id)

    paths = {
        v.vehicle_id: geo.path(v.lane, v.steering) for v in s.vehicles
    }
    free = {v.vehicle_id: v.distance / v_max for v in s.vehicles}

    release = s.rightofway.copy()
    lane_release = [0.0] * len(lanes)
    heads = [0] * len(lanes)

    best_j = float("inf")
    best_order: PassingOrder | None = None
    evaluated = 0
    samples: list[float] | None = [] if collect_samples else None
    prefix: list[int] = []
    stop = False

    def descend(partial_j: float) -> None:
        nonlocal best_j, best_order, evaluated, stop
        if stop:
            return
        if len(prefix) == s.n:
            evaluated += 1
            if samples is not None:
                samples.append(partial_j)
            if partial_j < best_j:
                best_j = partial_j
                best_order = tuple(prefix)
            if limit is not None and evaluated >= limit:
                stop = True
            return
        for li in range(len(lanes)):
            if heads[li] >= len(lanes[li]):
                continue
            vid = lanes[li][heads[li]]
            path = paths[vid]
            t = max(free[vid], lane_release[li])
            for z, off in zip(path.subzones, path.entry_offsets):
                r = release[z] - off
                if r > t:
                    t = r
            # apply
            heads[li] += 1
            prefix.append(vid)
            saved_lane = lane_release[li]
            lane_release[li] = t + geo.headway
            saved_zones = [(z, release[z]) for z in path.subzones]
            for z, off in zip(path.subzones, path.entry_offsets):
                release[z] = t + off + hold
            descend(partial_j + (t - free[vid]))
            # undo
            for z, r in saved_zones:
                release[z] = r
            lane_release[li] = saved_lane
            prefix.pop()
            heads[li] -= 1
            if stop:
                return

    descend(0.0)
    assert best_order is not None
    return EnumerationResult(
        best_order=best_order,
        best_j=best_j,
        orders_evaluated=evaluated,
        j_samples=samples,
    )


def count_enforceable(s: Scenario) -> int:
    """Number of enforceable permutations (multinomial over lane sizes)."""
    from math import factorial

    counts: dict[int, int] = {}
    for v in s.vehicles:
        counts[v.lane] = counts.get(v.lane, 0) + 1
    total = factorial(s.n)
    for c in counts.values():
        total //= factorial(c)
    return total


def sample_orders_grouped(
    s: Scenario,
    count: int,
    rng: np.random.Generator,
    penalty: float = 1000.0,
) -> list[float]:
    """Delay-sums of random enforceable orders for solution-space histograms.

    Each sample partitions every lane's vehicle sequence into random
    contiguous blocks (geometric sizes, p=0.5) and interleaves the blocks
    uniformly over all order-preserving arrangements, which keeps lane FIFO
    intact by construction.
    """
    if count < 1:
        raise ContractViolation("count must be >= 1")
    by_lane: dict[int, list[int]] = {}
    for v in s.vehicles:
        by_lane.setdefault(v.lane, []).append(v.vehicle_id)

    out: list[float] = []
    for _ in range(count):
        blocks: list[list[list[int]]] = []
        for vids in by_lane.values():
            lane_blocks: list[list[int]] = []
            i = 0
            while i < len(vids):
                size = min(int(rng.geometric(0.5)), len(vids) - i)
                lane_blocks.append(vids[i : i + size])
                i += size
            blocks.append(lane_blocks)
        remaining = [len(b) for b in blocks]
        order: list[int] = []
        heads = [0] * len(blocks)
        while any(remaining):
            total = sum(remaining)
            # P(lane) = remaining blocks / total gives a uniform draw over
            # all order-preserving interleavings of the block sequences
            r = rng.random() * total
            acc = 0.0
            for li, rem in enumerate(remaining):
                acc += rem
                if r < acc:
                    break
            order.extend(blocks[li][heads[li]])
            heads[li] += 1
            remaining[li] -= 1
        out.append(evaluate_objective(tuple(order), s, penalty=penalty))
    return out
