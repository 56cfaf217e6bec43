"""Group-based Monte Carlo tree search that refines a candidate passing order.

Adjacent vehicles of the candidate order are bound into groups when they are
mutually conflict-free or immediate same-lane followers; the group's internal
order is frozen. The search tree places whole groups, which cuts both depth
and branching compared to per-vehicle trees. Each iteration runs the classic
select / expand / simulate / backup cycle:

* selection: UCB1 over the children's running-mean values,
* expansion: one random not-yet-visited child,
* simulation: greedy rollout preferring groups closest to the conflict area,
* backup: leaf and partial delay-sums normalized against sibling statistics,
  mixed into a node value, then averaged up the path.

The incumbent starts at the candidate, so the returned order is never worse.
Subtrees that have been fully enumerated are excluded from selection; with a
large enough iteration budget the search therefore degenerates to exact
enumeration of the group-order space and stops early.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import PassingOrder, Scenario, is_enforceable, partial_delay_sum
from .exceptions import ContractViolation
from .geometry import conflicts

DEFAULT_LAMBDA = 0.85
DEFAULT_GAMMA = 0.15
DEFAULT_GROUP_MAX = 4
DEFAULT_BUDGET_S = 0.1


@dataclass(frozen=True)
class Group:
    members: tuple[int, ...]  # vehicle ids, candidate order preserved
    closeness: float          # min member distance to the conflict area


def group_candidate(
    candidate: PassingOrder, s: Scenario, group_max: int = DEFAULT_GROUP_MAX
) -> list[Group]:
    """Bind candidate-adjacent vehicles into groups (left-to-right scan).

    A vehicle joins the current group iff the group stays below ``group_max``
    and it is either pairwise conflict-free with every member or the
    immediate same-lane follower of the group's last member. Concatenating
    the groups reproduces the candidate exactly.
    """
    if not is_enforceable(candidate, s):
        raise ContractViolation("candidate order must be enforceable before grouping")
    geo = s.geometry
    paths = {v.vehicle_id: geo.path(v.lane, v.steering) for v in s.vehicles}
    lane_fifo: dict[int, list[int]] = {}
    for v in s.vehicles:
        lane_fifo.setdefault(v.lane, []).append(v.vehicle_id)

    def same_lane_follower(prev: int, nxt: int) -> bool:
        lane = s.vehicle(nxt).lane
        if s.vehicle(prev).lane != lane:
            return False
        fifo = lane_fifo[lane]
        i = fifo.index(prev)
        return i + 1 < len(fifo) and fifo[i + 1] == nxt

    groups: list[list[int]] = []
    for vid in candidate:
        if groups:
            current = groups[-1]
            if len(current) < group_max:
                free_of_all = all(
                    not conflicts(paths[vid], paths[m]) for m in current
                )
                if free_of_all or same_lane_follower(current[-1], vid):
                    current.append(vid)
                    continue
        groups.append([vid])
    return [
        Group(tuple(g), min(s.vehicle(v).distance for v in g)) for g in groups
    ]


def ucb1_score(q_i: float, t_i: int, t: int, lam: float) -> float:
    """Exploitation value plus exploration bonus; unvisited nodes are treated
    as infinitely attractive and must be expanded before scoring applies."""
    if t_i == 0:
        return float("inf")
    if t_i < 0 or t < t_i:
        raise ContractViolation("visit counts require t >= t_i >= 1")
    return q_i + lam * math.sqrt(math.log(t) / t_i)


def normalize_q(j_i: float, j_min: float, j_max: float) -> float:
    """Map a delay-sum onto [0, 1] against its sibling range (1 = best).

    Equal siblings carry no discriminating signal; the optimistic value 1
    keeps exploration alive.
    """
    if j_max < j_min:
        raise ContractViolation("j_max must be >= j_min")
    if j_max == j_min:
        return 1.0
    return 1.0 - (j_i - j_min) / (j_max - j_min)


def node_value(q_bar: float, q_hat: float, gamma: float) -> float:
    """Mix the node's own partial-order value with its rollout value."""
    return gamma * q_bar + (1.0 - gamma) * q_hat


def improvement_ratio(j_candidate: float, j_final: float) -> float:
    """Relative delay-sum reduction of the searched order over the candidate."""
    if j_candidate == 0.0:
        return 0.0
    return (j_candidate - j_final) / j_candidate


class SearchNode:
    __slots__ = (
        "placed",
        "parent",
        "children",
        "unexpanded",
        "q",
        "t",
        "complete",
        "state",
        "jbar_min",
        "jbar_max",
        "jhat_min",
        "jhat_max",
    )

    def __init__(self, placed: tuple[int, ...], parent: "SearchNode | None", unexpanded: list[int]):
        self.placed = placed
        self.parent = parent
        self.children: dict[int, SearchNode] = {}
        self.unexpanded = unexpanded
        self.q = 0.0
        self.t = 0
        self.complete = not unexpanded  # leaves are complete at creation
        # incremental schedule of the placed prefix:
        # (subzone release list, lane release dict, delay-sum so far)
        self.state: tuple[list[float], dict[int, float], float] | None = None
        self.jbar_min = math.inf
        self.jbar_max = -math.inf
        self.jhat_min = math.inf
        self.jhat_max = -math.inf


def _placeable(
    placed: tuple[int, ...], n_groups: int, preds: list[set[int]]
) -> list[int]:
    placed_set = set(placed)
    return [
        g
        for g in range(n_groups)
        if g not in placed_set and preds[g] <= placed_set
    ]


def mcts_search(
    s: Scenario,
    candidate: PassingOrder,
    budget_iters: int | None = None,
    budget_s: float | None = None,
    lam: float = DEFAULT_LAMBDA,
    gamma: float = DEFAULT_GAMMA,
    group_max: int = DEFAULT_GROUP_MAX,
    rng: np.random.Generator | None = None,
) -> PassingOrder:
    """Refine an enforceable candidate order within a search budget.

    Exactly one of ``budget_iters`` (deterministic, used by all tests) or
    ``budget_s`` (wall clock) should be given; with no budget the default
    0.1 s wall-clock budget applies. Returns the lowest-delay complete order
    seen, which is never worse than the candidate.
    """
    if budget_iters is not None and budget_iters < 0:
        raise ContractViolation("budget_iters must be >= 0")
    if budget_iters is None and budget_s is None:
        budget_s = DEFAULT_BUDGET_S
    if rng is None:
        rng = np.random.default_rng(0)

    groups = group_candidate(candidate, s, group_max=group_max)
    m = len(groups)
    best_order = tuple(candidate)
    best_j = partial_delay_sum(best_order, s)
    if m <= 1 or budget_iters == 0 or (budget_s is not None and budget_s <= 0):
        return best_order

    # group precedence projected from lane FIFO: a group with a vehicle on
    # lane L requires every group holding an earlier vehicle of L
    lane_groups: dict[int, list[int]] = {}
    group_of = {vid: gi for gi, g in enumerate(groups) for vid in g.members}
    for v in s.vehicles:  # ascending distance = lane FIFO
        seq = lane_groups.setdefault(v.lane, [])
        gi = group_of[v.vehicle_id]
        if not seq or seq[-1] != gi:
            seq.append(gi)
    preds: list[set[int]] = [set() for _ in range(m)]
    for seq in lane_groups.values():
        for i, gi in enumerate(seq):
            preds[gi].update(seq[:i])

    from .core import _vehicle_timing

    timing = _vehicle_timing(s)
    geo = s.geometry
    hold = geo.subzone_time + geo.clearance
    headway = geo.headway
    closeness = [g.closeness for g in groups]
    members = [g.members for g in groups]

    def extend(state, gi: int):
        """Schedule one more group onto a copy of a prefix schedule state."""
        release, lane_rel, total = list(state[0]), dict(state[1]), state[2]
        for vid in members[gi]:
            free, lane, zones = timing[vid]
            t = max(free, lane_rel.get(lane, 0.0))
            for z, off in zones:
                r = release[z] - off
                if r > t:
                    t = r
            total += t - free
            lane_rel[lane] = t + headway
            for z, off in zones:
                release[z] = t + off + hold
        return release, lane_rel, total

    def rollout(placed: tuple[int, ...], state) -> tuple[tuple[int, ...], float]:
        """Closeness-greedy completion; returns the group sequence and its J."""
        release, lane_rel, total = list(state[0]), dict(state[1]), state[2]
        seq = list(placed)
        placed_set = set(seq)
        while len(seq) < m:
            options = [
                g for g in range(m) if g not in placed_set and preds[g] <= placed_set
            ]
            close = min(closeness[g] for g in options)
            tied = [g for g in options if closeness[g] == close]
            pick = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
            for vid in members[pick]:
                free, lane, zones = timing[vid]
                t = max(free, lane_rel.get(lane, 0.0))
                for z, off in zones:
                    r = release[z] - off
                    if r > t:
                        t = r
                total += t - free
                lane_rel[lane] = t + headway
                for z, off in zones:
                    release[z] = t + off + hold
            seq.append(pick)
            placed_set.add(pick)
        return tuple(seq), total

    root = SearchNode((), None, _placeable((), m, preds))
    root.state = (s.rightofway.tolist(), {}, 0.0)
    deadline = None if budget_s is None else time.perf_counter() + budget_s
    iters = 0
    while not root.complete:
        if budget_iters is not None and iters >= budget_iters:
            break
        if deadline is not None and time.perf_counter() >= deadline:
            break
        iters += 1

        # selection: descend through fully expanded nodes, ignoring subtrees
        # that are already exhausted
        node = root
        path = [root]
        while not node.unexpanded and node.children:
            open_children = [c for c in node.children.values() if not c.complete]
            node = max(
                open_children,
                key=lambda c: ucb1_score(c.q, c.t, node.t, lam),
            )
            path.append(node)

        # expansion: one random unvisited child
        pick_idx = int(rng.integers(len(node.unexpanded)))
        gi = node.unexpanded.pop(pick_idx)
        placed = node.placed + (gi,)
        child = SearchNode(placed, node, _placeable(placed, m, preds))
        child.state = extend(node.state, gi)
        node.children[gi] = child
        path.append(child)

        # simulation: closeness-greedy rollout to a complete order
        leaf_seq, j_hat = rollout(placed, child.state)
        j_bar = child.state[2]
        if j_hat < best_j:
            best_j = j_hat
            best_order = tuple(vid for g in leaf_seq for vid in members[g])

        # normalization against sibling statistics (running extrema)
        parent = node
        parent.jbar_min = min(parent.jbar_min, j_bar)
        parent.jbar_max = max(parent.jbar_max, j_bar)
        parent.jhat_min = min(parent.jhat_min, j_hat)
        parent.jhat_max = max(parent.jhat_max, j_hat)
        q_bar = normalize_q(j_bar, parent.jbar_min, parent.jbar_max)
        q_hat = normalize_q(j_hat, parent.jhat_min, parent.jhat_max)
        value = node_value(q_bar, q_hat, gamma)

        # backup: running-mean values and visit counts along the path
        for n in path:
            n.t += 1
            n.q += (value - n.q) / n.t

        # completeness propagates towards the root
        for n in reversed(path):
            if not n.unexpanded and all(c.complete for c in n.children.values()):
                n.complete = True
            else:
                break

    return best_order
