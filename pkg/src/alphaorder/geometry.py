"""Intersection topology: entry lanes, conflict subzones, and movement paths.

The conflict area is modeled as a grid of square subzones. Each permitted
(lane, steering) movement follows a fixed ordered path of subzones:

* straight: the full grid line (row or column) aligned with the entry lane,
* left: along the entry line up to the exit lane's line, then along it
  (an L through the middle of the area),
* right: the one or two corner cells between the entry line and the
  nearest-edge exit line.

Two movements conflict iff their paths share at least one subzone. The grid
defaults to one line per entry lane (6x6 for the standard 4-approach,
3-lanes-per-approach intersection) but can be widened independently of the
lane counts.

Arms are indexed 0..3 = N, E, S, W. Headings are right-hand traffic:
arm 0 enters southbound on the west columns, arm 1 westbound on the north
rows, arm 2 northbound on the east columns, arm 3 eastbound on the south
rows. Lane slot 0 is the leftmost lane of its arm (next to the center line).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

from .exceptions import ConfigurationError

ARM_NAMES = ("N", "E", "S", "W")

DEFAULT_CONTROL_ZONE_LENGTH = 300.0
DEFAULT_SUBZONE_TIME = 0.5
DEFAULT_V_MAX = 15.0
DEFAULT_HEADWAY = 1.5
DEFAULT_CLEARANCE = 0.5


class Steering(IntEnum):
    """Movement type; the integer codes are also the network input encoding."""

    LEFT = 0
    STRAIGHT = 1
    RIGHT = 2


def _default_discipline(n_lanes: int) -> list[tuple[Steering, ...]]:
    """Permitted steerings per lane slot, leftmost first."""
    if n_lanes == 1:
        return [(Steering.LEFT, Steering.STRAIGHT, Steering.RIGHT)]
    if n_lanes == 2:
        return [
            (Steering.LEFT, Steering.STRAIGHT),
            (Steering.STRAIGHT, Steering.RIGHT),
        ]
    middle = [(Steering.STRAIGHT,)] * (n_lanes - 2)
    return [(Steering.LEFT,)] + middle + [(Steering.RIGHT,)]


@dataclass(frozen=True)
class GeometryConfig:
    """Build recipe for an intersection.

    ``lane_steerings[arm][slot]`` lists the steerings permitted from that
    lane; ``None`` selects the default discipline for the arm's lane count.
    Grid dimensions default to one line per lane (rows = E+W lanes,
    cols = N+S lanes) and may only be widened, never narrowed.
    """

    lanes_per_approach: tuple[int, int, int, int] = (3, 3, 3, 3)
    lane_steerings: tuple[tuple[tuple[Steering, ...], ...], ...] | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None
    control_zone_length: float = DEFAULT_CONTROL_ZONE_LENGTH
    subzone_time: float = DEFAULT_SUBZONE_TIME
    v_max: float = DEFAULT_V_MAX
    headway: float = DEFAULT_HEADWAY
    clearance: float = DEFAULT_CLEARANCE


@dataclass(frozen=True)
class SubzonePath:
    """Ordered subzones of one movement with entry offsets from the stop line."""

    subzones: tuple[int, ...]
    entry_offsets: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.subzones:
            raise ConfigurationError("movement path must contain at least one subzone")
        if len(set(self.subzones)) != len(self.subzones):
            raise ConfigurationError("movement path repeats a subzone")
        if self.entry_offsets[0] != 0.0 or any(
            b <= a for a, b in zip(self.entry_offsets, self.entry_offsets[1:])
        ):
            raise ConfigurationError("entry offsets must start at 0 and strictly increase")


@dataclass(frozen=True)
class Lane:
    lane_id: int
    arm: int
    slot: int  # 0 = leftmost lane of the arm
    line: int  # grid row (arms E/W) or column (arms N/S) the lane is aligned with
    steerings: tuple[Steering, ...]


@dataclass(frozen=True)
class IntersectionGeometry:
    """Immutable intersection description shared by all evaluators."""

    lanes: tuple[Lane, ...]
    grid_rows: int
    grid_cols: int
    movement_table: dict[tuple[int, Steering], SubzonePath]
    movement_exits: dict[tuple[int, Steering], int]  # (lane, steering) -> exit lane id
    control_zone_length: float = DEFAULT_CONTROL_ZONE_LENGTH
    subzone_time: float = DEFAULT_SUBZONE_TIME
    v_max: float = DEFAULT_V_MAX
    headway: float = DEFAULT_HEADWAY
    clearance: float = DEFAULT_CLEARANCE
    config: GeometryConfig = field(default=GeometryConfig(), repr=False)

    @property
    def n_lanes(self) -> int:
        return len(self.lanes)

    @property
    def n_subzones(self) -> int:
        return self.grid_rows * self.grid_cols

    def path(self, lane_id: int, steering: Steering) -> SubzonePath:
        try:
            return self.movement_table[(lane_id, Steering(steering))]
        except KeyError:
            raise ConfigurationError(
                f"steering {Steering(steering).name} not permitted from lane {lane_id}"
            ) from None

    def exit_lane(self, lane_id: int, steering: Steering) -> int:
        return self.movement_exits[(lane_id, Steering(steering))]

    def permitted_movements(self) -> list[tuple[int, Steering]]:
        return sorted(self.movement_table.keys())

    def lanes_for_steering(self, arm: int, steering: Steering) -> list[Lane]:
        return [ln for ln in self.lanes if ln.arm == arm and steering in ln.steerings]


def conflicts(a: SubzonePath, b: SubzonePath) -> set[int]:
    """Subzones shared by two movement paths; empty iff they never contend."""
    return set(a.subzones) & set(b.subzones)


# --- construction ----------------------------------------------------------

# Heading of each arm as (d_row, d_col) while crossing the conflict area.
_HEADING = {0: (1, 0), 1: (0, -1), 2: (-1, 0), 3: (0, 1)}


def _lane_lines(cfg_lanes: tuple[int, int, int, int], rows: int, cols: int) -> list[list[int]]:
    """Grid line of each lane, per arm, leftmost lane first.

    Lanes pack against the center divide of their half of the road: the west
    columns belong to arm N (southbound), east columns to arm S, north rows
    to arm E (westbound), south rows to arm W.
    """
    k_n, k_e, k_s, k_w = cfg_lanes
    # the split between the two halves sits at the grid center when possible,
    # shifted as needed so each direction's lanes fit on its own side
    c_split = min(max(cols // 2, k_n), cols - k_s)
    r_split = min(max(rows // 2, k_e), rows - k_w)
    if k_n > c_split or k_s > cols - c_split:
        raise ConfigurationError(f"grid_cols={cols} too narrow for lane counts N={k_n}, S={k_s}")
    if k_e > r_split or k_w > rows - r_split:
        raise ConfigurationError(f"grid_rows={rows} too narrow for lane counts E={k_e}, W={k_w}")
    return [
        [c_split - 1 - j for j in range(k_n)],
        [r_split - 1 - j for j in range(k_e)],
        [c_split + j for j in range(k_s)],
        [r_split + j for j in range(k_w)],
    ]


def _entry_cell(arm: int, line: int, rows: int, cols: int) -> tuple[int, int]:
    if arm == 0:
        return (0, line)
    if arm == 1:
        return (line, cols - 1)
    if arm == 2:
        return (rows - 1, line)
    return (line, 0)


def _exit_arm(arm: int, steering: Steering) -> int:
    # Arm a vehicle leaves *towards*; straight crosses to the opposite arm.
    if steering == Steering.STRAIGHT:
        return (arm + 2) % 4
    if steering == Steering.LEFT:
        return (arm + 1) % 4  # southbound turning left heads east, etc.
    return (arm + 3) % 4


def _build_path(
    arm: int,
    line: int,
    steering: Steering,
    lines: list[list[int]],
    rows: int,
    cols: int,
) -> tuple[list[tuple[int, int]], int, int]:
    """Cells of one movement plus the exit arm and exit lane slot.

    The exit lane is identified with the entry lane that is collinear and
    codirectional with the exit trajectory (straights exit along their own
    lane line; turns exit along a lane line of the crossing road).
    """
    d_row, d_col = _HEADING[arm]
    r, c = _entry_cell(arm, line, rows, cols)
    cells = [(r, c)]

    if steering == Steering.STRAIGHT:
        while True:
            r, c = r + d_row, c + d_col
            if not (0 <= r < rows and 0 <= c < cols):
                break
            cells.append((r, c))
        return cells, arm, lines[arm].index(line)

    # Turns: advance along the entry line to the exit lane's line, then
    # follow the exit heading out of the grid.
    if steering == Steering.LEFT:
        exit_of = _exit_arm(arm, Steering.LEFT)
        # Exit heading is codirectional with the arm *opposite* exit_of.
        carrier_arm = (exit_of + 2) % 4
        target_slot = 0  # leftmost lane of the carrier road
    else:
        exit_of = _exit_arm(arm, Steering.RIGHT)
        carrier_arm = (exit_of + 2) % 4
        target_slot = len(lines[carrier_arm]) - 1  # rightmost: nearest edge

    target_line = lines[carrier_arm][target_slot]
    # Advance along own line until we sit on the target line.
    while (r if d_col == 0 else c) != target_line:
        r, c = r + d_row, c + d_col
        if not (0 <= r < rows and 0 <= c < cols):
            raise ConfigurationError(
                f"turn from arm {ARM_NAMES[arm]} line {line} leaves the grid before "
                f"reaching exit line {target_line}"
            )
        cells.append((r, c))
    # Follow the carrier heading to the grid edge.
    e_row, e_col = _HEADING[carrier_arm]
    while True:
        r, c = r + e_row, c + e_col
        if not (0 <= r < rows and 0 <= c < cols):
            break
        if (r, c) in cells:  # right turns fold back onto the entry cell on tiny grids
            break
        cells.append((r, c))
    return cells, carrier_arm, target_slot


def build_geometry(config: GeometryConfig | None = None) -> IntersectionGeometry:
    """Construct an intersection from a config; deterministic for equal configs."""
    cfg = config or GeometryConfig()
    if any(k < 1 for k in cfg.lanes_per_approach):
        raise ConfigurationError("every approach needs at least one lane")
    k_n, k_e, k_s, k_w = cfg.lanes_per_approach
    rows = cfg.grid_rows if cfg.grid_rows is not None else k_e + k_w
    cols = cfg.grid_cols if cfg.grid_cols is not None else k_n + k_s
    if rows < 2 or cols < 2:
        raise ConfigurationError("grid dimensions must be at least 2x2")
    if cfg.subzone_time <= 0 or cfg.v_max <= 0:
        raise ConfigurationError("subzone_time and v_max must be positive")

    disciplines = cfg.lane_steerings
    if disciplines is None:
        disciplines = tuple(
            tuple(_default_discipline(k)) for k in cfg.lanes_per_approach
        )
    if len(disciplines) != 4 or any(
        len(d) != k for d, k in zip(disciplines, cfg.lanes_per_approach)
    ):
        raise ConfigurationError("lane_steerings must list one steering set per lane per arm")

    lines = _lane_lines(cfg.lanes_per_approach, rows, cols)

    lanes: list[Lane] = []
    for arm in range(4):
        for slot, steers in enumerate(disciplines[arm]):
            if not steers:
                raise ConfigurationError(
                    f"lane {ARM_NAMES[arm]}{slot} permits no steering"
                )
            lanes.append(
                Lane(
                    lane_id=len(lanes),
                    arm=arm,
                    slot=slot,
                    line=lines[arm][slot],
                    steerings=tuple(sorted(set(Steering(s) for s in steers))),
                )
            )

    # Each arm must serve every steering somewhere, otherwise arriving traffic
    # with that intention has no lane to use.
    for arm in range(4):
        served = {s for ln in lanes if ln.arm == arm for s in ln.steerings}
        missing = [s.name for s in Steering if s not in served]
        if missing:
            raise ConfigurationError(
                f"arm {ARM_NAMES[arm]} assigns no lane to steering(s) {', '.join(missing)}"
            )

    by_arm_slot = {(ln.arm, ln.slot): ln for ln in lanes}
    table: dict[tuple[int, Steering], SubzonePath] = {}
    exits: dict[tuple[int, Steering], int] = {}
    for ln in lanes:
        for s in ln.steerings:
            cells, exit_carrier_arm, exit_slot = _build_path(
                ln.arm, ln.line, s, lines, rows, cols
            )
            ids = tuple(r * cols + c for r, c in cells)
            offsets = tuple(j * cfg.subzone_time for j in range(len(ids)))
            table[(ln.lane_id, s)] = SubzonePath(ids, offsets)
            exits[(ln.lane_id, s)] = by_arm_slot[(exit_carrier_arm, exit_slot)].lane_id

    return IntersectionGeometry(
        lanes=tuple(lanes),
        grid_rows=rows,
        grid_cols=cols,
        movement_table=table,
        movement_exits=exits,
        control_zone_length=cfg.control_zone_length,
        subzone_time=cfg.subzone_time,
        v_max=cfg.v_max,
        headway=cfg.headway,
        clearance=cfg.clearance,
        config=cfg,
    )


def default_geometry() -> IntersectionGeometry:
    """The standard 4-approach, 3-lane, 6x6-subzone intersection."""
    return build_geometry(GeometryConfig())


def asymmetric_geometry() -> IntersectionGeometry:
    """A 3/2/3/2-lane intersection; shared-steering lanes on the 2-lane arms
    create conflicts that do not exist in the symmetric layout."""
    return build_geometry(GeometryConfig(lanes_per_approach=(3, 2, 3, 2)))


# --- rotation check --------------------------------------------------------


def rotated_quarter(geometry: IntersectionGeometry) -> dict[tuple[int, Steering], SubzonePath]:
    """Movement table with every path rotated 90 degrees clockwise and re-keyed
    to the corresponding rotated movement. Only meaningful for square grids
    with identical arms; used to assert the symmetry of the default layout."""
    rows, cols = geometry.grid_rows, geometry.grid_cols
    if rows != cols:
        raise ConfigurationError("rotation check requires a square grid")
    by_arm_slot = {(ln.arm, ln.slot): ln for ln in geometry.lanes}
    out: dict[tuple[int, Steering], SubzonePath] = {}
    for (lane_id, steering), path in geometry.movement_table.items():
        ln = geometry.lanes[lane_id]
        target = by_arm_slot.get(((ln.arm + 1) % 4, ln.slot))
        if target is None:
            raise ConfigurationError("rotation check requires identical arms")
        cells = [(z // cols, z % cols) for z in path.subzones]
        rot = [(c, rows - 1 - r) for r, c in cells]
        out[(target.lane_id, steering)] = SubzonePath(
            tuple(r * cols + c for r, c in rot), path.entry_offsets
        )
    return out


# --- serialization ---------------------------------------------------------

GEOMETRY_SCHEMA_VERSION = 1


def geometry_to_dict(geometry: IntersectionGeometry) -> dict:
    return {
        "schema": "alphaorder/geometry",
        "version": GEOMETRY_SCHEMA_VERSION,
        "grid_rows": geometry.grid_rows,
        "grid_cols": geometry.grid_cols,
        "control_zone_length": geometry.control_zone_length,
        "subzone_time": geometry.subzone_time,
        "v_max": geometry.v_max,
        "headway": geometry.headway,
        "clearance": geometry.clearance,
        "lanes": [
            {
                "id": ln.lane_id,
                "arm": ARM_NAMES[ln.arm],
                "slot": ln.slot,
                "line": ln.line,
                "steerings": [int(s) for s in ln.steerings],
            }
            for ln in geometry.lanes
        ],
        "movements": [
            {
                "lane": lane_id,
                "steering": int(steering),
                "subzones": list(path.subzones),
                "entry_offsets": list(path.entry_offsets),
                "exit_lane": geometry.movement_exits[(lane_id, steering)],
            }
            for (lane_id, steering), path in sorted(geometry.movement_table.items())
        ],
    }


_GEOMETRY_KEYS = {
    "schema", "version", "grid_rows", "grid_cols", "control_zone_length",
    "subzone_time", "v_max", "headway", "clearance", "lanes", "movements",
}


def geometry_from_dict(data: dict) -> IntersectionGeometry:
    unknown = set(data) - _GEOMETRY_KEYS
    if unknown:
        raise ConfigurationError(f"unknown geometry keys: {sorted(unknown)}")
    if data.get("schema") != "alphaorder/geometry":
        raise ConfigurationError("not a geometry file (missing schema marker)")
    if data.get("version") != GEOMETRY_SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported geometry schema version {data.get('version')!r}")
    arm_index = {name: i for i, name in enumerate(ARM_NAMES)}
    lanes = tuple(
        Lane(
            lane_id=entry["id"],
            arm=arm_index[entry["arm"]],
            slot=entry["slot"],
            line=entry["line"],
            steerings=tuple(Steering(s) for s in entry["steerings"]),
        )
        for entry in data["lanes"]
    )
    if tuple(ln.lane_id for ln in lanes) != tuple(range(len(lanes))):
        raise ConfigurationError("lane ids must be 0..n-1 in order")
    table = {}
    exits = {}
    for mv in data["movements"]:
        key = (mv["lane"], Steering(mv["steering"]))
        table[key] = SubzonePath(tuple(mv["subzones"]), tuple(mv["entry_offsets"]))
        exits[key] = mv["exit_lane"]
    n_cells = data["grid_rows"] * data["grid_cols"]
    for path in table.values():
        if any(z < 0 or z >= n_cells for z in path.subzones):
            raise ConfigurationError("movement path references a subzone outside the grid")
    lane_counts = tuple(sum(1 for ln in lanes if ln.arm == a) for a in range(4))
    return IntersectionGeometry(
        lanes=lanes,
        grid_rows=data["grid_rows"],
        grid_cols=data["grid_cols"],
        movement_table=table,
        movement_exits=exits,
        control_zone_length=data["control_zone_length"],
        subzone_time=data["subzone_time"],
        v_max=data["v_max"],
        headway=data["headway"],
        clearance=data["clearance"],
        config=GeometryConfig(
            lanes_per_approach=lane_counts,  # type: ignore[arg-type]
            grid_rows=data["grid_rows"],
            grid_cols=data["grid_cols"],
            control_zone_length=data["control_zone_length"],
            subzone_time=data["subzone_time"],
            v_max=data["v_max"],
            headway=data["headway"],
            clearance=data["clearance"],
        ),
    )


def save_geometry(geometry: IntersectionGeometry, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(geometry_to_dict(geometry), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_geometry(path: str) -> IntersectionGeometry:
    with open(path, encoding="utf-8") as fh:
        return geometry_from_dict(json.load(fh))
