"""Intersection layout: lanes, movements and signal phases.

Positions are measured upstream from the stop line in feet; a vehicle front at
``pos_ft = 0`` is on the stop line and negative values are past it.
"""

from __future__ import annotations

from dataclasses import dataclass

LANES = (
    "EB_TH1", "EB_TH2", "EB_LT",
    "WB_TH1", "WB_TH2", "WB_LT",
    "NB_TH", "NB_LT",
    "SB_TH", "SB_LT",
)
N_LANES = len(LANES)
LANE_INDEX = {name: i for i, name in enumerate(LANES)}

# Agent/observation phase order.
PHASES = ("NS_Left", "NS_Through", "EW_Left", "EW_Through")
NS_LEFT, NS_THROUGH, EW_LEFT, EW_THROUGH = range(4)
N_PHASES = len(PHASES)

PHASE_LANES = (
    (LANE_INDEX["NB_LT"], LANE_INDEX["SB_LT"]),
    (LANE_INDEX["NB_TH"], LANE_INDEX["SB_TH"]),
    (LANE_INDEX["EB_LT"], LANE_INDEX["WB_LT"]),
    (LANE_INDEX["EB_TH1"], LANE_INDEX["EB_TH2"], LANE_INDEX["WB_TH1"], LANE_INDEX["WB_TH2"]),
)

LANE_PHASE = [0] * N_LANES
for _p, _lanes in enumerate(PHASE_LANES):
    for _l in _lanes:
        LANE_PHASE[_l] = _p
LANE_PHASE = tuple(LANE_PHASE)

# Movements feed lanes; through movements on the major street split over two lanes.
MOVEMENTS = ("EB_TH", "EB_LT", "WB_TH", "WB_LT", "NB_TH", "NB_LT", "SB_TH", "SB_LT")
MOVEMENT_LANES = {
    "EB_TH": (LANE_INDEX["EB_TH1"], LANE_INDEX["EB_TH2"]),
    "EB_LT": (LANE_INDEX["EB_LT"],),
    "WB_TH": (LANE_INDEX["WB_TH1"], LANE_INDEX["WB_TH2"]),
    "WB_LT": (LANE_INDEX["WB_LT"],),
    "NB_TH": (LANE_INDEX["NB_TH"],),
    "NB_LT": (LANE_INDEX["NB_LT"],),
    "SB_TH": (LANE_INDEX["SB_TH"],),
    "SB_LT": (LANE_INDEX["SB_LT"],),
}
LANE_MOVEMENT = tuple(
    next(m for m, lanes in MOVEMENT_LANES.items() if i in lanes) for i in range(N_LANES)
)
MAJOR_LANES = tuple(range(6))
SIDE_STREET_LANES = tuple(range(6, 10))

# Buses run eastbound in the curb through lane towards the far-side stop.
BUS_LANE = LANE_INDEX["EB_TH2"]
BUS_MOVEMENT = "EB_TH"
BUS_PHASE = EW_THROUGH


@dataclass(frozen=True)
class NetworkGeometry:
    link_length_ft: float = 1000.0
    dsrc_range_ft: float = 800.0
    stop_bar_detector_zone_ft: float = 40.0
    # Distance past the stop line after which a vehicle leaves the approach lane.
    clearance_ft: float = 60.0
    major_speed_ftps: float = 58.7
    minor_speed_ftps: float = 44.0
    car_length_ft: float = 15.0
    bus_length_ft: float = 40.0
    cell_ft: float = 25.0
    n_cells: int = 32

    def __post_init__(self):
        if self.dsrc_range_ft != 800.0:
            raise ValueError("dsrc_range_ft must be 800")
        if self.link_length_ft < self.dsrc_range_ft:
            raise ValueError("link_length_ft must be >= dsrc_range_ft")
        if self.n_cells * self.cell_ft != self.dsrc_range_ft:
            raise ValueError("n_cells * cell_ft must cover the DSRC range")

    @property
    def lanes(self) -> tuple[str, ...]:
        return LANES

    @property
    def approaches(self) -> tuple[str, ...]:
        return ("EB", "WB", "NB", "SB")

    def free_flow_speed(self, lane: int) -> float:
        return self.major_speed_ftps if lane in MAJOR_LANES else self.minor_speed_ftps
