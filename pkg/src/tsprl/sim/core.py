"""Fixed-step microscopic simulation of the isolated intersection.

Each lane keeps its vehicles in a ring buffer ordered from the stop line
backwards, so the leader of a vehicle is always the previous slot. There is
no lane changing; vehicles only ever leave a lane from the front.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from tsprl.sim import kernel
from tsprl.sim.demand import ArrivalProcess, DemandConfig
from tsprl.sim.geometry import (
    BUS_LANE, BUS_MOVEMENT, LANE_MOVEMENT, MOVEMENT_LANES, MOVEMENTS, N_LANES,
    NetworkGeometry,
)
from tsprl.sim.idm import IdmParams

RED, YELLOW, GREEN = 0, 1, 2
CAR, BUS = 0, 1


class SimulationIntegrityError(RuntimeError):
    """Raised when vehicles on one lane overlap."""


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 0.1
    decision_interval_s: float = 3.0
    yellow_s: float = 3.0
    all_red_s: float = 1.0
    bus_dwell_s: float = 20.0
    # Vehicles slower than this count towards a queue.
    queue_speed_ftps: float = 5.0
    lane_capacity: int = 128

    def __post_init__(self):
        ratio = self.decision_interval_s / self.dt_s
        if self.dt_s <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_s must divide the decision interval exactly")

    def ticks(self, seconds: float) -> int:
        n = seconds / self.dt_s
        if abs(n - round(n)) > 1e-6:
            raise ValueError(f"{seconds} s is not a whole number of {self.dt_s} s steps")
        return int(round(n))


class SimEvent(NamedTuple):
    t: float
    kind: str  # "cross", "checkin", "checkout", "dwell_start", "dwell_end"
    vehicle_id: int
    lane: int
    cls: int


class Crossing(NamedTuple):
    t: float
    vehicle_id: int
    lane: int
    movement: str
    cls: int
    delay_s: float
    indication: int
    committed: bool


@dataclass
class BusTrip:
    bus_id: int
    spawn_s: float
    check_in_s: float = math.nan
    cross_s: float = math.nan
    dwell_start_s: float = math.nan
    dwell_end_s: float = math.nan

    @property
    def travel_time_s(self) -> float:
        return self.cross_s - self.check_in_s


@dataclass
class Vehicle:
    id: int
    cls: int
    lane: int
    pos_ft: float
    speed_ftps: float
    length_ft: float
    entry_time_s: float
    movement: str
    zone_entry_s: float = math.nan
    free_flow_ftps: float = math.nan

    @property
    def is_bus(self) -> bool:
        return self.cls == BUS


@dataclass
class MovementCounts:
    spawned: int = 0
    crossed: int = 0
    blocked_steps: int = 0  # steps on which an arrival was held at the entry


_FLOAT_FIELDS = ("pos", "speed", "length", "v0", "entry_t", "zone_t", "commit_until")


class Simulation:
    """One intersection, one arrival RNG, one clock."""

    def __init__(self, demand: DemandConfig = DemandConfig(),
                 geometry: NetworkGeometry = NetworkGeometry(),
                 idm: IdmParams = IdmParams(), config: SimConfig = SimConfig(),
                 seed: int | None = None):
        self.demand = demand
        self.geometry = geometry
        self.idm = idm
        self.config = config
        self.dt = config.dt_s
        self.tick = 0
        self.arrivals = ArrivalProcess(demand, seed)
        K = config.lane_capacity
        shape = (N_LANES, K)
        for name in _FLOAT_FIELDS:
            setattr(self, name, np.zeros(shape))
        self.ids = np.full(shape, -1, dtype=np.int64)
        self.cls = np.zeros(shape, dtype=np.int8)
        self.checked = np.zeros(shape, dtype=bool)
        self.head = np.zeros(N_LANES, dtype=np.int64)
        self.count = np.zeros(N_LANES, dtype=np.int64)
        self.v0_lane = np.array([geometry.free_flow_speed(ln) for ln in range(N_LANES)])
        self._ev = (np.zeros(3 * N_LANES * K, dtype=np.int64), np.zeros(3 * N_LANES * K, dtype=np.int64),
                    np.zeros(3 * N_LANES * K, dtype=np.int64), np.zeros(3 * N_LANES * K))
        self._next_id = 0
        self.entry_queues: dict[str, deque] = {m: deque() for m in (*MOVEMENTS, "BUS")}
        self.counts = {m: MovementCounts() for m in (*MOVEMENTS, "BUS")}
        self.indications = np.zeros(N_LANES, dtype=np.int8)
        self.crossings: list[Crossing] = []
        self.bus_trips: dict[int, BusTrip] = {}
        self._dwell_ends: deque = deque()
        self._valid_tick = -1
        self._valid = None
        self.trajectory_writer = None

    # ------------------------------------------------------------------ clock
    @property
    def t(self) -> float:
        return self.tick * self.dt

    @property
    def n_vehicles(self) -> int:
        return int(self.count.sum())

    # ------------------------------------------------------------ bookkeeping
    def valid(self) -> np.ndarray:
        """Boolean (lanes, K) mask of occupied slots."""
        if self._valid_tick != self.tick or self._valid is None:
            K = self.config.lane_capacity
            rel = (np.arange(K)[None, :] - self.head[:, None]) % K
            self._valid = rel < self.count[:, None]
            self._valid_tick = self.tick
        return self._valid

    def _slots(self, lane: int) -> list[int]:
        K = self.config.lane_capacity
        h = int(self.head[lane])
        return [(h + j) % K for j in range(int(self.count[lane]))]

    def _new_vehicle(self, lane: int, slot: int, cls: int, pos: float, speed: float):
        g = self.geometry
        vid = self._next_id
        self._next_id += 1
        now = self.t
        in_zone = 0 <= pos <= g.dsrc_range_ft
        self.ids[lane, slot] = vid
        self.cls[lane, slot] = cls
        self.pos[lane, slot] = pos
        self.speed[lane, slot] = speed
        self.length[lane, slot] = g.bus_length_ft if cls == BUS else g.car_length_ft
        self.v0[lane, slot] = self.v0_lane[lane]
        self.entry_t[lane, slot] = now
        self.zone_t[lane, slot] = now if in_zone else math.nan
        self.commit_until[lane, slot] = -math.inf
        self.checked[lane, slot] = bool(cls == BUS and in_zone)
        if cls == BUS:
            trip = BusTrip(vid, now)
            if in_zone:
                trip.check_in_s = now
            self.bus_trips[vid] = trip
        self._valid = None
        return vid

    def _movement(self, lane: int, cls: int) -> str:
        return "BUS" if cls == BUS else LANE_MOVEMENT[lane]

    def place_vehicle(self, lane: int, pos_ft: float, speed_ftps: float = 0.0,
                      cls: int = CAR) -> int:
        """Put a vehicle directly on a lane (tests and scripted scenarios).

        A vehicle placed within the DSRC range counts as having entered the
        sensing zone at the current time.
        """
        K = self.config.lane_capacity
        if self.count[lane] >= K:
            raise ValueError(f"lane {lane} is full")
        slots = self._slots(lane)
        rows = [self._row(lane, s) for s in slots]
        j = sum(1 for r in rows if r["pos"] <= pos_ft)
        # Shift the vehicles behind the insertion point back by one slot.
        h = int(self.head[lane])
        for k in range(len(rows) - 1, j - 1, -1):
            self._write_row(lane, (h + k + 1) % K, rows[k])
        self.count[lane] += 1
        vid = self._new_vehicle(lane, (h + j) % K, cls, pos_ft, speed_ftps)
        self.counts[self._movement(lane, cls)].spawned += 1
        self._check_overlap(lane)
        return vid

    def _row(self, lane, slot) -> dict:
        row = {f: getattr(self, f)[lane, slot] for f in _FLOAT_FIELDS}
        row.update(ids=self.ids[lane, slot], cls=self.cls[lane, slot], checked=self.checked[lane, slot])
        return row

    def _write_row(self, lane, slot, row):
        for f, val in row.items():
            getattr(self, f)[lane, slot] = val

    def _check_overlap(self, lane: int):
        slots = self._slots(lane)
        for a, b in zip(slots, slots[1:]):
            if self.pos[lane, b] - self.pos[lane, a] - self.length[lane, a] < -1e-6:
                raise SimulationIntegrityError(f"overlapping vehicles on lane {lane}")

    # ---------------------------------------------------------------- arrivals
    def lane_occupancy(self) -> np.ndarray:
        return ((self.pos >= 0) & self.valid()).sum(axis=1)

    def _try_spawn(self, lane: int, cls: int) -> bool:
        g = self.geometry
        L = g.link_length_ft
        v0 = self.v0_lane[lane]
        K = self.config.lane_capacity
        n = int(self.count[lane])
        if n >= K:
            return False
        p = self.idm
        if n:
            tail = (int(self.head[lane]) + n - 1) % K
            gap = L - (self.pos[lane, tail] + self.length[lane, tail])
            vt = self.speed[lane, tail]
            if gap >= p.s0 + p.time_headway * v0 + max(v0 * v0 - vt * vt, 0.0) / (2 * p.b):
                v = v0
            elif vt > 0 and gap >= p.s0 + p.time_headway * vt:
                v = vt
            else:
                return False
        else:
            v = v0
        slot = (int(self.head[lane]) + n) % K
        self.count[lane] += 1
        self._new_vehicle(lane, slot, cls, L, v)
        return True

    def generate_arrivals(self) -> list[int]:
        """Queue due arrivals at the link entry and release those that fit.

        Through vehicles take the least-occupied of their two lanes. Returns
        the ids of vehicles that entered the link this step.
        """
        t = self.t
        if self.arrivals.earliest() <= t:
            for _, m in self.arrivals.pop_due(t):
                self.entry_queues[m].append(t)
                self.counts[m].spawned += 1
        entered = []
        for m, q in self.entry_queues.items():
            while q:
                if m == "BUS":
                    lane, cls = BUS_LANE, BUS
                else:
                    lanes = MOVEMENT_LANES[m]
                    if len(lanes) == 1:
                        lane = lanes[0]
                    else:
                        occ = self.lane_occupancy()
                        lane = min(lanes, key=lambda ln: (occ[ln], ln))
                    cls = CAR
                if not self._try_spawn(lane, cls):
                    self.counts[m].blocked_steps += 1
                    break
                q.popleft()
                entered.append(self._next_id - 1)
        return entered

    # ------------------------------------------------------------------- step
    def set_indications(self, indications) -> None:
        """Apply per-lane RED/YELLOW/GREEN and the yellow-onset commitment rule.

        A vehicle within ``speed * yellow_s`` of the stop line when its lane
        turns yellow ignores the stop line until the clearance interval ends.
        """
        indications = np.asarray(indications, dtype=np.int8)
        onset = (self.indications == GREEN) & (indications == YELLOW)
        if onset.any():
            cfg = self.config
            reach = self.speed * cfg.yellow_s
            commit = onset[:, None] & self.valid() & (self.pos >= 0) & (self.pos <= reach)
            if commit.any():
                self.commit_until[commit] = self.t + cfg.yellow_s + cfg.all_red_s
        self.indications = indications.copy()

    def advance(self, indications=None) -> list[SimEvent]:
        """Advance one integration step and return the events it produced."""
        if indications is not None:
            self.set_indications(indications)
        self.generate_arrivals()
        events: list[SimEvent] = []
        t0 = self.t
        if self.count.any():
            p = self.idm
            g = self.geometry
            ev_kind, ev_lane, ev_slot, ev_time = self._ev
            n_ev, bad_lane = kernel.step_lanes(
                self.pos, self.speed, self.length, self.v0, self.commit_until,
                self.head, self.count, self.indications, t0, self.dt,
                p.a_max, p.b, p.s0, p.time_headway, float(p.delta),
                g.dsrc_range_ft, g.clearance_ft, ev_kind, ev_lane, ev_slot, ev_time)
            if bad_lane >= 0:
                raise SimulationIntegrityError(
                    f"vehicles overlap on lane {bad_lane} at t={t0 + self.dt:.1f}s")
            if n_ev:
                self._handle_events(n_ev, events)
        self.tick += 1
        self._valid = None
        while self._dwell_ends and self._dwell_ends[0][0] <= self.t + 1e-9:
            te, vid = self._dwell_ends.popleft()
            self.bus_trips[vid].dwell_end_s = te
            events.append(SimEvent(te, "dwell_end", vid, BUS_LANE, BUS))
        if self.trajectory_writer is not None:
            self._log_trajectory()
        return events

    def _handle_events(self, n_ev: int, events: list):
        ev_kind, ev_lane, ev_slot, ev_time = self._ev
        removed = np.zeros(N_LANES, dtype=np.int64)
        for k in range(n_ev):
            kind, lane, slot, te = int(ev_kind[k]), int(ev_lane[k]), int(ev_slot[k]), float(ev_time[k])
            if kind == kernel.EV_ENTER_ZONE:
                self.zone_t[lane, slot] = te
                if self.cls[lane, slot] == BUS:
                    self.checked[lane, slot] = True
                    vid = int(self.ids[lane, slot])
                    self.bus_trips[vid].check_in_s = te
                    events.append(SimEvent(te, "checkin", vid, lane, BUS))
            elif kind == kernel.EV_CROSS:
                self._record_crossing(lane, slot, te, events)
            else:
                removed[lane] += 1
                if self.cls[lane, slot] == BUS:
                    vid = int(self.ids[lane, slot])
                    self.bus_trips[vid].dwell_start_s = te
                    events.append(SimEvent(te, "dwell_start", vid, lane, BUS))
                    self._dwell_ends.append((te + self.config.bus_dwell_s, vid))
        if removed.any():
            K = self.config.lane_capacity
            self.head = (self.head + removed) % K
            self.count -= removed

    def _record_crossing(self, lane: int, slot: int, tc: float, events: list):
        vid = int(self.ids[lane, slot])
        cls = int(self.cls[lane, slot])
        movement = self._movement(lane, cls)
        R = self.geometry.dsrc_range_ft
        delay = max(0.0, (tc - self.zone_t[lane, slot]) - R / self.v0[lane, slot])
        committed = bool(self.commit_until[lane, slot] > tc)
        self.crossings.append(Crossing(
            tc, vid, lane, BUS_MOVEMENT if cls == BUS else movement, cls, delay,
            int(self.indications[lane]), committed))
        self.counts[movement].crossed += 1
        events.append(SimEvent(tc, "cross", vid, lane, cls))
        if cls == BUS:
            self.checked[lane, slot] = False
            self.bus_trips[vid].cross_s = tc
            events.append(SimEvent(tc, "checkout", vid, lane, cls))

    def _log_trajectory(self):
        t = round(self.t, 6)
        for lane in range(N_LANES):
            for s in self._slots(lane):
                self.trajectory_writer.writerow(
                    [t, int(self.ids[lane, s]), "bus" if self.cls[lane, s] == BUS else "car",
                     lane, float(self.pos[lane, s]), float(self.speed[lane, s])])

    # ------------------------------------------------------------- sensing
    def lane_vehicle_counts(self) -> np.ndarray:
        inside = self.valid() & (self.pos >= 0) & (self.pos <= self.geometry.dsrc_range_ft)
        return inside.sum(axis=1)

    def detector_states(self) -> np.ndarray:
        zone = self.geometry.stop_bar_detector_zone_ft
        occ = self.valid() & (self.pos <= zone) & (self.pos + self.length >= 0)
        return occ.any(axis=1)

    def checked_in_buses(self) -> list[tuple[int, int]]:
        """(lane, slot) of every bus between check-in and check-out."""
        lanes, slots = np.nonzero(self.checked)
        return list(zip(lanes.tolist(), slots.tolist()))

    def encode_bus_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Bus position (one-hot) and speed over the cells of the DSRC zone.

        Cell 0 sits at the zone boundary, the last cell at the stop line.
        """
        g = self.geometry
        position = np.zeros(g.n_cells)
        speed = np.zeros(g.n_cells)
        for lane, slot in self.checked_in_buses():
            cell = int((g.dsrc_range_ft - self.pos[lane, slot]) // g.cell_ft)
            cell = min(max(cell, 0), g.n_cells - 1)
            if position[cell]:
                raise ValueError(f"two buses in cell {cell}")
            position[cell] = 1.0
            speed[cell] = self.speed[lane, slot]
        return position, speed

    def zone_delays(self) -> np.ndarray:
        """Cumulative delay of every vehicle currently inside the sensing zone."""
        R = self.geometry.dsrc_range_ft
        inside = self.valid() & (self.pos >= 0) & (self.pos <= R)
        elapsed = self.t - self.zone_t[inside]
        ideal = (R - self.pos[inside]) / self.v0[inside]
        return np.maximum(elapsed - ideal, 0.0)

    def queue_lengths(self) -> np.ndarray:
        """Per-lane count of slow vehicles contiguous from the stop line."""
        return kernel.queue_lengths(self.pos, self.speed, self.head, self.count,
                                    self.config.queue_speed_ftps)

    def bus_delays(self) -> list[float]:
        """Delay accrued by each checked-in bus since its check-in."""
        R = self.geometry.dsrc_range_ft
        out = []
        for lane, slot in self.checked_in_buses():
            trip = self.bus_trips[int(self.ids[lane, slot])]
            covered = R - self.pos[lane, slot]
            out.append(max(0.0, (self.t - trip.check_in_s) - covered / self.v0[lane, slot]))
        return out

    # ---------------------------------------------------------- inspection
    def vehicles(self) -> list[Vehicle]:
        out = []
        for lane in range(N_LANES):
            for s in self._slots(lane):
                cls = int(self.cls[lane, s])
                out.append(Vehicle(int(self.ids[lane, s]), cls, lane, float(self.pos[lane, s]),
                                   float(self.speed[lane, s]), float(self.length[lane, s]),
                                   float(self.entry_t[lane, s]),
                                   BUS_MOVEMENT if cls == BUS else LANE_MOVEMENT[lane],
                                   float(self.zone_t[lane, s]), float(self.v0[lane, s])))
        return out

    def conservation(self) -> dict[str, tuple[int, int, int, int]]:
        """Per movement: (spawned, crossed, present on the approach, waiting at entry)."""
        present = {m: 0 for m in self.counts}
        approaching = self.valid() & (self.pos >= 0)
        for lane, slot in zip(*np.nonzero(approaching)):
            present[self._movement(int(lane), int(self.cls[lane, slot]))] += 1
        return {m: (c.spawned, c.crossed, present[m], len(self.entry_queues[m]))
                for m, c in self.counts.items()}


def advance_simulation(sim: Simulation, dt_s: float, indications=None) -> list[SimEvent]:
    """Step ``sim`` once; ``dt_s`` must equal its configured step."""
    if abs(dt_s - sim.dt) > 1e-12:
        raise ValueError(f"dt_s={dt_s} does not match the simulation step {sim.dt}")
    return sim.advance(indications)
