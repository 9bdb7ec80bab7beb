"""Delay, queue and travel-time measurement over simulation logs.

Delay is control delay over the sensing zone: time spent since entering the
zone minus the free-flow time for the distance actually covered.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from tsprl.sim.core import BUS, BusTrip, Crossing, Simulation, Vehicle

# Movements reported in the comparison figures.
REPORT_MOVEMENTS = ("EB_TH", "EB_LT", "SB_TH", "SB_LT")


def vehicle_delay(v: Vehicle, now: float, zone_ft: float = 800.0) -> float:
    if math.isnan(v.zone_entry_s):
        raise ValueError(f"vehicle {v.id} has not entered the sensing zone")
    covered = zone_ft - max(v.pos_ft, 0.0)
    return max(0.0, (now - v.zone_entry_s) - covered / v.free_flow_ftps)


def queue_length(lane: int, sim: Simulation) -> int:
    return int(sim.queue_lengths()[lane])


class MovementDelayRecord(NamedTuple):
    movement: str
    replicate: int
    n_vehicles: int
    mean_delay_s: float


class BusTripRecord(NamedTuple):
    bus_id: int
    check_in_s: float
    cross_s: float
    travel_time_s: float
    scenario: str
    replicate: int = 0


@dataclass
class ImpactWindow:
    t_checkin: float
    # movement -> (vehicle count, mean delay)
    movements: dict[str, tuple[int, float]]
    truncated: bool = False


def _mean_by_movement(crossings: Iterable[Crossing]) -> dict[str, tuple[int, float]]:
    sums: dict[str, list] = {}
    for c in crossings:
        if c.cls == BUS:
            continue
        sums.setdefault(c.movement, []).append(c.delay_s)
    return {m: (len(d), math.fsum(d) / len(d)) for m, d in sorted(sums.items())}


def tsp_impact_window(crossings: Iterable[Crossing], t_checkin: float, window_s: float = 300.0,
                      end_s: float | None = None) -> ImpactWindow:
    """Per-movement mean delay of general traffic crossing in ``[t_checkin, t_checkin + window_s]``."""
    t_end = t_checkin + window_s
    inside = [c for c in crossings if t_checkin <= c.t <= t_end]
    truncated = end_s is not None and end_s < t_end
    return ImpactWindow(t_checkin, _mean_by_movement(inside), truncated)


def pooled_window_delays(crossings: list[Crossing], checkins: Iterable[float],
                         window_s: float = 300.0) -> dict[str, tuple[int, float]]:
    """Mean delay per movement over the union of the windows after each check-in.

    A vehicle falling into two overlapping windows is counted once.
    """
    starts = sorted(checkins)
    seen = []
    for c in crossings:
        if c.cls != BUS and any(t0 <= c.t <= t0 + window_s for t0 in starts):
            seen.append(c)
    return _mean_by_movement(seen)


def movement_delay_records(crossings: Iterable[Crossing], replicate: int, t_from: float = 0.0,
                           t_to: float = math.inf) -> list[MovementDelayRecord]:
    kept = (c for c in crossings if t_from <= c.t < t_to)
    return [MovementDelayRecord(m, replicate, n, mean)
            for m, (n, mean) in _mean_by_movement(kept).items()]


def bus_trip_records(trips: dict[int, BusTrip], scenario: str, replicate: int = 0) -> list[BusTripRecord]:
    """Completed check-in to stop-line trips; ``scenario`` only labels them."""
    out = []
    for bus_id, trip in sorted(trips.items()):
        if math.isnan(trip.check_in_s) or math.isnan(trip.cross_s):
            continue
        out.append(BusTripRecord(bus_id, trip.check_in_s, trip.cross_s, trip.travel_time_s, scenario,
                                 replicate))
    return out


def combine_means(parts: Iterable[tuple[int, float]]) -> float:
    """Recombine (count, mean) pairs from a partition into the overall mean."""
    parts = [(n, m) for n, m in parts if n]
    total = sum(n for n, _ in parts)
    if not total:
        return math.nan
    return math.fsum(n * m for n, m in parts) / total


@dataclass(frozen=True)
class BoxStats:
    n: int
    mean: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def box_stats(values) -> BoxStats:
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("need at least one value")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return BoxStats(int(x.size), math.fsum(x) / x.size, float(x.min()), float(q1), float(med),
                    float(q3), float(x.max()))


def aggregate_replicates(records: Iterable[MovementDelayRecord]) -> dict[str, BoxStats]:
    """Box-plot statistics of per-replicate mean delay, per movement.

    The ``"ALL"`` entry summarises every record together.
    """
    by_movement: dict[str, list[float]] = {}
    for r in records:
        by_movement.setdefault(r.movement, []).append(r.mean_delay_s)
    if not by_movement:
        raise ValueError("need at least one replicate")
    out = {m: box_stats(v) for m, v in sorted(by_movement.items())}
    out["ALL"] = box_stats(v for vals in by_movement.values() for v in vals)
    return out


# ------------------------------------------------------------------ CSV


def write_movement_csv(path: str | Path, records: Iterable[MovementDelayRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["movement", "replicate", "n_vehicles", "mean_delay_s"])
        for r in records:
            w.writerow([r.movement, r.replicate, r.n_vehicles, repr(float(r.mean_delay_s))])


def write_bus_csv(path: str | Path, records: Iterable[BusTripRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "check_in_s", "cross_s", "travel_time_s", "scenario", "replicate"])
        for r in records:
            w.writerow([r.bus_id, repr(r.check_in_s), repr(r.cross_s), repr(r.travel_time_s),
                        r.scenario, r.replicate])
