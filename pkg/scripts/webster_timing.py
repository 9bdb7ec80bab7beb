"""Measure saturation flow in the simulator and derive fixed-time greens.

A standing queue is released on green and the discharge headway is read from
the stop-line crossings of the 11th to 40th vehicle (start-up vehicles are skipped). The greens follow
Webster's rule with every critical lane at the target v/c.

    python scripts/webster_timing.py
"""

import argparse

import numpy as np

from tsprl.signals import SignalTiming, webster_fixed_greens
from tsprl.sim.core import GREEN, RED, Simulation
from tsprl.sim.demand import DemandConfig
from tsprl.sim.geometry import LANE_INDEX, PHASES

NO_DEMAND = DemandConfig(0.0, 0.0, 0.0, 0.0, buses=False)


def saturation_flow(lane: int, n_queue: int = 40, skip: int = 10) -> float:
    sim = Simulation(NO_DEMAND, seed=0)
    spacing = sim.geometry.car_length_ft + sim.idm.s0
    for k in range(n_queue):
        sim.place_vehicle(lane, k * spacing + 1.0, 0.0)
    ind = np.full(10, RED, dtype=np.int8)
    ind[lane] = GREEN
    while len(sim.crossings) < n_queue:
        sim.advance(ind)
    times = [c.t for c in sim.crossings][skip:]
    headway = (times[-1] - times[0]) / (len(times) - 1)
    return 3600.0 / headway


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lost-time", type=float, default=5.0, help="lost time per phase (s)")
    ap.add_argument("--target-vc", type=float, default=0.95)
    args = ap.parse_args()

    demand = DemandConfig()
    major = saturation_flow(LANE_INDEX["EB_TH1"])
    minor = saturation_flow(LANE_INDEX["SB_TH"])
    print(f"saturation flow: major {major:.0f} veh/h/lane, minor {minor:.0f} veh/h/lane")
    # Critical per-lane flows in phase order NS_Left, NS_Through, EW_Left, EW_Through.
    flows = [demand.minor_left_vph, demand.minor_through_vph, demand.major_left_vph,
             demand.major_through_vph / 2]
    sat = [round(minor, -1), round(minor, -1), round(major, -1), round(major, -1)]
    cycle, greens = webster_fixed_greens(flows, sat, args.lost_time, args.target_vc)
    print(f"cycle {cycle:.1f} s")
    for name, g, cur in zip(PHASES, greens, SignalTiming().fixed_time_green_s):
        print(f"  {name:<11} green {g:5.1f} s   (configured {cur:.1f} s)")


if __name__ == "__main__":
    main()
