import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ALL_GREEN, ALL_RED, NO_DEMAND
from tsprl.sim.core import (
    BUS, GREEN, RED, SimConfig, Simulation, SimulationIntegrityError, advance_simulation,
)
from tsprl.sim.demand import ArrivalProcess, DemandConfig
from tsprl.sim.geometry import (
    LANE_INDEX, LANE_PHASE, LANES, N_LANES, PHASE_LANES, NetworkGeometry,
)
from tsprl.sim.idm import IdmParams, idm_acceleration

TEXTBOOK_IDM = IdmParams(a_max=4.5, b=6.5, s0=8.0, time_headway=1.2)


# ------------------------------------------------------------------- IDM

def test_idm_free_road_equilibrium():
    assert abs(idm_acceleration(58.7, 58.7, 1e9, 0.0, TEXTBOOK_IDM)) < 1e-6


def test_idm_standstill_equilibrium():
    assert idm_acceleration(0.0, 58.7, TEXTBOOK_IDM.s0, 0.0, TEXTBOOK_IDM) == 0.0


def test_idm_matches_hand_evaluation():
    v, v0, gap, dv = 30.0, 58.7, 100.0, 10.0
    a, b, s0, T = 4.5, 6.5, 8.0, 1.2
    s_star = s0 + v * T + v * dv / (2 * math.sqrt(a * b))
    expected = a * (1 - (v / v0) ** 4 - (s_star / gap) ** 2)
    assert abs(idm_acceleration(v, v0, gap, dv, TEXTBOOK_IDM) - expected) < 1e-9


@pytest.mark.parametrize("gap", [0.0, -1.0])
def test_idm_rejects_non_positive_gap(gap):
    with pytest.raises(ValueError):
        idm_acceleration(10.0, 58.7, gap, 0.0)


# ------------------------------------------------------------- stepping

def test_empty_step_has_no_events(empty_sim):
    events = advance_simulation(empty_sim, 0.1, ALL_GREEN)
    assert events == []
    assert empty_sim.t == pytest.approx(0.1)


def test_step_size_must_match(empty_sim):
    with pytest.raises(ValueError):
        advance_simulation(empty_sim, 0.2, ALL_GREEN)


def test_dt_must_divide_decision_interval():
    with pytest.raises(ValueError):
        SimConfig(dt_s=0.7)


def test_car_near_stop_line_crosses_within_one_second(empty_sim):
    empty_sim.place_vehicle(LANE_INDEX["EB_TH1"], 50.0, 58.7)
    crossed_at = None
    for _ in range(10):
        ev = empty_sim.advance(ALL_GREEN)
        if any(e.kind == "cross" for e in ev):
            crossed_at = next(e.t for e in ev if e.kind == "cross")
            break
    # Constant speed: 50 / 58.7 s.
    assert crossed_at is not None and crossed_at <= 1.0
    assert crossed_at == pytest.approx(50.0 / 58.7, abs=1e-9)


def test_bus_checks_in_on_first_step_inside_range(empty_sim):
    v0, dt = 58.7, 0.1
    empty_sim.place_vehicle(LANE_INDEX["EB_TH2"], 1000.0, v0, BUS)
    # Trace oracle: first k with 1000 - k*dt*v0 <= 800.
    k_expected = next(k for k in range(1, 100) if 1000.0 - k * dt * v0 <= 800.0)
    for k in range(1, 100):
        ev = empty_sim.advance(ALL_GREEN)
        if any(e.kind == "checkin" for e in ev):
            assert k == k_expected
            t = next(e.t for e in ev if e.kind == "checkin")
            assert (k - 1) * dt < t <= k * dt
            break
    else:
        pytest.fail("no check-in event")


def test_overlapping_placement_is_fatal(empty_sim):
    empty_sim.place_vehicle(0, 100.0)
    with pytest.raises(SimulationIntegrityError):
        empty_sim.place_vehicle(0, 105.0)


# -------------------------------------------------------------- sensing

def test_lane_counts_empty(empty_sim):
    assert empty_sim.lane_vehicle_counts().tolist() == [0] * 10


def test_lane_counts_placement():
    sim = Simulation(NO_DEMAND, seed=0)
    for pos in (100.0, 300.0, 700.0, 850.0):
        sim.place_vehicle(LANE_INDEX["EB_TH1"], pos)
    assert sim.lane_vehicle_counts().tolist() == [3, 0, 0, 0, 0, 0, 0, 0, 0, 0]


def test_lane_counts_left_turn_queue():
    sim = Simulation(NO_DEMAND, seed=0)
    for k in range(20):
        sim.place_vehicle(LANE_INDEX["SB_LT"], k * 20.0)
    assert sim.lane_vehicle_counts()[9] == 20


def test_bus_cells_empty(empty_sim):
    pos, speed = empty_sim.encode_bus_cells()
    assert not pos.any() and not speed.any()
    assert pos.shape == speed.shape == (32,)


@pytest.mark.parametrize("x, v, cell", [(790.0, 40.0, 0), (10.0, 12.0, 31), (400.0, 44.0, 16)])
def test_bus_cell_index(x, v, cell):
    sim = Simulation(NO_DEMAND, seed=0)
    sim.place_vehicle(LANE_INDEX["EB_TH2"], x, v, BUS)
    pos, speed = sim.encode_bus_cells()
    assert pos[cell] == 1 and pos.sum() == 1
    assert speed[cell] == v and np.count_nonzero(speed) == 1


def test_two_buses_in_one_cell_rejected():
    # Short buses make two fronts in one 25 ft cell physically possible.
    sim = Simulation(NO_DEMAND, NetworkGeometry(bus_length_ft=5.0), seed=0)
    sim.place_vehicle(LANE_INDEX["EB_TH2"], 0.0, 0.0, BUS)
    sim.place_vehicle(LANE_INDEX["EB_TH2"], 10.0, 0.0, BUS)
    with pytest.raises(ValueError):
        sim.encode_bus_cells()


def test_detectors_empty(empty_sim):
    assert not empty_sim.detector_states().any()


@pytest.mark.parametrize("x, hit", [(2.0, True), (100.0, False), (40.0, True), (-14.0, True),
                                    (-16.0, False)])
def test_detector_overlap(x, hit):
    # Occupied iff [x, x + 15] meets [0, 40].
    sim = Simulation(NO_DEMAND, seed=0)
    sim.place_vehicle(LANE_INDEX["NB_TH"], x)
    det = sim.detector_states()
    assert det[LANE_INDEX["NB_TH"]] == hit
    assert det.sum() == int(hit)


def test_queue_placement():
    sim = Simulation(NO_DEMAND, seed=0)
    ln = LANE_INDEX["WB_LT"]
    for k in range(5):
        sim.place_vehicle(ln, k * 25.0, 0.0)
    sim.place_vehicle(ln, 300.0, 30.0)
    assert sim.queue_lengths()[ln] == 5


def test_queue_not_contiguous():
    sim = Simulation(NO_DEMAND, seed=0)
    ln = LANE_INDEX["WB_LT"]
    sim.place_vehicle(ln, 50.0, 30.0)
    sim.place_vehicle(ln, 200.0, 0.0)
    assert sim.queue_lengths()[ln] == 0


# -------------------------------------------------------------- arrivals

def test_zero_volume_never_spawns():
    sim = Simulation(NO_DEMAND, seed=3)
    for _ in range(3000):
        sim.advance(ALL_GREEN)
    assert sim.n_vehicles == 0 and not sim.crossings


def test_poisson_count_within_three_sigma():
    proc = ArrivalProcess(DemandConfig(seed=11, buses=False))
    n = sum(1 for _, m in proc.pop_due(3600.0) if m == "EB_TH")
    assert abs(n - 1440) <= 3 * math.sqrt(1440)


def test_bus_schedule_four_hours():
    for seed in range(20):
        proc = ArrivalProcess(DemandConfig(seed=seed))
        buses = [t for t, m in proc.pop_due(4 * 3600.0) if m == "BUS"]
        assert 12 <= len(buses) <= 16
        assert all(b - a >= 660.0 for a, b in zip(buses, buses[1:]))


def test_bus_checkins_spaced_in_simulation():
    sim = Simulation(DemandConfig(0.0, 0.0, 0.0, 0.0), seed=2)
    checkins = []
    for _ in range(int(4 * 3600 / 0.1)):
        checkins += [e.t for e in sim.advance(ALL_GREEN) if e.kind == "checkin"]
    assert 12 <= len(checkins) <= 16
    assert all(b - a >= 660.0 - 1e-9 for a, b in zip(checkins, checkins[1:]))


def test_demand_validation():
    with pytest.raises(ValueError):
        DemandConfig(major_through_vph=-1.0)
    with pytest.raises(ValueError):
        DemandConfig(bus_headway_jitter_s=900.0)


def test_geometry_invariants():
    geo = NetworkGeometry()
    assert len(geo.lanes) == N_LANES == 10
    assert sorted(ln for p in PHASE_LANES for ln in p) == list(range(10))
    assert [LANES[i] for i in PHASE_LANES[LANE_PHASE[0]]][0] == "EB_TH1"
    with pytest.raises(ValueError):
        NetworkGeometry(dsrc_range_ft=700.0)
    with pytest.raises(ValueError):
        NetworkGeometry(link_length_ft=700.0)


# ------------------------------------------------------------ properties

def _cycle_indications(k: int, green_steps: int) -> np.ndarray:
    # Crude two-phase alternation, enough to exercise stopping and discharge.
    ind = np.full(10, RED, dtype=np.int8)
    major = (k // green_steps) % 2 == 0
    for ln in range(10):
        if (ln < 6) == major:
            ind[ln] = GREEN
    return ind


def _run(seed: int, steps: int, green_steps: int = 300):
    sim = Simulation(DemandConfig(seed=seed), seed=seed)
    events = []
    for k in range(steps):
        events += sim.advance(_cycle_indications(k, green_steps))
    return sim, events


@given(seed=st.integers(0, 2**31 - 1))
def test_determinism(seed):
    a, ea = _run(seed, 600)
    b, eb = _run(seed, 600)
    assert ea == eb
    assert a.crossings == b.crossings
    # repr so that NaN fields compare equal
    assert repr(a.vehicles()) == repr(b.vehicles())


@given(seed=st.integers(0, 2**31 - 1), green_steps=st.integers(50, 400))
def test_no_overlap_and_conservation(seed, green_steps):
    sim = Simulation(DemandConfig(seed=seed, volume_scale=1.3), seed=seed)
    for k in range(1200):
        sim.advance(_cycle_indications(k, green_steps))
        if k % 100 == 0:
            _assert_no_overlap(sim)
    _assert_no_overlap(sim)
    for m, (spawned, crossed, present, waiting) in sim.conservation().items():
        assert spawned == crossed + present + waiting, m


def _assert_no_overlap(sim):
    by_lane = {}
    for v in sim.vehicles():
        by_lane.setdefault(v.lane, []).append(v)
    for vs in by_lane.values():
        for lead, fol in zip(vs, vs[1:]):
            assert lead.pos_ft + lead.length_ft <= fol.pos_ft + 1e-6
        assert all(v.speed_ftps >= 0 for v in vs)


@given(seed=st.integers(0, 2**31 - 1))
def test_red_compliance_and_monotone_positions(seed):
    sim = Simulation(DemandConfig(seed=seed), seed=seed)
    last = {}
    for k in range(900):
        sim.advance(_cycle_indications(k, 200))
        for v in sim.vehicles():
            assert v.pos_ft <= last.get(v.id, math.inf) + 1e-9
            last[v.id] = v.pos_ft
    for c in sim.crossings:
        assert c.indication == GREEN or c.committed


def test_bus_checkin_precedes_checkout_once():
    sim = Simulation(DemandConfig(seed=5), seed=5)
    events = []
    for k in range(int(3600 / 0.1)):
        events += sim.advance(_cycle_indications(k, 400))
    buses = {e.vehicle_id for e in events if e.cls == BUS}
    assert buses
    for b in buses:
        kinds = [e.kind for e in events if e.vehicle_id == b and e.kind in ("checkin", "checkout")]
        assert kinds in (["checkin", "checkout"], ["checkin"])
