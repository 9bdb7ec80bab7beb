"""Phase state machine and the conventional controllers built on it.

All timers are integer step counts so that a 3 s yellow is exactly 30 steps of
0.1 s. The transition functions mutate the :class:`SignalState` they are given
and return it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from tsprl.sim.core import GREEN, RED, YELLOW
from tsprl.sim.geometry import (
    BUS_PHASE, EW_LEFT, EW_THROUGH, N_LANES, N_PHASES, NS_LEFT, NS_THROUGH,
    PHASE_LANES, PHASES,
)

# Free-mode actuated service order.
RING_ORDER = (EW_THROUGH, EW_LEFT, NS_THROUGH, NS_LEFT)


class SignalContractError(ValueError):
    """An action was issued that the state machine must refuse."""


class Interval(IntEnum):
    GREEN = 0
    YELLOW = 1
    ALL_RED = 2


@dataclass(frozen=True)
class Phase:
    id: int
    name: str
    lanes: tuple[int, ...]
    min_green_s: float
    max_green_s: float

    def __post_init__(self):
        if not 0 < self.min_green_s <= self.max_green_s:
            raise ValueError(f"{self.name}: need 0 < min_green <= max_green")


@dataclass(frozen=True)
class SignalTiming:
    """Timing inputs shared by every controller.

    ``fixed_time_green_s`` is indexed in agent phase order
    (NS_Left, NS_Through, EW_Left, EW_Through).
    """
    fixed_time_green_s: tuple[float, ...] = (11.0, 12.1, 6.8, 28.6)
    min_green_through_s: float = 10.0
    min_green_left_s: float = 5.0
    max_green_factor: float = 1.25
    yellow_s: float = 3.0
    all_red_s: float = 1.0
    decision_interval_s: float = 3.0


@dataclass(frozen=True)
class ActuatedConfig:
    passage_time_s: float = 3.0
    recall: tuple[bool, ...] = (False, False, False, False)
    tsp_enabled: bool = False
    tsp_max_extension_s: float = 20.0
    tsp_green_extension: bool = True
    tsp_red_truncation: bool = True
    tsp_phase_skip: bool = True


def compute_max_green(fixed_time_green_s, factor: float = 1.25) -> tuple[float, ...]:
    greens = tuple(float(g) for g in fixed_time_green_s)
    if any(g <= 0 for g in greens):
        raise ValueError("fixed-time greens must be positive")
    return tuple(factor * g for g in greens)


def webster_fixed_greens(lane_flows_vph, saturation_vph, lost_time_per_phase_s: float,
                         target_vc: float = 0.95) -> tuple[float, tuple[float, ...]]:
    """Cycle and per-phase greens that put every critical lane at ``target_vc``.

    ``lane_flows_vph`` and ``saturation_vph`` hold the critical per-lane flow
    and the saturation flow of each phase.
    """
    y = np.asarray(lane_flows_vph, dtype=float) / np.asarray(saturation_vph, dtype=float)
    total_lost = lost_time_per_phase_s * len(y)
    if y.sum() >= target_vc:
        raise ValueError("demand exceeds capacity at the target v/c")
    cycle = total_lost / (1.0 - y.sum() / target_vc)
    return float(cycle), tuple(float(g) for g in y * cycle / target_vc)


@dataclass(frozen=True)
class SignalPlan:
    phases: tuple[Phase, ...]
    dt_s: float = 0.1
    yellow_s: float = 3.0
    all_red_s: float = 1.0
    decision_interval_s: float = 3.0

    def __post_init__(self):
        if len(self.phases) != N_PHASES:
            raise ValueError("exactly four phases are required")
        served = sorted(ln for p in self.phases for ln in p.lanes)
        if served != list(range(N_LANES)):
            raise ValueError("every lane must be served by exactly one phase")
        object.__setattr__(self, "min_ticks", tuple(self._ticks(p.min_green_s) for p in self.phases))
        object.__setattr__(self, "max_ticks", tuple(self._ticks(p.max_green_s) for p in self.phases))
        object.__setattr__(self, "yellow_ticks", self._ticks(self.yellow_s))
        object.__setattr__(self, "all_red_ticks", self._ticks(self.all_red_s))
        object.__setattr__(self, "decision_ticks", self._ticks(self.decision_interval_s))

    def _ticks(self, seconds: float) -> int:
        # Durations snap to the integration grid.
        return int(round(seconds / self.dt_s))

    @classmethod
    def from_timing(cls, timing: SignalTiming, dt_s: float = 0.1) -> "SignalPlan":
        max_green = compute_max_green(timing.fixed_time_green_s, timing.max_green_factor)
        mins = {NS_LEFT: timing.min_green_left_s, EW_LEFT: timing.min_green_left_s,
                NS_THROUGH: timing.min_green_through_s, EW_THROUGH: timing.min_green_through_s}
        phases = tuple(Phase(i, PHASES[i], PHASE_LANES[i], mins[i], max_green[i])
                       for i in range(N_PHASES))
        return cls(phases, dt_s, timing.yellow_s, timing.all_red_s, timing.decision_interval_s)


@dataclass
class GreenRecord:
    phase: int
    start_s: float
    green_s: float
    extension_s: float = 0.0
    rested: bool = False  # held past max green because nothing else was calling


@dataclass
class SignalState:
    plan: SignalPlan
    active_phase: int = EW_THROUGH
    interval: Interval = Interval.GREEN
    interval_ticks: int = 0
    green_ticks: int = 0
    pending_phase: int | None = None
    next_decision_ticks: int = -1
    # actuated bookkeeping
    gap_ticks: int = 0
    calls: list = field(default_factory=lambda: [False] * N_PHASES)
    extension_ticks: int = 0
    rested: bool = False
    clock_ticks: int = 0
    green_start_ticks: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.next_decision_ticks < 0:
            self.next_decision_ticks = self.plan.min_ticks[self.active_phase]

    @property
    def dt(self) -> float:
        return self.plan.dt_s

    @property
    def green_elapsed_s(self) -> float:
        return self.green_ticks * self.plan.dt_s

    @property
    def interval_elapsed_s(self) -> float:
        return self.interval_ticks * self.plan.dt_s

    @property
    def agent_actionable(self) -> bool:
        return self.interval == Interval.GREEN and self.green_ticks >= self.next_decision_ticks

    @property
    def at_max_green(self) -> bool:
        return self.green_ticks >= self.plan.max_ticks[self.active_phase]

    def max_green_s(self, phase: int | None = None) -> float:
        """Max green as enforced, i.e. snapped to the step grid."""
        p = self.active_phase if phase is None else phase
        return self.plan.max_ticks[p] * self.plan.dt_s

    def lane_indications(self) -> np.ndarray:
        ind = np.full(N_LANES, RED, dtype=np.int8)
        if self.interval == Interval.GREEN:
            ind[list(PHASE_LANES[self.active_phase])] = GREEN
        elif self.interval == Interval.YELLOW:
            ind[list(PHASE_LANES[self.active_phase])] = YELLOW
        return ind

    def signal_vector(self) -> np.ndarray:
        """Green elapsed for the active phase, zeros elsewhere and during clearance."""
        vec = np.zeros(N_PHASES)
        if self.interval == Interval.GREEN:
            vec[self.active_phase] = self.green_elapsed_s
        return vec


def start_transition(sig: SignalState, next_phase: int) -> SignalState:
    """End the active green: Yellow, then AllRed, then ``next_phase`` green."""
    if sig.interval != Interval.GREEN:
        raise SignalContractError("a transition can only start from green")
    sig.history.append(GreenRecord(sig.active_phase, sig.green_start_ticks * sig.dt,
                                   sig.green_elapsed_s, sig.extension_ticks * sig.dt, sig.rested))
    sig.interval = Interval.YELLOW
    sig.interval_ticks = 0
    sig.pending_phase = next_phase
    return sig


def tick(sig: SignalState) -> SignalState:
    """Advance the interval timers by one integration step."""
    plan = sig.plan
    sig.clock_ticks += 1
    if sig.interval == Interval.GREEN:
        sig.green_ticks += 1
        sig.interval_ticks += 1
    elif sig.interval == Interval.YELLOW:
        sig.interval_ticks += 1
        if sig.interval_ticks >= plan.yellow_ticks:
            sig.interval = Interval.ALL_RED
            sig.interval_ticks = 0
    else:
        sig.interval_ticks += 1
        if sig.interval_ticks >= plan.all_red_ticks:
            sig.interval = Interval.GREEN
            sig.active_phase = sig.pending_phase
            sig.pending_phase = None
            sig.interval_ticks = 0
            sig.green_ticks = 0
            sig.green_start_ticks = sig.clock_ticks
            sig.next_decision_ticks = plan.min_ticks[sig.active_phase]
            sig.gap_ticks = 0
            sig.extension_ticks = 0
            sig.rested = False
            sig.calls[sig.active_phase] = False
    return sig


def apply_agent_action(sig: SignalState, chosen_phase: int) -> SignalState:
    """Extend the active green by one decision interval or switch phases.

    An extension never runs past max green; the next decision point is
    clipped to it, where masking must then force a switch.
    """
    if not sig.agent_actionable:
        raise SignalContractError("agent action issued while the signal is not actionable")
    if not 0 <= chosen_phase < N_PHASES:
        raise SignalContractError(f"unknown phase {chosen_phase}")
    if chosen_phase == sig.active_phase:
        cap = sig.plan.max_ticks[sig.active_phase]
        if sig.green_ticks >= cap:
            raise SignalContractError("cannot extend a phase that has reached max green")
        sig.next_decision_ticks = min(sig.green_ticks + sig.plan.decision_ticks, cap)
        return sig
    return start_transition(sig, chosen_phase)


# --------------------------------------------------------------- actuated


def _register_calls(sig: SignalState, detectors, cfg: ActuatedConfig) -> None:
    for p in range(N_PHASES):
        if p == sig.active_phase and sig.interval == Interval.GREEN:
            continue
        if not sig.calls[p] and any(detectors[ln] for ln in PHASE_LANES[p]):
            sig.calls[p] = True


def _has_demand(sig: SignalState, p: int, cfg: ActuatedConfig, skip_recall: bool) -> bool:
    return sig.calls[p] or (cfg.recall[p] and not skip_recall)


def next_in_ring(sig: SignalState, cfg: ActuatedConfig, skip_recall: bool = False) -> int | None:
    """First phase after the active one in ring order that has demand."""
    k = RING_ORDER.index(sig.active_phase)
    for step in range(1, N_PHASES):
        p = RING_ORDER[(k + step) % N_PHASES]
        if _has_demand(sig, p, cfg, skip_recall):
            return p
    return None


def actuated_decide(sig: SignalState, detectors, cfg: ActuatedConfig) -> SignalState:
    """Fully actuated free-mode control, evaluated once per integration step.

    Green is held while served-lane actuations keep arriving within the
    passage time; it ends on gap-out or max-out when another phase is
    calling, and rests otherwise.
    """
    return _actuated(sig, detectors, cfg, bus_present=False)


def actuated_tsp_adjust(sig: SignalState, detectors, bus_present: bool,
                        cfg: ActuatedConfig) -> SignalState:
    """Actuated control with conventional transit priority for the EB bus.

    With a checked-in bus and the bus phase green, termination is held for
    at most ``tsp_max_extension_s``; with the bus phase red, conflicting
    greens end as soon as their minimum green is served. Without a bus (or
    with TSP disabled) this is :func:`actuated_decide`.
    """
    return _actuated(sig, detectors, cfg, bus_present=bus_present and cfg.tsp_enabled)


def _actuated(sig: SignalState, detectors, cfg: ActuatedConfig, bus_present: bool) -> SignalState:
    plan = sig.plan
    _register_calls(sig, detectors, cfg)
    if bus_present and not (sig.interval == Interval.GREEN and sig.active_phase == BUS_PHASE):
        sig.calls[BUS_PHASE] = True
    if sig.interval != Interval.GREEN:
        return sig

    p = sig.active_phase
    if any(detectors[ln] for ln in PHASE_LANES[p]):
        sig.gap_ticks = 0
    else:
        sig.gap_ticks += 1
    if sig.green_ticks < plan.min_ticks[p]:
        return sig

    skip_recall = bus_present and cfg.tsp_phase_skip
    nxt = next_in_ring(sig, cfg, skip_recall)
    at_max = sig.green_ticks >= plan.max_ticks[p]
    if nxt is None:
        if at_max:
            sig.rested = True
        return sig

    passage = int(round(cfg.passage_time_s / plan.dt_s))
    terminate = sig.gap_ticks > passage or at_max

    if bus_present:
        if p == BUS_PHASE and cfg.tsp_green_extension:
            limit = int(round(cfg.tsp_max_extension_s / plan.dt_s))
            if terminate and sig.extension_ticks < limit:
                sig.extension_ticks += 1
                return sig
        elif p != BUS_PHASE and cfg.tsp_red_truncation:
            terminate = True
    if terminate:
        start_transition(sig, nxt)
    return sig


def fixed_time_decide(sig: SignalState, greens_s) -> SignalState:
    """Pretimed operation in ring order with the given per-phase greens."""
    if sig.interval != Interval.GREEN:
        return sig
    if sig.green_ticks >= int(round(greens_s[sig.active_phase] / sig.plan.dt_s)):
        k = RING_ORDER.index(sig.active_phase)
        start_transition(sig, RING_ORDER[(k + 1) % N_PHASES])
    return sig
