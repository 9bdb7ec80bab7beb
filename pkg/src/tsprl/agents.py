"""Observations, rewards, the SC/TSP hand-off and the episode loops.

The signal-control (SC) agent runs whenever no bus is inside the sensing
zone. A bus check-in hands control to the transit-priority (TSP) agent until
the last checked-in bus crosses the stop line. Neither hand-off touches the
signal: the incoming agent continues from whatever phase and timers it finds.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from tsprl.config import RewardConfig, ScenarioConfig
from tsprl.rl import (
    DDQNTrainer, Experience, QNetwork, ReplayBuffer, epsilon_for_episode, forward,
    mask_invalid, select_action,
)
from tsprl.signals import (
    ActuatedConfig, Interval, SignalPlan, SignalState, actuated_tsp_adjust,
    apply_agent_action, fixed_time_decide, tick,
)
from tsprl.sim.core import SimEvent, Simulation
from tsprl.sim.geometry import N_LANES, N_PHASES, PHASE_LANES, PHASES, SIDE_STREET_LANES

log = logging.getLogger(__name__)

N_OBS_SC = N_LANES + N_PHASES
N_OBS_TSP = N_OBS_SC + 2 * 32

CONTROLLERS = ("rl-sc", "rl-tsp", "asc", "asc-tsp", "fixed")


class TrainingDivergedError(RuntimeError):
    pass


# ------------------------------------------------------------ observations


def build_state_sc(sim: Simulation, sig: SignalState) -> np.ndarray:
    """Vehicles per lane inside the sensing zone, then green elapsed per phase."""
    return np.concatenate([sim.lane_vehicle_counts().astype(np.float64), sig.signal_vector()])


def build_state_tsp(sim: Simulation, sig: SignalState) -> np.ndarray:
    position, speed = sim.encode_bus_cells()
    return np.concatenate([build_state_sc(sim, sig), position, speed])


def observation_scale(kind: str, n_cells: int = 32) -> np.ndarray:
    """Per-entry multipliers that bring raw observations to roughly unit range."""
    sc = np.concatenate([np.full(N_LANES, 1 / 40), np.full(N_PHASES, 1 / 60)])
    if kind == "sc":
        return sc
    return np.concatenate([sc, np.ones(n_cells), np.full(n_cells, 1 / 60)])


# ----------------------------------------------------------------- rewards


def outgoing_queue(queues, phase: int) -> int:
    """Longest queue over the lanes served by ``phase``."""
    return int(max(queues[ln] for ln in PHASE_LANES[phase]))


def piecewise_reward(delays, queues, switched: bool, outgoing_q: int, cfg: RewardConfig) -> float:
    """Negative mean delay with the side-street and switch-with-queue penalties.

    Both penalties apply when both conditions hold; no vehicles means a zero base.
    """
    # Exact rational arithmetic, rounded once, so the value does not depend on summation order.
    n = len(delays)
    r = -sum(map(Fraction, delays), Fraction(0)) / n if n else Fraction(0)
    if any(queues[ln] > cfg.side_queue_threshold for ln in SIDE_STREET_LANES):
        r -= Fraction(cfg.side_queue_penalty)
    if switched and outgoing_q > cfg.phase_queue_threshold:
        r -= Fraction(cfg.switch_queue_penalty)
    return float(r)


def _outgoing_default(sim: Simulation, sig: SignalState, switched: bool, queues) -> int:
    if not switched:
        return 0
    # Without a queue captured at the switch, fall back to the last ended green.
    phase = sig.history[-1].phase if sig.history else sig.active_phase
    return outgoing_queue(queues, phase)


def reward_sc(sim: Simulation, sig: SignalState, switched: bool, cfg: RewardConfig,
              outgoing_q: int | None = None) -> float:
    queues = sim.queue_lengths()
    if outgoing_q is None:
        outgoing_q = _outgoing_default(sim, sig, switched, queues)
    return piecewise_reward(sim.zone_delays(), queues, switched, outgoing_q, cfg)


def reward_tsp(sim: Simulation, sig: SignalState, switched: bool, cfg: RewardConfig,
               outgoing_q: int | None = None, bus_delays=None) -> float:
    """Negative bus delay with the same penalties as :func:`reward_sc`.

    ``bus_delays`` overrides the live measurement, which is how the final
    delay of a bus that has just checked out is scored.
    """
    if bus_delays is None:
        bus_delays = sim.bus_delays()
        if not bus_delays:
            raise ValueError("reward_tsp needs a checked-in bus")
    queues = sim.queue_lengths()
    if outgoing_q is None:
        outgoing_q = _outgoing_default(sim, sig, switched, queues)
    return piecewise_reward(bus_delays, queues, switched, outgoing_q, cfg)


# ---------------------------------------------------------------- hand-off


@dataclass
class Handoff:
    t: float
    direction: str  # "SC->TSP" or "TSP->SC"
    phase: int
    green_elapsed_s: float
    interval: int


@dataclass
class ControlMode:
    active: str = "SC"
    buses: set = field(default_factory=set)
    handoffs: list[Handoff] = field(default_factory=list)


def dispatch_control(mode: ControlMode, events: list[SimEvent], sig: SignalState,
                     tsp_enabled: bool = True) -> ControlMode:
    """Track checked-in buses and switch the controlling agent.

    The signal state is only read, to log what the incoming agent inherits.
    """
    for ev in events:
        if ev.kind == "checkin":
            mode.buses.add(ev.vehicle_id)
        elif ev.kind == "checkout":
            mode.buses.discard(ev.vehicle_id)
        else:
            continue
        want = "TSP" if (mode.buses and tsp_enabled) else "SC"
        if want != mode.active:
            mode.handoffs.append(Handoff(ev.t, f"{mode.active}->{want}", sig.active_phase,
                                         sig.green_elapsed_s, int(sig.interval)))
            mode.active = want
    return mode


# ------------------------------------------------------------- controllers


@dataclass
class AgentHandle:
    """One DDQN agent as seen from inside an episode."""
    kind: str  # "sc" or "tsp"
    net: QNetwork
    reward: RewardConfig
    epsilon: float = 0.0
    rng: np.random.Generator | None = None
    obs_scale: np.ndarray | None = None
    buffer: ReplayBuffer | None = None  # experiences are stored only when set
    terminal_on_checkout: bool = True

    @classmethod
    def from_trainer(cls, kind: str, trainer: DDQNTrainer, reward: RewardConfig,
                     epsilon: float) -> "AgentHandle":
        scale = trainer.obs_scale if trainer.cfg.normalize_obs else None
        return cls(kind, trainer.main, reward, epsilon, trainer.rng, scale, trainer.buffer,
                   trainer.cfg.terminal_on_checkout)

    @classmethod
    def frozen(cls, kind: str, net: QNetwork, reward: RewardConfig, normalize: bool) -> "AgentHandle":
        return cls(kind, net, reward, obs_scale=observation_scale(kind) if normalize else None)

    def observe(self, sim: Simulation, sig: SignalState) -> np.ndarray:
        return build_state_sc(sim, sig) if self.kind == "sc" else build_state_tsp(sim, sig)

    def q_values(self, s: np.ndarray) -> np.ndarray:
        return forward(self.net, s if self.obs_scale is None else s * self.obs_scale)


@dataclass
class _Pending:
    kind: str
    s: np.ndarray
    a: int
    switched: bool
    outgoing_q: int


@dataclass
class Episode:
    cfg: ScenarioConfig
    sim: Simulation
    sig: SignalState
    mode: ControlMode
    rewards: dict[str, list[float]] = field(default_factory=lambda: {"sc": [], "tsp": []})
    decisions: int = 0
    reward_log: list | None = None
    experiences: list | None = None  # every closed transition, when recording


class Controller:
    uses_tsp_agent = False

    def act(self, ep: Episode) -> None:
        raise NotImplementedError

    def on_handoff(self, ep: Episode, before: str, after: str) -> None:
        pass

    def finish(self, ep: Episode) -> None:
        pass


class FixedTimeController(Controller):
    def __init__(self, greens_s):
        self.greens_s = tuple(greens_s)

    def act(self, ep: Episode) -> None:
        fixed_time_decide(ep.sig, self.greens_s)


class ActuatedController(Controller):
    def __init__(self, cfg: ActuatedConfig, tsp: bool):
        self.cfg = replace(cfg, tsp_enabled=tsp)

    def act(self, ep: Episode) -> None:
        bus_present = bool(ep.sim.checked_in_buses())
        actuated_tsp_adjust(ep.sig, ep.sim.detector_states(), bus_present, self.cfg)


class RLController(Controller):
    """SC agent, optionally backed by a TSP agent for checked-in buses."""

    def __init__(self, sc: AgentHandle, tsp: AgentHandle | None = None):
        self.agents = {"sc": sc}
        if tsp is not None:
            self.agents["tsp"] = tsp
        self.uses_tsp_agent = tsp is not None
        self.pending: _Pending | None = None

    def _close(self, ep: Episode, s_next: np.ndarray, done: bool, bus_delays=None) -> None:
        p = self.pending
        self.pending = None
        agent = self.agents[p.kind]
        sim, sig = ep.sim, ep.sig
        if p.kind == "sc":
            r = reward_sc(sim, sig, p.switched, agent.reward, p.outgoing_q)
        else:
            r = reward_tsp(sim, sig, p.switched, agent.reward, p.outgoing_q, bus_delays)
        ep.rewards[p.kind].append(r)
        if ep.reward_log is not None:
            delays = list(bus_delays) if bus_delays is not None else (
                sim.zone_delays().tolist() if p.kind == "sc" else sim.bus_delays())
            ep.reward_log.append((sim.t, p.kind, delays, sim.queue_lengths().tolist(),
                                  p.switched, p.outgoing_q, r))
        e = Experience(p.s, p.a, s_next, r, done)
        if ep.experiences is not None:
            ep.experiences.append((p.kind, e))
        if agent.buffer is not None:
            agent.buffer.push(e)

    def act(self, ep: Episode) -> None:
        sig = ep.sig
        if not sig.agent_actionable:
            return
        kind = "tsp" if ep.mode.active == "TSP" and self.uses_tsp_agent else "sc"
        agent = self.agents[kind]
        s = agent.observe(ep.sim, sig)
        if self.pending is not None:
            self._close(ep, s, done=False)
        q = agent.q_values(s)
        if not np.isfinite(q).all():
            raise TrainingDivergedError(f"non-finite Q-values from the {kind} network at t={ep.sim.t:.1f}s")
        q = mask_invalid(q, sig.active_phase, sig.green_elapsed_s, sig.max_green_s())
        a = select_action(q, agent.epsilon, agent.rng)
        switched = a != sig.active_phase
        out_q = outgoing_queue(ep.sim.queue_lengths(), sig.active_phase) if switched else 0
        apply_agent_action(sig, a)
        self.pending = _Pending(kind, s, a, switched, out_q)
        ep.decisions += 1

    def on_handoff(self, ep: Episode, before: str, after: str) -> None:
        if self.pending is None:
            return
        agent = self.agents[self.pending.kind]
        s_next = agent.observe(ep.sim, ep.sig)
        if self.pending.kind == "tsp" and after == "SC":
            final = [t.travel_time_s - ep.cfg.geometry.dsrc_range_ft / ep.cfg.geometry.major_speed_ftps
                     for t in _just_crossed(ep)]
            self._close(ep, s_next, agent.terminal_on_checkout, [max(0.0, d) for d in final])
        else:
            self._close(ep, s_next, done=False)

    def finish(self, ep: Episode) -> None:
        # A transition still open at the end of the episode has no next state.
        self.pending = None


def _just_crossed(ep: Episode):
    t = ep.sim.t
    dt = ep.sim.dt
    trips = [trip for trip in ep.sim.bus_trips.values() if t - dt - 1e-9 <= trip.cross_s <= t + 1e-9]
    return trips or []


# ------------------------------------------------------------ episode loop


@dataclass
class EpisodeResult:
    sim: Simulation
    sig: SignalState
    mode: ControlMode
    rewards: dict[str, list[float]]
    decisions: int
    reward_log: list | None
    experiences: list | None
    indications: np.ndarray | None
    active_modes: np.ndarray | None
    wall_time_s: float


def make_simulation(cfg: ScenarioConfig, seed) -> Simulation:
    return Simulation(cfg.demand, cfg.geometry, cfg.idm, cfg.sim, seed)


def make_signal(cfg: ScenarioConfig) -> SignalState:
    return SignalState(SignalPlan.from_timing(cfg.signal, cfg.sim.dt_s))


def run_episode(cfg: ScenarioConfig, controller: Controller, seed, duration_s: float, *,
                record: bool = False, trajectory_writer=None, signal_writer=None) -> EpisodeResult:
    """Simulate ``duration_s`` seconds under ``controller``.

    With ``record`` the per-step lane indications, the controlling agent, the
    reward inputs and every closed transition are kept for inspection.
    ``trajectory_writer`` and ``signal_writer`` are csv writers that receive
    one row per vehicle per step and one row per step respectively.
    """
    t_wall = time.perf_counter()
    sim = make_simulation(cfg, seed)
    sim.trajectory_writer = trajectory_writer
    sig = make_signal(cfg)
    ep = Episode(cfg, sim, sig, ControlMode(),
                 reward_log=[] if record else None, experiences=[] if record else None)
    n = cfg.sim.ticks(duration_s)
    indications = np.zeros((n, N_LANES), dtype=np.int8) if record else None
    modes = np.zeros(n, dtype=np.int8) if record else None
    tsp = controller.uses_tsp_agent
    for k in range(n):
        controller.act(ep)
        ind = sig.lane_indications()
        events = sim.advance(ind)
        tick(sig)
        if signal_writer is not None:
            signal_writer.writerow([round(sim.t, 6), PHASES[sig.active_phase],
                                    Interval(sig.interval).name, round(sig.green_elapsed_s, 6)])
        if events:
            before = ep.mode.active
            dispatch_control(ep.mode, events, sig, tsp)
            if ep.mode.active != before:
                controller.on_handoff(ep, before, ep.mode.active)
        if record:
            indications[k] = ind
            modes[k] = ep.mode.active == "TSP"
    controller.finish(ep)
    return EpisodeResult(sim, sig, ep.mode, ep.rewards, ep.decisions, ep.reward_log, ep.experiences,
                         indications, modes, time.perf_counter() - t_wall)


# ---------------------------------------------------------------- training


@dataclass
class CurveRecord:
    episode: int
    avg_step_reward: float
    avg_bus_delay_s: float
    epsilon: float


@dataclass
class TrainingResult:
    trainer: DDQNTrainer
    records: list[CurveRecord]
    wall_times_s: list[float]


KIND_STREAM = {"sc": 1, "tsp": 2}


def make_trainer(cfg: ScenarioConfig, kind: str) -> DDQNTrainer:
    tcfg = cfg.trainer if kind == "sc" else cfg.trainer_tsp
    rng = np.random.default_rng([cfg.run.seed, KIND_STREAM[kind]])
    n_in = N_OBS_SC if kind == "sc" else N_OBS_TSP
    return DDQNTrainer(n_in, tcfg, rng, observation_scale(kind, cfg.geometry.n_cells))


def training_config(cfg: ScenarioConfig, kind: str) -> ScenarioConfig:
    """SC trains without buses; the TSP agent needs them."""
    return replace(cfg, demand=replace(cfg.demand, buses=kind == "tsp"))


def _bus_delay_mean(sim: Simulation, geometry) -> float:
    free = geometry.dsrc_range_ft / geometry.major_speed_ftps
    delays = [max(0.0, t.travel_time_s - free) for t in sim.bus_trips.values()
              if not (math.isnan(t.check_in_s) or math.isnan(t.cross_s))]
    return math.fsum(delays) / len(delays) if delays else math.nan


def train_one_episode(cfg: ScenarioConfig, kind: str, trainer: DDQNTrainer,
                      frozen_sc: AgentHandle | None = None) -> tuple[CurveRecord, float]:
    episode = trainer.episodes_trained
    tcfg = trainer.cfg
    eps = epsilon_for_episode(episode, tcfg)
    reward_cfg = cfg.reward if kind == "sc" else cfg.reward_tsp
    learner = AgentHandle.from_trainer(kind, trainer, reward_cfg, eps)
    if kind == "sc":
        controller = RLController(learner)
    else:
        if frozen_sc is None:
            raise ValueError("TSP training needs a frozen SC agent")
        controller = RLController(frozen_sc, learner)
    res = run_episode(training_config(cfg, kind), controller, cfg.run.seed, cfg.run.episode_s)
    rewards = res.rewards[kind]
    if any(not math.isfinite(r) for r in rewards):
        raise TrainingDivergedError(f"non-finite reward in episode {episode}")
    avg = math.fsum(rewards) / len(rewards) if rewards else math.nan
    trainer.train_end_of_episode()
    if not all(np.isfinite(p).all() for p in trainer.main.params()):
        raise TrainingDivergedError(f"network weights became non-finite after episode {episode}")
    bus = _bus_delay_mean(res.sim, cfg.geometry) if kind == "tsp" else math.nan
    return CurveRecord(episode, avg, bus, eps), res.wall_time_s


def run_training(cfg: ScenarioConfig, kind: str, episodes: int | None = None,
                 trainer: DDQNTrainer | None = None, records: list[CurveRecord] | None = None,
                 frozen_sc: AgentHandle | None = None,
                 on_episode: Callable[[DDQNTrainer, list[CurveRecord]], None] | None = None,
                 ) -> TrainingResult:
    """Train until ``episodes`` episodes are complete, continuing ``trainer`` if given.

    ``on_episode`` runs after every episode (checkpointing hooks in here).
    """
    if kind not in KIND_STREAM:
        raise ValueError(f"unknown agent kind {kind!r}")
    episodes = cfg.run.episodes if episodes is None else episodes
    trainer = trainer or make_trainer(cfg, kind)
    records = list(records or [])
    walls = []
    while trainer.episodes_trained < episodes:
        rec, wall = train_one_episode(cfg, kind, trainer, frozen_sc)
        records.append(rec)
        walls.append(wall)
        log.info("%s episode %d: reward %.3f eps %.3f (%.1fs)", kind, rec.episode,
                 rec.avg_step_reward, rec.epsilon, wall)
        if on_episode is not None:
            on_episode(trainer, records)
    return TrainingResult(trainer, records, walls)


def run_training_sc(cfg: ScenarioConfig, **kw) -> TrainingResult:
    return run_training(cfg, "sc", **kw)


def run_training_tsp(cfg: ScenarioConfig, frozen_sc: QNetwork, **kw) -> TrainingResult:
    sc = AgentHandle.frozen("sc", frozen_sc, cfg.reward, cfg.trainer.normalize_obs)
    return run_training(cfg, "tsp", frozen_sc=sc, **kw)


# -------------------------------------------------------------- evaluation


def build_controller(cfg: ScenarioConfig, controller_id: str, sc_net: QNetwork | None = None,
                     tsp_net: QNetwork | None = None) -> Controller:
    if controller_id not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller_id!r}; valid: {', '.join(CONTROLLERS)}")
    if controller_id == "fixed":
        return FixedTimeController(cfg.signal.fixed_time_green_s)
    if controller_id in ("asc", "asc-tsp"):
        return ActuatedController(cfg.actuated, tsp=controller_id == "asc-tsp")
    if sc_net is None:
        raise ValueError(f"{controller_id} needs a trained SC network")
    sc = AgentHandle.frozen("sc", sc_net, cfg.reward, cfg.trainer.normalize_obs)
    if controller_id == "rl-sc":
        return RLController(sc)
    if tsp_net is None:
        raise ValueError("rl-tsp needs a trained TSP network")
    return RLController(sc, AgentHandle.frozen("tsp", tsp_net, cfg.reward_tsp,
                                               cfg.trainer_tsp.normalize_obs))


def replicate_seed(cfg: ScenarioConfig, i: int) -> list[int]:
    # Disjoint from the training stream, which is seeded with run.seed alone.
    return [cfg.run.seed, 1 + i]


@dataclass
class ReplicateSummary:
    replicate: int
    crossings: list
    bus_trips: dict
    end_s: float
    decisions: int
    handoffs: int
    wall_time_s: float


def run_replicate(cfg: ScenarioConfig, controller_id: str, i: int, sc_net=None, tsp_net=None
                  ) -> ReplicateSummary:
    controller = build_controller(cfg, controller_id, sc_net, tsp_net)
    res = run_episode(cfg, controller, replicate_seed(cfg, i), cfg.run.eval_duration_s)
    return ReplicateSummary(i, res.sim.crossings, res.sim.bus_trips, res.sim.t, res.decisions,
                            len(res.mode.handoffs), res.wall_time_s)


def _replicate_job(args):
    return run_replicate(*args)


def evaluate(cfg: ScenarioConfig, controller_id: str, replicates: int, sc_net=None, tsp_net=None,
             jobs: int = 1) -> list[ReplicateSummary]:
    """Seeded replicates, fanned out over ``jobs`` processes and returned in index order."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    build_controller(cfg, controller_id, sc_net, tsp_net)  # fail fast on bad ids
    args = [(cfg, controller_id, i, sc_net, tsp_net) for i in range(replicates)]
    if jobs <= 1:
        return [_replicate_job(a) for a in args]
    import multiprocessing as mp
    with mp.get_context("fork").Pool(min(jobs, replicates)) as pool:
        return pool.map(_replicate_job, args)
