"""Vehicle arrivals: Poisson streams per movement plus a jittered bus schedule.

Each movement draws from its own child generator so that the arrival times
depend only on the seed, never on what the signal controller does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tsprl.sim.geometry import MOVEMENTS


@dataclass(frozen=True)
class DemandConfig:
    # Hourly volumes per direction (EB = WB, NB = SB).
    major_through_vph: float = 1440.0
    major_left_vph: float = 171.0
    minor_through_vph: float = 275.0
    minor_left_vph: float = 250.0
    volume_scale: float = 1.0
    buses: bool = True
    bus_headway_s: float = 900.0
    bus_headway_jitter_s: float = 120.0
    bus_first_s: float = 300.0
    seed: int = 0

    def __post_init__(self):
        vols = (self.major_through_vph, self.major_left_vph,
                self.minor_through_vph, self.minor_left_vph, self.volume_scale)
        if any(v < 0 for v in vols):
            raise ValueError("volumes and volume_scale must be >= 0")
        if not 0 < self.bus_headway_jitter_s < self.bus_headway_s:
            raise ValueError("need 0 < bus_headway_jitter_s < bus_headway_s")

    def movement_volumes(self) -> dict[str, float]:
        base = {
            "EB_TH": self.major_through_vph, "WB_TH": self.major_through_vph,
            "EB_LT": self.major_left_vph, "WB_LT": self.major_left_vph,
            "NB_TH": self.minor_through_vph, "SB_TH": self.minor_through_vph,
            "NB_LT": self.minor_left_vph, "SB_LT": self.minor_left_vph,
        }
        return {m: base[m] * self.volume_scale for m in MOVEMENTS}


class ArrivalProcess:
    """Lazily generated arrival times for every movement and for buses."""

    def __init__(self, demand: DemandConfig, seed: int | None = None):
        seed = demand.seed if seed is None else seed
        children = np.random.SeedSequence(seed).spawn(len(MOVEMENTS) + 1)
        self.rates = {m: v / 3600.0 for m, v in demand.movement_volumes().items()}
        self._rngs = {m: np.random.default_rng(c) for m, c in zip(MOVEMENTS, children)}
        self._bus_rng = np.random.default_rng(children[-1])
        self.demand = demand
        self.next_time = {m: self._draw(m, 0.0) for m in MOVEMENTS}
        self._bus_k = 0
        self.next_bus = self._bus_time(0) if demand.buses else np.inf

    def _draw(self, movement: str, after: float) -> float:
        rate = self.rates[movement]
        if rate <= 0:
            return np.inf
        return after + self._rngs[movement].exponential(1.0 / rate)

    def _bus_time(self, k: int) -> float:
        # Jitter is drawn around a fixed schedule, so it never accumulates.
        d = self.demand
        j = d.bus_headway_jitter_s
        return d.bus_first_s + k * d.bus_headway_s + self._bus_rng.uniform(-j, j)

    def pop_due(self, t: float) -> list[tuple[float, str]]:
        """Return (time, movement) for every arrival with time <= t, in time order.

        Bus arrivals use the movement name ``"BUS"``.
        """
        due = []
        for m in MOVEMENTS:
            while self.next_time[m] <= t:
                due.append((self.next_time[m], m))
                self.next_time[m] = self._draw(m, self.next_time[m])
        while self.next_bus <= t:
            due.append((self.next_bus, "BUS"))
            self._bus_k += 1
            self.next_bus = self._bus_time(self._bus_k)
        if len(due) > 1:
            due.sort()
        return due

    def earliest(self) -> float:
        return min(min(self.next_time.values()), self.next_bus)
