"""Resumable training campaigns: checkpoint after every episode, CSV on disk.

The learning-curve CSV carries only deterministic columns so that two runs
from the same seed are byte-identical; wall-clock timings go to a sidecar
``timing.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from tsprl.agents import (
    AgentHandle, CurveRecord, TrainingResult, make_trainer, run_training,
)
from tsprl.config import ScenarioConfig, dumps
from tsprl.persistence import Checkpoint, read_checkpoint, write_checkpoint
from tsprl.rl import DDQNTrainer, QNetwork, epsilon_for_episode

CURVE_COLUMNS = ("episode", "avg_step_reward", "avg_bus_delay_s", "epsilon")


def training_digest(cfg: ScenarioConfig, kind: str, frozen_sc: QNetwork | None = None) -> bytes:
    """Identity of a training trajectory.

    The episode budget is left out so that a run can be extended; a TSP run
    is also bound to the exact SC weights it trains against.
    """
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(dumps(replace(cfg, run=replace(cfg.run, episodes=0))).encode())
    if frozen_sc is not None:
        for p in frozen_sc.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.digest()


def _record_dict(r: CurveRecord) -> dict:
    return {"episode": r.episode, "avg_step_reward": r.avg_step_reward,
            "avg_bus_delay_s": r.avg_bus_delay_s, "epsilon": r.epsilon}


def to_checkpoint(kind: str, trainer: DDQNTrainer, records: list[CurveRecord],
                  digest: bytes) -> Checkpoint:
    return Checkpoint(
        kind=kind, main=trainer.main.copy(), target=trainer.target.copy(),
        buffer=list(trainer.buffer), buffer_capacity=trainer.buffer.capacity,
        epsilon=epsilon_for_episode(trainer.episodes_trained, trainer.cfg),
        episode=trainer.episodes_trained, rng_state=trainer.rng.bit_generator.state,
        config_digest=digest, optimizer_state=[a.copy() for a in trainer.optimizer.state()],
        curve=[_record_dict(r) for r in records])


def from_checkpoint(cfg: ScenarioConfig, ck: Checkpoint) -> tuple[DDQNTrainer, list[CurveRecord]]:
    trainer = make_trainer(cfg, ck.kind)
    if trainer.main.sizes != ck.main.sizes:
        raise ValueError("checkpoint network shape does not match the configuration")
    trainer.main.load_from(ck.main)
    trainer.target.load_from(ck.target)
    for e in ck.buffer:
        trainer.buffer.push(e)
    trainer.optimizer.load_state(ck.optimizer_state)
    trainer.rng.bit_generator.state = ck.rng_state
    trainer.episodes_trained = ck.episode
    return trainer, [CurveRecord(**d) for d in ck.curve]


def checkpoint_path(checkpoint_dir: str | Path, kind: str) -> Path:
    return Path(checkpoint_dir) / f"{kind}.ckpt"


def load_network(path: str | Path) -> QNetwork:
    """Main network of a checkpoint, for frozen use (no config check)."""
    return read_checkpoint(path).main


# --------------------------------------------------------------------- CSV


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(x)


def write_curve_csv(path: str | Path, records: list[CurveRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in records:
            w.writerow([r.episode, _fmt(r.avg_step_reward), _fmt(r.avg_bus_delay_s), _fmt(r.epsilon)])


def read_curve_csv(path: str | Path) -> list[CurveRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    num = lambda s: float(s) if s else math.nan  # noqa: E731
    return [CurveRecord(int(r["episode"]), num(r["avg_step_reward"]), num(r["avg_bus_delay_s"]),
                        num(r["epsilon"])) for r in rows]


def _append_timing(path: Path, episode: int, wall_s: float) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["episode", "wall_time_s"])
        w.writerow([episode, f"{wall_s:.3f}"])


# ---------------------------------------------------------------- campaign


def train_campaign(cfg: ScenarioConfig, kind: str, out_dir: str | Path,
                   checkpoint_dir: str | Path | None = None, episodes: int | None = None,
                   frozen_sc: QNetwork | None = None, resume: bool = True) -> TrainingResult:
    """Train ``kind`` for ``episodes`` total episodes, resuming from a checkpoint if present.

    Writes ``<out_dir>/<kind>_curve.csv`` after every episode together with
    ``<checkpoint_dir>/<kind>.ckpt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = checkpoint_path(checkpoint_dir or out_dir, kind)
    digest = training_digest(cfg, kind, frozen_sc)
    trainer, records = None, []
    if resume and ckpt.exists():
        trainer, records = from_checkpoint(cfg, read_checkpoint(ckpt, expected_digest=digest))
    curve_path = out_dir / f"{kind}_curve.csv"
    timing_path = out_dir / f"{kind}_timing.csv"
    if trainer is None and timing_path.exists():
        timing_path.unlink()

    def on_episode(tr: DDQNTrainer, recs: list[CurveRecord]) -> None:
        write_checkpoint(ckpt, to_checkpoint(kind, tr, recs, digest))
        write_curve_csv(curve_path, recs)

    sc_handle = None
    if kind == "tsp":
        if frozen_sc is None:
            raise ValueError("TSP training needs a trained SC network")
        sc_handle = AgentHandle.frozen("sc", frozen_sc, cfg.reward, cfg.trainer.normalize_obs)
    done_before = len(records)
    result = run_training(cfg, kind, episodes, trainer=trainer, records=records,
                          frozen_sc=sc_handle, on_episode=on_episode)
    for k, wall in enumerate(result.wall_times_s):
        _append_timing(timing_path, done_before + k, wall)
    write_curve_csv(curve_path, result.records)
    return result
