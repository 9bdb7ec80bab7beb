"""Command line: ``tsprl train``, ``tsprl eval`` and ``tsprl compare``.

Exit codes: 0 success, 1 usage, 2 configuration or missing input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from tsprl import agents, metrics
from tsprl.campaign import checkpoint_path, load_network, train_campaign
from tsprl.config import SCENARIO_SCALES, ConfigError, ScenarioConfig, load, profile_names
from tsprl.persistence import CheckpointError
from tsprl.sim.geometry import PHASES

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("tsprl")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _add_common(p: argparse.ArgumentParser, default_config: str) -> None:
    p.add_argument("--config", default=default_config,
                   help=f"config file or profile name ({', '.join(profile_names())}); "
                        f"default {default_config}")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--scenario", choices=sorted(SCENARIO_SCALES),
                   help="demand level: vc060 or vc095")
    p.add_argument("--out-dir", default="runs", help="output directory (default: runs)")
    p.add_argument("--checkpoint-dir", help="checkpoint directory (default: the output directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsprl", description="DDQN signal control with event-triggered transit priority.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every episode")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the SC or the TSP agent")
    p.add_argument("agent", choices=["sc", "tsp"])
    _add_common(p, default_config="desk-sc")
    p.add_argument("--episodes", type=_positive, help="total episodes (run.episodes)")
    p.add_argument("--sc-checkpoint", help="frozen SC checkpoint for TSP training "
                                           "(default: <checkpoint-dir>/sc.ckpt)")
    p.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    p.add_argument("--chart", action="store_true", help="also render the learning curve as SVG")

    p = sub.add_parser("eval", help="run seeded evaluation replicates of one controller")
    _add_common(p, default_config="desk-tsp")
    p.add_argument("--controller", required=True, choices=agents.CONTROLLERS)
    p.add_argument("--replicates", type=_positive, help="number of replicates (run.replicates)")
    p.add_argument("--jobs", type=_positive, default=1, help="parallel worker processes")
    p.add_argument("--sc-checkpoint", help="SC checkpoint (default: <checkpoint-dir>/sc.ckpt)")
    p.add_argument("--tsp-checkpoint", help="TSP checkpoint (default: <checkpoint-dir>/tsp.ckpt)")
    p.add_argument("--label", help="scenario label written to the CSVs (default: controller id)")
    p.add_argument("--trace", action="store_true",
                   help="also write trajectory, signal and hand-off logs for replicate 0 (large)")

    p = sub.add_parser("compare", help="compare evaluation CSVs; the first is the baseline")
    p.add_argument("csv", nargs="+", help="movement or bus CSVs from `tsprl eval`")
    p.add_argument("--out-dir", default="compare", help="output directory (default: compare)")
    p.add_argument("--name", default="compare", help="file stem for the outputs")
    return parser


def _config(args) -> ScenarioConfig:
    cfg = load(args.config)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "episodes", None) is not None:
        overrides["run.episodes"] = str(args.episodes)
    if getattr(args, "replicates", None) is not None:
        overrides["run.replicates"] = str(args.replicates)
    cfg = cfg.with_overrides(overrides)
    if args.scenario:
        cfg = cfg.for_scenario(args.scenario)
    return cfg


def _network(path: Path, what: str):
    if not path.exists():
        raise InputError(f"{what} checkpoint not found: {path} (train it first)")
    return load_network(path)


# ------------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out_dir)
    ckdir = Path(args.checkpoint_dir or out)
    frozen = None
    if args.agent == "tsp":
        frozen = _network(Path(args.sc_checkpoint) if args.sc_checkpoint else checkpoint_path(ckdir, "sc"),
                          "SC")
    result = train_campaign(cfg, args.agent, out, ckdir, frozen_sc=frozen, resume=not args.fresh)
    curve = out / f"{args.agent}_curve.csv"
    print(f"{args.agent}: {len(result.records)} episodes -> {curve}")
    if args.chart:
        from tsprl.charts import learning_curve_chart
        learning_curve_chart(curve, out / f"{args.agent}_curve.svg")
    return EXIT_OK


# -------------------------------------------------------------------- eval


IMPACT_MOVEMENTS = ("EB_TH", "SB_TH", "SB_LT")


def write_eval_outputs(cfg: ScenarioConfig, summaries, out_dir: Path, label: str) -> dict[str, Path]:
    """Per-replicate movement delays, bus trips and post-check-in impact windows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    movement, buses, impact = [], [], []
    for s in summaries:
        movement += metrics.movement_delay_records(s.crossings, s.replicate, cfg.run.warmup_s)
        buses += metrics.bus_trip_records(s.bus_trips, label, s.replicate)
        checkins = [t.check_in_s for t in s.bus_trips.values() if not math.isnan(t.check_in_s)]
        pooled = metrics.pooled_window_delays(s.crossings, checkins, cfg.run.impact_window_s)
        truncated = any(t + cfg.run.impact_window_s > s.end_s for t in checkins)
        for m in IMPACT_MOVEMENTS:
            n, mean = pooled.get(m, (0, math.nan))
            impact.append((s.replicate, m, n, mean, truncated))
        # Southbound side street as one group.
        parts = [pooled[m] for m in ("SB_TH", "SB_LT") if m in pooled]
        impact.append((s.replicate, "SB", sum(n for n, _ in parts), metrics.combine_means(parts),
                       truncated))
    paths = {"movements": out_dir / f"{label}_movements.csv", "bus": out_dir / f"{label}_bus.csv",
             "impact": out_dir / f"{label}_impact.csv"}
    metrics.write_movement_csv(paths["movements"], movement)
    metrics.write_bus_csv(paths["bus"], buses)
    with open(paths["impact"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "movement", "n_vehicles", "mean_delay_s", "truncated"])
        for rep, m, n, mean, trunc in impact:
            w.writerow([rep, m, n, repr(mean), str(trunc).lower()])
    return paths


def write_trace(cfg: ScenarioConfig, controller_id: str, out_dir: Path, label: str,
                sc_net=None, tsp_net=None) -> dict[str, Path]:
    """Per-step logs of replicate 0: vehicle trajectories, signal state and agent hand-offs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: out_dir / f"{label}_{k}.csv" for k in ("trajectory", "signal", "handoffs")}
    controller = agents.build_controller(cfg, controller_id, sc_net, tsp_net)
    with open(paths["trajectory"], "w", newline="") as ft, open(paths["signal"], "w", newline="") as fs:
        tw, sw = csv.writer(ft), csv.writer(fs)
        tw.writerow(["t", "vehicle_id", "class", "lane", "pos_ft", "speed_ftps"])
        sw.writerow(["t", "phase", "interval", "green_elapsed_s"])
        res = agents.run_episode(cfg, controller, agents.replicate_seed(cfg, 0), cfg.run.eval_duration_s,
                                 trajectory_writer=tw, signal_writer=sw)
    with open(paths["handoffs"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "direction", "phase", "green_elapsed_s"])
        for h in res.mode.handoffs:
            w.writerow([repr(h.t), h.direction, PHASES[h.phase], repr(h.green_elapsed_s)])
    return paths


def cmd_eval(args) -> int:
    cfg = _config(args)
    ckdir = Path(args.checkpoint_dir or args.out_dir)
    sc_net = tsp_net = None
    if args.controller.startswith("rl"):
        sc_net = _network(Path(args.sc_checkpoint) if args.sc_checkpoint else checkpoint_path(ckdir, "sc"), "SC")
    if args.controller == "rl-tsp":
        tsp_net = _network(Path(args.tsp_checkpoint) if args.tsp_checkpoint else checkpoint_path(ckdir, "tsp"),
                           "TSP")
    summaries = agents.evaluate(cfg, args.controller, cfg.run.replicates, sc_net, tsp_net, args.jobs)
    label = args.label or args.controller
    paths = write_eval_outputs(cfg, summaries, Path(args.out_dir), label)
    if args.trace:
        paths.update(write_trace(cfg, args.controller, Path(args.out_dir), label, sc_net, tsp_net))
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


# ----------------------------------------------------------------- compare


def _read_table(path: str) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def compare_tables(paths: list[str]) -> tuple[str, dict[str, dict[str, list[float]]]]:
    """Group per-replicate values by movement for each input file.

    Movement CSVs contribute ``mean_delay_s`` per movement; bus CSVs
    contribute ``travel_time_s`` under ``BUS``.
    """
    if len(paths) < 2:
        raise UsageError("compare needs at least two CSV files")
    header, _ = _read_table(paths[0])
    if "mean_delay_s" in header:
        kind, needed = "delay", ("movement", "mean_delay_s")
    elif "travel_time_s" in header:
        kind, needed = "bus", ("travel_time_s",)
    else:
        raise InputError(f"{paths[0]}: missing column 'mean_delay_s' or 'travel_time_s'")
    groups: dict[str, dict[str, list[float]]] = {}
    for p in paths:
        cols, rows = _read_table(p)
        for c in header:
            if c not in cols:
                raise InputError(f"{p}: missing column {c!r}")
        for c in needed:
            if c not in cols:
                raise InputError(f"{p}: missing column {c!r}")
        label = Path(p).stem
        if label in groups:
            label = f"{label}#{len(groups)}"
        g = groups.setdefault(label, {})
        for r in rows:
            try:
                if kind == "delay":
                    g.setdefault(r["movement"], []).append(float(r["mean_delay_s"]))
                else:
                    g.setdefault("BUS", []).append(float(r["travel_time_s"]))
            except ValueError as exc:
                raise InputError(f"{p}: bad number in column {needed[-1]!r}") from exc
    return kind, groups


def summarize(groups: dict[str, dict[str, list[float]]]) -> list[list]:
    labels = list(groups)
    base = groups[labels[0]]
    rows = []
    for label in labels:
        for m in sorted(groups[label]):
            st = metrics.box_stats(groups[label][m])
            b = metrics.box_stats(base[m]).mean if m in base and base[m] else math.nan
            delta = st.mean - b
            pct = 100.0 * delta / b if b else math.nan
            rows.append([label, m, st.n, st.mean, st.minimum, st.q1, st.median, st.q3, st.maximum,
                         delta, pct])
    return rows


SUMMARY_COLUMNS = ["input", "movement", "n", "mean", "min", "q1", "median", "q3", "max",
                   "delta_vs_first", "pct_change_vs_first"]


def cmd_compare(args) -> int:
    kind, groups = compare_tables(args.csv)
    rows = summarize(groups)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{args.name}_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow(r[:3] + [repr(float(x)) for x in r[3:]])
    from tsprl.charts import box_chart
    box_chart(groups, out / f"{args.name}.svg",
              "mean delay (s)" if kind == "delay" else "bus travel time (s)")
    width = max(len(r[0]) for r in rows)
    print(f"{'input':<{width}}  movement      n      mean     delta   change")
    for r in rows:
        print(f"{r[0]:<{width}}  {r[1]:<8} {r[2]:>6} {r[3]:>9.2f} {r[9]:>9.2f} {r[10]:>7.1f}%")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tsprl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InputError, CheckpointError) as exc:
        print(f"tsprl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"tsprl: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
