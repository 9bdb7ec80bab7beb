"""SC then TSP training, followed by a four-controller comparison at v/c 0.95.

Steps: train SC with the full-sc profile, train TSP against it with the
desk-tsp profile, evaluate rl-sc, rl-tsp, asc and asc-tsp over the seeded
replicates, then write comparison tables and box charts. Training resumes
from checkpoints in ``--out``.

    python scripts/tsp_experiment.py --out runs/tsp --jobs 1
"""

import argparse
from pathlib import Path

from tsprl import cli


def run(*argv: str) -> None:
    code = cli.main(list(argv))
    if code:
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tsp")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--jobs", default="1")
    ap.add_argument("--sc-profile", default="full-sc")
    ap.add_argument("--tsp-profile", default="desk-tsp")
    args = ap.parse_args()
    out = Path(args.out)

    run("train", "sc", "--config", args.sc_profile, "--seed", args.seed, "--out-dir", str(out),
        "--chart")
    run("train", "tsp", "--config", args.tsp_profile, "--seed", args.seed, "--out-dir", str(out),
        "--chart")
    for ctl in ("rl-sc", "rl-tsp", "asc", "asc-tsp"):
        run("eval", "--config", args.tsp_profile, "--controller", ctl, "--seed", args.seed,
            "--out-dir", str(out / "eval"), "--checkpoint-dir", str(out), "--jobs", args.jobs)
    ev = out / "eval"
    run("compare", str(ev / "rl-sc_bus.csv"), str(ev / "rl-tsp_bus.csv"), str(ev / "asc_bus.csv"),
        str(ev / "asc-tsp_bus.csv"), "--out-dir", str(out / "compare"), "--name", "bus")
    run("compare", str(ev / "rl-sc_movements.csv"), str(ev / "rl-tsp_movements.csv"),
        "--out-dir", str(out / "compare"), "--name", "delay")


if __name__ == "__main__":
    main()
