"""Command line: ``cmt-balance run`` and ``cmt-balance partition``.

Exit status is 0 on success, 2 when no map can respect ``lelt`` and 1 on any
other error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .comm import RankEnsemble
from .driver import Simulation, load_config, write_trace
from .partition import (
    ALGORITHMS,
    ElementProcessorMap,
    InfeasiblePartition,
    PartitionConfig,
    partition_centralized,
    run_partitioner,
    split_loads,
)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _elements(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected X,Y,Z")
    return tuple(parts)


def read_loads(path) -> np.ndarray:
    """Element loads in global element order from a CSV file.

    Accepts one value per line or several columns; with several columns the
    one headed ``load`` is used, otherwise the last. A non-numeric first row
    is treated as a header.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no loads")
    col = -1
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip().lower() for c in rows[0]]
        col = header.index("load") if "load" in header else -1
        rows = rows[1:]
    if len(rows) == 1 and len(rows[0]) > 1 and col == -1:
        values = [float(c) for c in rows[0]]  # a single comma-separated line
    else:
        values = [float(r[col]) for r in rows]
    return np.asarray(values, dtype=float)


def _run(args) -> int:
    overrides = {
        "np": args.ranks,
        "elements": args.elements,
        "particles": args.particles,
        "algorithm": args.algorithm,
        "trigger": args.trigger,
        "lelt": args.lelt,
        "fluid_load": args.fluid_load,
        "steps": args.steps,
        "seed": args.seed,
        "exec_mode": args.exec_mode,
        "out": args.out,
    }
    cfg = load_config(args.config, **overrides)
    sim = Simulation(cfg)
    traces = sim.run()
    if cfg.out:
        write_trace(traces, cfg.out)
    events = [t.step for t in traces if t.lb_event]
    print(f"steps={len(traces)} total_time={sim.total_time():.6g} lb_events={len(events)} "
          f"max_imbalance={max(t.imbalance for t in traces):.4f} final_imbalance={traces[-1].imbalance:.4f}")
    if events:
        print("lb_steps=" + ",".join(map(str, events)))
    return EXIT_OK


def _partition(args) -> int:
    loads = read_loads(args.loads)
    cfg = PartitionConfig(args.np, args.lelt, len(loads))
    if args.algorithm == "centralized":
        emap = partition_centralized(loads, cfg)
    else:
        start = ElementProcessorMap.uniform(len(loads), args.np)
        emap = run_partitioner(args.algorithm, RankEnsemble(args.np), split_loads(loads, start), cfg)
    print(" ".join(str(v) for v in emap.first_element))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmt-balance", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation and optionally write its trace")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--ranks", type=int)
    run.add_argument("--elements", type=_elements, help="X,Y,Z element counts")
    run.add_argument("--particles", type=int)
    run.add_argument("--algorithm", choices=ALGORITHMS)
    run.add_argument("--trigger", help="fixed:K, adaptive or never")
    run.add_argument("--lelt", type=int)
    run.add_argument("--fluid-load", type=float)
    run.add_argument("--steps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--exec-mode", choices=("sequential", "threaded"))
    run.add_argument("--out", help="trace CSV path")
    run.set_defaults(func=_run)

    part = sub.add_parser("partition", help="partition a load vector once and print first elements")
    part.add_argument("--loads", required=True, type=Path, help="CSV of element loads in global order")
    part.add_argument("--np", required=True, type=int)
    part.add_argument("--lelt", required=True, type=int)
    part.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    part.set_defaults(func=_partition)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasiblePartition as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - reported, mapped to exit status 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
