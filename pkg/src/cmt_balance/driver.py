"""Time-step loop over a simulated rank ensemble, with cost model and traces.

Each step runs advect -> rebin (moving particles that left their rank) ->
fluid surrogate update on every rank, then charges the bulk-synchronous
makespan ``max_r(c_elem * elements_r + c_part * particles_r)``, consults the
trigger and, when it fires, repartitions and migrates.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .comm import EXEC_MODES, RankEnsemble
from .load import ElementLoadArray, element_loads
from .mesh import Mesh, build_mesh, locate_elements, order_elements
from .migration import (
    RankState,
    execute_migration,
    new_rank_state,
    plan_transfers,
    reinitialize_static,
)
from .particles import ParticleSet, advect, init_particles
from .partition import (
    ALGORITHMS,
    ElementProcessorMap,
    InfeasiblePartition,
    PartitionConfig,
    run_partitioner,
)
from .trigger import Trigger

log = logging.getLogger(__name__)

TRACE_HEADER = ["step", "sim_time", "imbalance", "max_load", "mean_load", "lb_event", "lb_overhead", "spread"]


@dataclass
class RunConfig:
    """All run parameters. Defaults describe the clustered-slab scenario."""

    extent_lo: tuple = (-2.208, 0.0, 0.0)
    extent_hi: tuple = (6.0, 0.0802, 0.0802)
    elements: tuple = (900, 1, 1)
    n_per_axis: int = 5
    particles: int = 68_625
    slab_lo: float = -1.0
    slab_hi: float = -0.5
    seed: int = 1
    steps: int = 1000
    dt: float = 1.0e-3
    rate: float | None = 0.3  # None: slab front reaches 90% of the domain at the last step
    advect_start: int = 0  # particles stay frozen through this step
    fluid_load: float = 200.0
    np: int = 30
    lelt: int = 120
    algorithm: str = "hybrid"
    trigger: str = "adaptive"
    adaptive_threshold: float = 0.05
    adaptive_eval_interval: int = 100
    exec_mode: str = "sequential"
    timing: str = "model"
    c_part: float = 1.0e-6
    c_elem: float | None = None  # None: fluid_load * c_part
    lb_overhead: float = 0.02
    out: str | None = None

    def __post_init__(self):
        self.extent_lo = tuple(float(v) for v in self.extent_lo)
        self.extent_hi = tuple(float(v) for v in self.extent_hi)
        self.elements = tuple(int(v) for v in self.elements)
        if self.c_elem is None:
            self.c_elem = self.fluid_load * self.c_part

    @property
    def nelgt(self) -> int:
        return int(np.prod(self.elements))

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.exec_mode not in EXEC_MODES:
            raise ValueError(f"exec_mode must be one of {EXEC_MODES}")
        if self.timing not in ("model", "wall"):
            raise ValueError("timing must be 'model' or 'wall'")
        if self.c_part <= 0 or self.c_elem <= 0 or self.fluid_load <= 0:
            raise ValueError("cost coefficients and fluid_load must be positive")
        if not math.isclose(self.c_elem / self.c_part, self.fluid_load, rel_tol=1e-9):
            raise ValueError(
                f"c_elem / c_part = {self.c_elem / self.c_part} must equal fluid_load = {self.fluid_load}"
            )
        PartitionConfig(self.np, self.lelt, self.nelgt).check_feasible()
        Trigger(self.trigger, self.adaptive_threshold, self.adaptive_eval_interval)

    def effective_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        moving = max(self.steps - self.advect_start, 1)
        target = self.extent_lo[0] + 0.9 * (self.extent_hi[0] - self.extent_lo[0])
        growth = (target - self.slab_lo) / (self.slab_hi - self.slab_lo)
        return (growth ** (1.0 / moving) - 1.0) / self.dt


# --- config file -------------------------------------------------------------


def _vec(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ivec(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt_float(text: str):
    return None if text.lower() in ("", "none", "auto") else float(text)


_KEYS = {
    "extent_lo": ("extent_lo", _vec),
    "extent_hi": ("extent_hi", _vec),
    "elements": ("elements", _ivec),
    "n_per_axis": ("n_per_axis", int),
    "particles": ("particles", int),
    "slab_lo": ("slab_lo", float),
    "slab_hi": ("slab_hi", float),
    "seed": ("seed", int),
    "steps": ("steps", int),
    "dt": ("dt", float),
    "rate": ("rate", _opt_float),
    "advect_start": ("advect_start", int),
    "fluid_load": ("fluid_load", float),
    "np": ("np", int),
    "ranks": ("np", int),
    "lelt": ("lelt", int),
    "algorithm": ("algorithm", str),
    "trigger": ("trigger", str),
    "adaptive.threshold": ("adaptive_threshold", float),
    "adaptive.eval_interval": ("adaptive_eval_interval", int),
    "exec_mode": ("exec_mode", str),
    "timing": ("timing", str),
    "c_part": ("c_part", float),
    "c_elem": ("c_elem", _opt_float),
    "lb_overhead": ("lb_overhead", float),
    "out": ("out", str),
}


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments) into RunConfig field values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[run]\n" + text)
    values = {}
    for key, raw in parser["run"].items():
        if key not in _KEYS:
            raise ValueError(f"unknown config key {key!r}")
        name, conv = _KEYS[key]
        values[name] = conv(raw.strip())
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    values = parse_config(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if ("fluid_load" in values or "c_part" in values) and "c_elem" not in values:
        values["c_elem"] = None
    return RunConfig(**values)


# --- cost model and metrics --------------------------------------------------


def step_cost(rank_elements: int, rank_particles: int, cfg: RunConfig) -> float:
    return cfg.c_elem * rank_elements + cfg.c_part * rank_particles


def imbalance(per_rank_loads: Sequence[float]) -> float:
    """Max over mean; 1 means perfect balance (and is returned for zero total load)."""
    loads = np.asarray(per_rank_loads, dtype=float)
    if loads.size == 0 or np.any(loads < 0):
        raise ValueError("loads must be a non-empty, non-negative vector")
    total = loads.sum()
    if total == 0:
        return 1.0
    return float(loads.max() / (total / loads.size))


@dataclass
class StepTrace:
    step: int
    sim_time: float
    imbalance: float
    max_load: float
    mean_load: float
    lb_event: bool
    lb_overhead: float | None
    spread: float
    loads: tuple = field(default=(), compare=False, repr=False)


def write_trace(traces: Sequence[StepTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t in traces:
            w.writerow(
                [
                    t.step,
                    repr(float(t.sim_time)),
                    repr(float(t.imbalance)),
                    repr(float(t.max_load)),
                    repr(float(t.mean_load)),
                    int(t.lb_event),
                    "" if t.lb_overhead is None else repr(float(t.lb_overhead)),
                    repr(float(t.spread)),
                ]
            )


def read_trace(path) -> list[StepTrace]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        StepTrace(
            step=int(r["step"]),
            sim_time=float(r["sim_time"]),
            imbalance=float(r["imbalance"]),
            max_load=float(r["max_load"]),
            mean_load=float(r["mean_load"]),
            lb_event=bool(int(r["lb_event"])),
            lb_overhead=float(r["lb_overhead"]) if r["lb_overhead"] else None,
            spread=float(r["spread"]),
        )
        for r in rows
    ]


# --- rank programs -----------------------------------------------------------


def update_fields(state: RankState, counts: np.ndarray, dt: float) -> None:
    """Element-local stand-in for the fluid solve; depends on static geometry."""
    state.require_static_current()
    src = (dt * 1.0e-3) * counts.astype(float)[:, None, None, None]
    state.fields[:, 1] += src * state.geometry[:, 0]
    state.fields[:, 2] += (dt * 1.0e-2) * (state.fields[:, 1] - 2.5)


def _step_program(ctx, state: RankState, mesh: Mesh, emap: ElementProcessorMap, physics: dict):
    t0 = time.perf_counter()
    ps = state.particles
    if physics["move"] and len(ps):
        ps = advect(ps, mesh, physics["dt"], physics["rate"], physics["x_left"])
        ps.elem = locate_elements(mesh, ps.pos, check=False)
    if state.n_elements:
        # owned elements form a contiguous range
        leaving = np.nonzero((ps.elem < state.gids[0]) | (ps.elem > state.gids[-1]))[0]
    else:
        leaving = np.arange(len(ps))
    outbound = []
    if len(leaving):
        movers = ps.subset(leaving)
        dest = emap.owner(movers.elem)
        outbound = [(int(d), movers.subset(dest == d)) for d in np.unique(dest)]
    inbound = yield ctx.route(outbound)
    if outbound or inbound:
        stay = np.ones(len(ps), dtype=bool)
        stay[leaving] = False
        ps = ParticleSet.concat([ps.subset(stay)] + [p for _, p in inbound])
    state.particles = ps
    counts = ps.counts_per_element(state.gids)
    update_fields(state, counts, physics["dt"])
    return state.n_elements, len(ps), int(np.count_nonzero(counts)), time.perf_counter() - t0


def _load_program(ctx, state: RankState, fluid_load: float) -> ElementLoadArray:
    counts = state.particles.counts_per_element(state.gids)
    return element_loads(counts, state.gids, fluid_load)


def _reinit_program(ctx, state: RankState, mesh: Mesh) -> RankState:
    return reinitialize_static(state, mesh)


# --- simulation --------------------------------------------------------------


class Simulation:
    """A run in progress; :meth:`run` executes the configured number of steps."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.mesh = order_elements(build_mesh(cfg.extent_lo, cfg.extent_hi, cfg.elements, cfg.n_per_axis))
        region_lo = (cfg.slab_lo, cfg.extent_lo[1], cfg.extent_lo[2])
        region_hi = (cfg.slab_hi, cfg.extent_hi[1], cfg.extent_hi[2])
        everything = init_particles(self.mesh, region_lo, region_hi, cfg.particles, cfg.seed)
        self.ensemble = RankEnsemble(cfg.np, cfg.exec_mode)
        self.partition_cfg = PartitionConfig(cfg.np, cfg.lelt, self.mesh.nelgt)
        self.map = ElementProcessorMap.uniform(self.mesh.nelgt, cfg.np)
        owner = self.map.owner(everything.elem)
        self.states = [
            new_rank_state(r, np.arange(*_span(self.map, r)), self.mesh, everything.subset(owner == r))
            for r in range(cfg.np)
        ]
        self.trigger = Trigger(cfg.trigger, cfg.adaptive_threshold, cfg.adaptive_eval_interval)
        self.rate = cfg.effective_rate()
        self.step = 0
        self.traces: list[StepTrace] = []
        self.initial_overhead: float | None = None
        self.balance_count = 0

    def rank_loads(self) -> list[ElementLoadArray]:
        return self.ensemble.run(_load_program, self.states, self.cfg.fluid_load)

    def balance(self) -> float:
        """Repartition and migrate; returns the overhead charged for it."""
        t0 = time.perf_counter()
        try:
            new_map = run_partitioner(self.cfg.algorithm, self.ensemble, self.rank_loads(), self.partition_cfg)
        except InfeasiblePartition as exc:
            raise InfeasiblePartition(f"step {self.step}: rank {exc.rank}: {exc}", exc.rank) from exc
        moved = self.migrate_to(new_map)
        self.balance_count += 1
        wall = time.perf_counter() - t0
        log.debug("step %d: rebalanced, %d elements moved", self.step, moved)
        return self.cfg.lb_overhead if self.cfg.timing == "model" else wall

    def migrate_to(self, new_map: ElementProcessorMap) -> int:
        """Move elements and particles to ``new_map``; returns the number of elements moved."""
        plan = plan_transfers(self.map, new_map)
        if len(plan):
            self.states = execute_migration(self.ensemble, self.states, plan, self.mesh.n_per_axis)
            self.states = self.ensemble.run(_reinit_program, self.states, self.mesh)
        self.map = new_map
        return len(plan)

    def start(self) -> None:
        if self.trigger.initial_balance:
            self.initial_overhead = self.balance()
            self.trigger.record(self.initial_overhead)

    def advance(self) -> StepTrace:
        self.step += 1
        cfg = self.cfg
        physics = {
            "move": self.step > cfg.advect_start,
            "dt": cfg.dt,
            "rate": self.rate,
            "x_left": cfg.slab_lo,
        }
        results = self.ensemble.run(_step_program, self.states, self.mesh, self.map, physics)
        loads = [cfg.fluid_load * ne + npart for ne, npart, _, _ in results]
        if cfg.timing == "model":
            sim_time = max(step_cost(ne, npart, cfg) for ne, npart, _, _ in results)
        else:
            sim_time = max(r[3] for r in results)
        spread = sum(r[2] for r in results) / self.mesh.nelgt
        fire = self.trigger.decide(self.step, sim_time)
        overhead = None
        if fire:
            overhead = self.balance()
            self.trigger.record(overhead)
        trace = StepTrace(
            step=self.step,
            sim_time=sim_time,
            imbalance=imbalance(loads),
            max_load=max(loads),
            mean_load=sum(loads) / len(loads),
            lb_event=fire,
            lb_overhead=overhead,
            spread=spread,
            loads=tuple(loads),
        )
        self.traces.append(trace)
        return trace

    def run(self) -> list[StepTrace]:
        if self.step == 0 and self.initial_overhead is None:
            self.start()
        while self.step < self.cfg.steps:
            self.advance()
        return self.traces

    def total_time(self) -> float:
        """Summed makespan plus every balancing overhead, the compulsory one included."""
        total = sum(t.sim_time for t in self.traces)
        total += sum(t.lb_overhead for t in self.traces if t.lb_overhead is not None)
        return total + (self.initial_overhead or 0.0)

    def global_state(self) -> tuple[dict[int, np.ndarray], ParticleSet]:
        """Element id -> dynamic block, and all particles sorted by id."""
        fields = {}
        for st in self.states:
            for gid, block in zip(st.gids.tolist(), st.fields):
                fields[gid] = block
        particles = ParticleSet.concat([st.particles for st in self.states]).sorted_by_id()
        return fields, particles


def _span(emap: ElementProcessorMap, rank: int) -> tuple[int, int]:
    r = emap.range_of(rank)
    return r.start, r.stop


def run_simulation(cfg: RunConfig) -> list[StepTrace]:
    sim = Simulation(cfg)
    traces = sim.run()
    if cfg.out:
        write_trace(traces, cfg.out)
    return traces


def replace_config(cfg: RunConfig, **changes) -> RunConfig:
    if ("fluid_load" in changes or "c_part" in changes) and "c_elem" not in changes:
        changes["c_elem"] = None
    return dataclasses.replace(cfg, **changes)
