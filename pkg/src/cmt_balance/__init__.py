"""Dynamic load balancing for particle-laden spectral-element solvers, on simulated ranks."""
from .comm import CollectiveMismatch, RankContext, RankEnsemble
from .driver import RunConfig, Simulation, StepTrace, imbalance, load_config, run_simulation, step_cost, write_trace
from .load import ElementLoadArray, calibrate_fluid_load, compute_element_load, element_loads
from .mesh import Mesh, build_mesh, locate_element, locate_elements, order_elements
from .migration import RankState, StaleStaticData, execute_migration, plan_transfers, reinitialize_static
from .particles import ParticleSet, advect, init_particles, rebin
from .partition import (
    ALGORITHMS,
    ElementProcessorMap,
    InfeasiblePartition,
    PartitionConfig,
    enforce_lelt,
    partition_centralized,
    partition_distributed,
    partition_hybrid,
    run_partitioner,
)
from .trigger import AdaptiveState, Trigger, adaptive_observe, fixed_trigger

__all__ = [
    "ALGORITHMS",
    "AdaptiveState",
    "CollectiveMismatch",
    "ElementLoadArray",
    "ElementProcessorMap",
    "InfeasiblePartition",
    "Mesh",
    "ParticleSet",
    "PartitionConfig",
    "RankContext",
    "RankEnsemble",
    "RankState",
    "RunConfig",
    "Simulation",
    "StaleStaticData",
    "StepTrace",
    "Trigger",
    "adaptive_observe",
    "advect",
    "build_mesh",
    "calibrate_fluid_load",
    "compute_element_load",
    "element_loads",
    "enforce_lelt",
    "execute_migration",
    "fixed_trigger",
    "imbalance",
    "init_particles",
    "load_config",
    "locate_element",
    "locate_elements",
    "order_elements",
    "partition_centralized",
    "partition_distributed",
    "partition_hybrid",
    "plan_transfers",
    "rebin",
    "reinitialize_static",
    "run_partitioner",
    "run_simulation",
    "step_cost",
    "write_trace",
]
