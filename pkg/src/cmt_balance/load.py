"""Per-element computational load: particle count plus a constant fluid load."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ElementLoadArray:
    loads: np.ndarray
    global_ids: np.ndarray

    def __post_init__(self):
        if len(self.loads) != len(self.global_ids):
            raise ValueError("loads and global_ids differ in length")

    def __len__(self) -> int:
        return len(self.loads)

    @property
    def total(self) -> float:
        return float(self.loads.sum())


def calibrate_fluid_load(element_kernel_time: float, particle_kernel_time: float) -> float:
    """Fluid load constant: mean element processing time over mean particle time."""
    if element_kernel_time <= 0 or particle_kernel_time <= 0:
        raise ValueError("kernel times must be positive")
    return element_kernel_time / particle_kernel_time


def element_loads(counts, global_ids, fluid_load: float) -> ElementLoadArray:
    if fluid_load <= 0:
        raise ValueError("fluid_load must be positive")
    gids = np.asarray(global_ids, dtype=np.int64)
    order = np.argsort(gids, kind="stable")
    counts = np.asarray(counts)[order]
    return ElementLoadArray(counts.astype(float) + float(fluid_load), gids[order])


def compute_element_load(rank, fluid_load: float) -> ElementLoadArray:
    """Load of every element owned by ``rank`` (a :class:`~cmt_balance.migration.RankState`),
    ordered by global element index."""
    counts = rank.particles.counts_per_element(rank.gids)
    return element_loads(counts, rank.gids, fluid_load)
