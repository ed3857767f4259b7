"""Repartitioning the ordered element array into contiguous per-rank ranges.

Three algorithms produce an :class:`ElementProcessorMap` from element loads:

* centralized: rank 0 gathers every load, cuts the global prefix sum near
  each multiple of ``total / np`` and broadcasts the map;
* distributed: every rank builds its slice of the global prefix sum with an
  exclusive scan, assigns ``floor((prefix - 1) / loadavg)`` to each element,
  and the first-element fragments are allgathered and capped by ``lelt``;
* hybrid: the distributed assignment, but rank 0 assembles the fragments,
  applies the ``lelt`` cap and broadcasts.

Comparisons against thresholds are done on ``prefix * np`` versus
``i * total`` so that integral loads are handled exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .comm import RankContext, RankEnsemble
from .load import ElementLoadArray

ALGORITHMS = ("centralized", "distributed", "hybrid")


class InfeasiblePartition(ValueError):
    """No map can respect ``lelt``; ``rank`` names the rank that overflowed."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


@dataclass(frozen=True)
class PartitionConfig:
    np: int
    lelt: int
    nelgt: int

    def __post_init__(self):
        if self.np < 1 or self.lelt < 1 or self.nelgt < 1:
            raise ValueError(f"np, lelt and nelgt must be positive: {self}")

    @property
    def feasible(self) -> bool:
        return self.np * self.lelt >= self.nelgt

    def check_feasible(self) -> None:
        if not self.feasible:
            raise InfeasiblePartition(
                f"{self.np} ranks x lelt={self.lelt} cannot hold {self.nelgt} elements"
            )


@dataclass(frozen=True)
class ElementProcessorMap:
    """Rank ``k`` owns global elements ``first_element[k] .. first_element[k+1] - 1``."""

    first_element: tuple[int, ...]
    nelgt: int

    def __post_init__(self):
        fe = self.first_element
        if not fe or fe[0] != 1:
            raise ValueError(f"first_element must start at 1: {fe}")
        if any(b < a for a, b in zip(fe, fe[1:])) or fe[-1] > self.nelgt + 1:
            raise ValueError(f"first_element must be non-decreasing within [1, {self.nelgt + 1}]: {fe}")

    @classmethod
    def uniform(cls, nelgt: int, np_: int) -> "ElementProcessorMap":
        """Equal chunks; the first ``nelgt % np`` ranks take one extra element."""
        base, extra = divmod(nelgt, np_)
        sizes = [base + (1 if k < extra else 0) for k in range(np_)]
        return cls.from_sizes(sizes)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "ElementProcessorMap":
        firsts = np.concatenate([[1], 1 + np.cumsum(sizes)[:-1]]).astype(int)
        return cls(tuple(int(v) for v in firsts), int(sum(sizes)))

    @property
    def np(self) -> int:
        return len(self.first_element)

    def sizes(self) -> list[int]:
        bounds = list(self.first_element) + [self.nelgt + 1]
        return [bounds[k + 1] - bounds[k] for k in range(self.np)]

    def range_of(self, rank: int) -> range:
        bounds = list(self.first_element) + [self.nelgt + 1]
        return range(bounds[rank], bounds[rank + 1])

    def owner(self, gid):
        """Owning rank of one or many global element indices."""
        ranks = np.searchsorted(np.asarray(self.first_element), np.asarray(gid), side="right") - 1
        return int(ranks) if np.ndim(ranks) == 0 else ranks

    def is_valid(self, lelt: int) -> bool:
        return max(self.sizes()) <= lelt


@dataclass(frozen=True)
class PrefixSum:
    sums: np.ndarray

    @classmethod
    def of(cls, loads) -> "PrefixSum":
        return cls(np.cumsum(np.asarray(loads, dtype=float)))

    @property
    def length(self) -> int:
        return len(self.sums)

    @property
    def total(self) -> float:
        return float(self.sums[-1]) if self.length else 0.0

    def __getitem__(self, pos: int) -> float:
        """1-indexed access; position 0 is the empty sum."""
        return 0.0 if pos == 0 else float(self.sums[pos - 1])


def enforce_lelt(first_element: Sequence[int], cfg: PartitionConfig, spill_left: bool = True) -> tuple[int, ...]:
    """Cap every rank at ``lelt`` elements.

    Scanning left to right, a rank holding more than ``lelt`` elements has its
    right boundary moved left, pushing the excess onto the next rank. If the
    last rank still overflows, ``spill_left`` runs the mirror-image scan from
    the right so the excess lands on earlier ranks with spare room; with
    ``spill_left=False`` the overflow is reported instead.
    """
    cfg.check_feasible()
    fe = [int(v) for v in first_element]
    n = len(fe)
    if n != cfg.np:
        raise ValueError(f"first_element has {n} entries for {cfg.np} ranks")
    for k in range(n - 1):
        if fe[k + 1] - fe[k] > cfg.lelt:
            fe[k + 1] = fe[k] + cfg.lelt
    last = cfg.nelgt + 1 - fe[-1]
    if last > cfg.lelt:
        if not spill_left:
            raise InfeasiblePartition(
                f"rank {n - 1} holds {last} > lelt={cfg.lelt} elements with no rank to its right",
                rank=n - 1,
            )
        end = cfg.nelgt + 1
        for k in range(n - 1, 0, -1):
            if end - fe[k] > cfg.lelt:
                fe[k] = end - cfg.lelt
            end = fe[k]
        if end - fe[0] > cfg.lelt:
            raise InfeasiblePartition(f"rank 0 holds {end - 1} > lelt={cfg.lelt} elements", rank=0)
    return tuple(fe)


def partition_centralized(loads, cfg: PartitionConfig, spill_left: bool = True) -> ElementProcessorMap:
    """Cut the global prefix sum nearest each threshold ``i * total / np``.

    ``loads`` is the global load array sorted by global element index (an
    :class:`ElementLoadArray` or a plain sequence).
    """
    cfg.check_feasible()
    values = loads.loads if isinstance(loads, ElementLoadArray) else loads
    prefix = PrefixSum.of(values)
    n = prefix.length
    if n != cfg.nelgt:
        raise ValueError(f"got {n} loads for nelgt={cfg.nelgt}")
    total = prefix.total
    if np.any(np.asarray(values) < 0) or not total > 0:
        raise ValueError("loads must be non-negative with a positive total")
    scaled = prefix.sums * cfg.np
    firsts = [1]
    lp = 0  # number of elements already assigned
    for i in range(1, cfg.np):
        target = i * total
        # p: 1-indexed position of the first prefix sum strictly above the threshold
        p = min(int(np.searchsorted(scaled, target, side="right")) + 1, n)
        below, above = prefix[p - 1], prefix[p]
        # d1 < d2  <=>  threshold - below < above - threshold
        cut = p - 1 if 2 * target < cfg.np * (below + above) else p
        cut = max(cut, lp)
        if cut - lp > cfg.lelt:
            cut = lp + cfg.lelt
        firsts.append(cut + 1)
        lp = cut
    return ElementProcessorMap(enforce_lelt(firsts, cfg, spill_left), cfg.nelgt)


def assign_processors(global_prefix: np.ndarray, total: float, np_: int) -> np.ndarray:
    """``floor((prefix - 1) / (total / np))`` clamped to ``[0, np - 1]``."""
    if not total > 0:
        raise ValueError("total load must be positive")
    raw = np.floor((np.asarray(global_prefix, dtype=float) - 1.0) * np_ / total)
    return np.clip(raw, 0, np_ - 1).astype(np.int64)


def _first_element_fragments(ctx: RankContext, loads: ElementLoadArray):
    """Distributed prefix/assignment stage; yields collectives.

    Returns ``(fragments, assignment)`` where ``fragments`` lists
    ``(rank k, global index of k's first element)`` for every rank whose
    first element falls in this rank's range.
    """
    local = np.cumsum(loads.loads)
    local_total = float(local[-1]) if len(local) else 0.0
    offset = yield ctx.exscan_sum(local_total)
    # the last rank's inclusive scan is the global total
    total = yield ctx.broadcast(offset + local_total, root=ctx.size - 1)
    assignment = assign_processors(local + offset, total, ctx.size)
    if len(assignment):
        last = int(assignment[-1])
    else:
        last = int(assign_processors([offset], total, ctx.size)[0]) if offset > 0 else -1
    received = yield ctx.shift_right(last)
    prev = -1 if received is None else received
    fragments = []
    for gid, proc in zip(loads.global_ids.tolist(), assignment.tolist()):
        for k in range(prev + 1, proc + 1):
            fragments.append((k, gid))
        prev = max(prev, proc)
    return fragments, assignment


def _assemble(fragments, cfg: PartitionConfig, spill_left: bool) -> tuple[int, ...]:
    firsts = [cfg.nelgt + 1] * cfg.np
    for k, gid in fragments:
        firsts[k] = gid
    return enforce_lelt(firsts, cfg, spill_left)


def _distributed_program(ctx, loads, cfg, spill_left):
    fragments, assignment = yield from _first_element_fragments(ctx, loads)
    everything = yield ctx.allgatherv(fragments)
    return _assemble(everything, cfg, spill_left), assignment


def _hybrid_program(ctx, loads, cfg, spill_left):
    fragments, assignment = yield from _first_element_fragments(ctx, loads)
    gathered = yield ctx.gather(fragments, root=0)
    firsts = None
    if ctx.rank == 0:
        firsts = _assemble([f for part in gathered for f in part], cfg, spill_left)
    firsts = yield ctx.broadcast(firsts, root=0)
    return firsts, assignment


def _centralized_program(ctx, loads, cfg, spill_left):
    # element loads travel to rank 0 as keyed messages
    inbound = yield ctx.route([(0, (loads.global_ids, loads.loads))])
    firsts = None
    if ctx.rank == 0:
        gids = np.concatenate([g for _, (g, _) in inbound])
        vals = np.concatenate([v for _, (_, v) in inbound])
        firsts = partition_centralized(vals[np.argsort(gids, kind="stable")], cfg, spill_left).first_element
    firsts = yield ctx.broadcast(firsts, root=0)
    return firsts, None


_PROGRAMS = {
    "centralized": _centralized_program,
    "distributed": _distributed_program,
    "hybrid": _hybrid_program,
}


def _check_inputs(ensemble: RankEnsemble, local_loads: Sequence[ElementLoadArray], cfg: PartitionConfig):
    cfg.check_feasible()
    if ensemble.size != cfg.np or len(local_loads) != cfg.np:
        raise ValueError(f"need {cfg.np} ranks and per-rank load arrays")
    if sum(len(l) for l in local_loads) != cfg.nelgt:
        raise ValueError(f"per-rank loads do not cover nelgt={cfg.nelgt}")


def run_partitioner(
    algorithm: str,
    ensemble: RankEnsemble,
    local_loads: Sequence[ElementLoadArray],
    cfg: PartitionConfig,
    spill_left: bool = True,
    with_assignment: bool = False,
):
    """Run one of :data:`ALGORITHMS` collectively; every rank obtains the same map."""
    if algorithm not in _PROGRAMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    _check_inputs(ensemble, local_loads, cfg)
    results = ensemble.run(_PROGRAMS[algorithm], local_loads, cfg, spill_left)
    maps = [ElementProcessorMap(tuple(firsts), cfg.nelgt) for firsts, _ in results]
    if any(m != maps[0] for m in maps):
        raise RuntimeError("ranks disagree on the new map")
    if with_assignment:
        assignment = None
        if results[0][1] is not None:
            assignment = np.concatenate([a for _, a in results])
        return maps[0], assignment
    return maps[0]


def partition_distributed(ensemble, local_loads, cfg, spill_left: bool = True) -> ElementProcessorMap:
    return run_partitioner("distributed", ensemble, local_loads, cfg, spill_left)


def partition_hybrid(ensemble, local_loads, cfg, spill_left: bool = True) -> ElementProcessorMap:
    return run_partitioner("hybrid", ensemble, local_loads, cfg, spill_left)


def split_loads(loads, emap: ElementProcessorMap) -> list[ElementLoadArray]:
    """Slice a global load vector into per-rank arrays following ``emap``."""
    values = np.asarray(loads, dtype=float)
    out = []
    for k in range(emap.np):
        r = emap.range_of(k)
        out.append(ElementLoadArray(values[r.start - 1 : r.stop - 1], np.arange(r.start, r.stop, dtype=np.int64)))
    return out
