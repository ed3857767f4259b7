"""Rank-local state and the element/particle migration that applies a new map."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .comm import RankEnsemble
from .mesh import Mesh
from .particles import ParticleSet
from .partition import ElementProcessorMap

N_CONSERVED = 5  # mass, energy, three momentum components

WIRE_TAG = 1
_HEADER = struct.Struct("<qIIqI")  # element id, n_fields, points per field, particle count, payload width
_PREFIX = struct.Struct("<BI")  # format tag, header length


class StaleStaticData(AssertionError):
    """Static element data was used after an ownership change without reinitialization."""


@dataclass
class RankState:
    rank: int
    gids: np.ndarray  # owned global element indices, ascending
    fields: np.ndarray  # (n_owned, N_CONSERVED, N, N, N) dynamic data
    geometry: np.ndarray  # (n_owned, 3, N, N, N) static data
    particles: ParticleSet
    ownership_generation: int = 0
    static_generation: int = 0
    timings: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.gids)

    def require_static_current(self) -> None:
        if __debug__ and self.static_generation != self.ownership_generation:
            raise StaleStaticData(
                f"rank {self.rank}: static data generation {self.static_generation} "
                f"!= ownership generation {self.ownership_generation}"
            )

    def check_invariants(self, mesh: Mesh, emap: ElementProcessorMap | None = None) -> None:
        assert np.all(np.diff(self.gids) > 0)
        assert len(self.fields) == len(self.gids) == len(self.geometry)
        if emap is not None:
            r = emap.range_of(self.rank)
            assert np.array_equal(self.gids, np.arange(r.start, r.stop))
        if len(self.particles):
            assert np.all(np.isin(self.particles.elem, self.gids))


def new_rank_state(rank: int, gids, mesh: Mesh, particles: ParticleSet, fields=None) -> RankState:
    gids = np.asarray(gids, dtype=np.int64)
    if fields is None:
        fields = initial_fields(mesh, gids)
    return RankState(rank, gids, fields, mesh.element_geometry(gids), particles)


def initial_fields(mesh: Mesh, gids) -> np.ndarray:
    """Deterministic starting conserved-variable blocks (density 1, energy from x)."""
    geom = mesh.element_geometry(gids)
    out = np.zeros((len(gids), N_CONSERVED) + geom.shape[2:])
    out[:, 0] = 1.0
    out[:, 1] = 2.5 + 0.01 * geom[:, 0]
    return out


# --- wire format -----------------------------------------------------------


def pack_element(gid: int, block: np.ndarray, particles: ParticleSet) -> bytes:
    """Serialize one element's dynamic block and its particles.

    Layout: ``<B`` format tag, ``<I`` header length, header ``<qIIqI``
    (element id, field count, points per field, particle count, payload
    width), then little-endian float64 field data, int64 particle ids and
    float64 positions, velocities and payloads.
    """
    block = np.asarray(block)
    count = len(particles)
    width = particles.payload.shape[1]
    header = _HEADER.pack(int(gid), block.shape[0], int(np.prod(block.shape[1:])), count, width)
    return b"".join(
        [
            _PREFIX.pack(WIRE_TAG, len(header)),
            header,
            block.astype("<f8").tobytes(),
            particles.ids.astype("<i8").tobytes(),
            np.ascontiguousarray(particles.pos).astype("<f8").tobytes(),
            np.ascontiguousarray(particles.vel).astype("<f8").tobytes(),
            np.ascontiguousarray(particles.payload).astype("<f8").tobytes(),
        ]
    )


def unpack_element(buf: bytes, n_per_axis: int) -> tuple[int, np.ndarray, ParticleSet]:
    tag, hlen = _PREFIX.unpack_from(buf, 0)
    if tag != WIRE_TAG:
        raise ValueError(f"unknown wire format tag {tag}")
    gid, nf, npts, count, width = _HEADER.unpack_from(buf, _PREFIX.size)
    if npts != n_per_axis**3:
        raise ValueError(f"element {gid}: {npts} points per field, expected {n_per_axis ** 3}")
    off = _PREFIX.size + hlen

    def take(dtype, n):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off)
        off += arr.nbytes
        return arr.astype(dtype[1:])  # native-order, writable copy

    block = take("<f8", nf * npts).reshape((nf,) + (n_per_axis,) * 3)
    ids = take("<i8", count)
    pos = take("<f8", 3 * count).reshape(count, 3)
    vel = take("<f8", 3 * count).reshape(count, 3)
    payload = take("<f8", width * count).reshape(count, width)
    if off != len(buf):
        raise ValueError(f"element {gid}: {len(buf) - off} trailing bytes")
    elem = np.full(count, gid, dtype=np.int64)
    return gid, block, ParticleSet.build(ids, pos, vel, payload, elem)


# --- planning and execution ------------------------------------------------


@dataclass(frozen=True)
class TransferPlan:
    old_map: ElementProcessorMap
    new_map: ElementProcessorMap
    outbound: dict[int, list[tuple[int, int]]]  # source rank -> [(gid, dest rank)]

    @property
    def moves(self) -> list[tuple[int, int, int]]:
        """All ``(gid, src, dest)`` triples in element order."""
        return sorted((gid, src, dest) for src, out in self.outbound.items() for gid, dest in out)

    def __len__(self) -> int:
        return sum(len(v) for v in self.outbound.values())

    def particle_manifest(self, states: list[RankState]) -> list[tuple[int, int, int]]:
        """``(particle id, src, dest)`` for every particle carried by a moving element."""
        out = []
        for src, moves in sorted(self.outbound.items()):
            dest_of = dict(moves)
            ps = states[src].particles
            for pid, gid in zip(ps.ids.tolist(), ps.elem.tolist()):
                if gid in dest_of:
                    out.append((pid, src, dest_of[gid]))
        return sorted(out)


def plan_transfers(old_map: ElementProcessorMap, new_map: ElementProcessorMap) -> TransferPlan:
    if old_map.nelgt != new_map.nelgt or old_map.np != new_map.np:
        raise ValueError("maps cover different element or rank counts")
    gids = np.arange(1, old_map.nelgt + 1)
    src = old_map.owner(gids)
    dest = new_map.owner(gids)
    outbound: dict[int, list[tuple[int, int]]] = {}
    for i in np.nonzero(src != dest)[0]:
        outbound.setdefault(int(src[i]), []).append((int(gids[i]), int(dest[i])))
    return TransferPlan(old_map, new_map, outbound)


def _migrate_program(ctx, state: RankState, plan: TransferPlan, n_per_axis: int):
    moves = plan.outbound.get(ctx.rank, [])
    if not np.array_equal(state.gids, np.arange(*_bounds(plan.old_map, ctx.rank))):
        raise ValueError(f"rank {ctx.rank}: state does not match the plan's old map")
    leaving = np.array([gid for gid, _ in moves], dtype=np.int64)
    slot = {gid: i for i, gid in enumerate(state.gids.tolist())}
    # group particles by element once: element gid's particles are by_elem[lo:hi]
    by_elem = np.argsort(state.particles.elem, kind="stable")
    sorted_elem = state.particles.elem[by_elem]
    outbound = []
    for gid, dest in moves:
        lo, hi = np.searchsorted(sorted_elem, [gid, gid + 1])
        carried = state.particles.subset(by_elem[lo:hi])
        outbound.append((dest, pack_element(gid, state.fields[slot[gid]], carried)))
    inbound = yield ctx.route(outbound)

    keep = ~np.isin(state.gids, leaving)
    keep_p = ~np.isin(state.particles.elem, leaving)
    gids = [state.gids[keep]]
    fields = [state.fields[keep]]
    geometry = [state.geometry[keep]]
    parts = [state.particles.subset(keep_p)]
    for _, buf in inbound:
        gid, block, ps = unpack_element(buf, n_per_axis)
        gids.append(np.array([gid], dtype=np.int64))
        fields.append(block[None])
        # placeholder until reinitialize_static recomputes it
        geometry.append(np.full((1,) + state.geometry.shape[1:], np.nan))
        parts.append(ps)
    gids_all = np.concatenate(gids)
    order = np.argsort(gids_all, kind="stable")
    state.gids = gids_all[order]
    state.fields = np.concatenate(fields)[order]
    state.geometry = np.concatenate(geometry)[order]
    state.particles = ParticleSet.concat(parts).sorted_by_id()
    if len(moves) or len(inbound):
        state.ownership_generation += 1
    return state


def _bounds(emap: ElementProcessorMap, rank: int) -> tuple[int, int]:
    r = emap.range_of(rank)
    return r.start, r.stop


def execute_migration(ensemble: RankEnsemble, states: list[RankState], plan: TransferPlan, n_per_axis: int) -> list[RankState]:
    """Pack, route and unpack every moving element together with its particles.

    States are updated in place (each by its own rank) and returned.
    Static geometry of received elements is left invalid; call
    :func:`reinitialize_static` afterwards.
    """
    return ensemble.run(_migrate_program, states, plan, n_per_axis)


def reinitialize_static(state: RankState, mesh: Mesh) -> RankState:
    state.geometry = mesh.element_geometry(state.gids)
    state.static_generation = state.ownership_generation
    return state
