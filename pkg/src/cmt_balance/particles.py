"""Point particles: initialization, kinematic advection and rebinning."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .mesh import Mesh, locate_elements

PAYLOAD_WIDTH = 5


class Particle(NamedTuple):
    id: int
    position: np.ndarray
    velocity: np.ndarray
    payload: np.ndarray
    element: int


@dataclass
class ParticleSet:
    """Particle container: ids, bindings, and one packed float array.

    ``data`` columns are position (0:3), velocity (3:6) and payload (6:);
    :attr:`pos`, :attr:`vel` and :attr:`payload` are views into it. ``elem``
    holds each particle's binding (1-indexed global element index).
    """

    ids: np.ndarray
    data: np.ndarray
    elem: np.ndarray

    @classmethod
    def build(cls, ids, pos, vel, payload, elem) -> "ParticleSet":
        data = np.concatenate([np.asarray(pos, float), np.asarray(vel, float), np.asarray(payload, float)], axis=1)
        return cls(np.asarray(ids, dtype=np.int64), data, np.asarray(elem, dtype=np.int64))

    @classmethod
    def empty(cls, payload_width: int = PAYLOAD_WIDTH) -> "ParticleSet":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 6 + payload_width)), np.empty(0, dtype=np.int64))

    @property
    def pos(self) -> np.ndarray:
        return self.data[:, 0:3]

    @property
    def vel(self) -> np.ndarray:
        return self.data[:, 3:6]

    @property
    def payload(self) -> np.ndarray:
        return self.data[:, 6:]

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Particle]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Particle:
        return Particle(int(self.ids[i]), self.pos[i], self.vel[i], self.payload[i], int(self.elem[i]))

    @property
    def binding(self) -> dict[int, int]:
        return dict(zip(self.ids.tolist(), self.elem.tolist()))

    def subset(self, index) -> "ParticleSet":
        return ParticleSet(self.ids[index], self.data[index], self.elem[index])

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.ids.copy(), self.data.copy(), self.elem.copy())

    def sorted_by_id(self) -> "ParticleSet":
        return self.subset(np.argsort(self.ids, kind="stable"))

    @staticmethod
    def concat(parts: list["ParticleSet"]) -> "ParticleSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return ParticleSet.empty()
        if len(parts) == 1:
            return parts[0]
        return ParticleSet(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.data for p in parts]),
            np.concatenate([p.elem for p in parts]),
        )

    def counts_per_element(self, gids: np.ndarray) -> np.ndarray:
        """Number of particles bound to each of ``gids`` (which must be sorted)."""
        gids = np.asarray(gids, dtype=np.int64)
        if len(gids) == 0:
            return np.zeros(0, dtype=np.int64)
        if gids[-1] - gids[0] + 1 == len(gids):
            # contiguous range: direct offset
            rel = self.elem - gids[0]
            rel = rel[(rel >= 0) & (rel < len(gids))]
            return np.bincount(rel, minlength=len(gids)).astype(np.int64)
        slot = np.searchsorted(gids, self.elem)
        inside = (slot < len(gids)) & (gids[np.minimum(slot, len(gids) - 1)] == self.elem)
        return np.bincount(slot[inside], minlength=len(gids)).astype(np.int64)


def init_particles(mesh: Mesh, region_lo, region_hi, count: int, seed: int) -> ParticleSet:
    """Place ``count`` particles uniformly at random in a box region.

    The region is clipped to the domain. Sampling uses a Philox
    counter-based generator, so a given ``seed`` always yields the same set.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    lo = np.maximum(np.asarray(region_lo, dtype=float), mesh.extent_lo)
    hi = np.minimum(np.asarray(region_hi, dtype=float), mesh.extent_hi)
    if np.any(hi < lo):
        raise ValueError(f"region {list(region_lo)}..{list(region_hi)} does not intersect the domain")
    if count == 0:
        return ParticleSet.empty()
    rng = np.random.Generator(np.random.Philox(seed))
    pos = lo + (hi - lo) * rng.random((count, 3))
    payload = np.zeros((count, PAYLOAD_WIDTH))
    payload[:, 0] = 1.0
    return ParticleSet.build(np.arange(count), pos, np.zeros((count, 3)), payload, locate_elements(mesh, pos))


def advect(ps: ParticleSet, mesh: Mesh, dt: float, rate: float, x_left: float) -> ParticleSet:
    """One forward-Euler step of the expansion surrogate ``v_x = rate * (x - x_left)``.

    Particles at or left of ``x_left`` do not move, so the map is monotone in
    x and no particle overtakes another. Positions are clamped to the domain;
    bindings are left stale until :func:`rebin`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if rate < 0:
        raise ValueError("rate must be non-negative")
    out = ParticleSet(ps.ids, ps.data.copy(), ps.elem)
    pos, vel, payload = out.pos, out.vel, out.payload
    vel[:, 0] = rate * np.maximum(pos[:, 0] - x_left, 0.0)
    vel[:, 1:] = 0.0
    pos[:, 0] = np.clip(pos[:, 0] + dt * vel[:, 0], mesh.extent_lo[0], mesh.extent_hi[0])
    # surrogate for the particle-side conserved quantities; purely per-particle
    payload[:, 1] += dt * vel[:, 0]
    payload[:, 4] += dt * payload[:, 0]
    return out


def rebin(ps: ParticleSet, mesh: Mesh, emap) -> tuple[ParticleSet, list[tuple[int, int, int]]]:
    """Recompute bindings and list particles whose owning rank changed.

    Returns the rebound set and a manifest of ``(id, from_rank, to_rank)``.
    """
    new_elem = locate_elements(mesh, ps.pos) if len(ps) else ps.elem.copy()
    old_owner = emap.owner(ps.elem)
    new_owner = emap.owner(new_elem)
    moved = np.nonzero(old_owner != new_owner)[0]
    manifest = [(int(ps.ids[i]), int(old_owner[i]), int(new_owner[i])) for i in moved]
    return ParticleSet(ps.ids, ps.data, new_elem), manifest
