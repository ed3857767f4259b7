"""Structured hexahedral spectral-element mesh and its 1-D element ordering.

Elements are addressed two ways: by structured cell ``(i, j, k)`` and by a
1-indexed global element index, which is the element's position in the
locality-preserving ordering produced by :func:`order_elements`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Mesh:
    extent_lo: tuple[float, float, float]
    extent_hi: tuple[float, float, float]
    elems_per_axis: tuple[int, int, int]
    n_per_axis: int
    # ordering[pos] = linear cell index (x fastest) of the element at 0-based position pos
    ordering: np.ndarray = field(repr=False, compare=False)

    @property
    def nelgt(self) -> int:
        nx, ny, nz = self.elems_per_axis
        return nx * ny * nz

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Face coordinates along each axis (``elems_per_axis[a] + 1`` values)."""
        return tuple(
            np.linspace(lo, hi, n + 1)
            for lo, hi, n in zip(self.extent_lo, self.extent_hi, self.elems_per_axis)
        )

    @cached_property
    def position_of_cell(self) -> np.ndarray:
        inv = np.empty(self.nelgt, dtype=np.int64)
        inv[self.ordering] = np.arange(self.nelgt, dtype=np.int64)
        return inv

    def cell_of(self, gid: int | np.ndarray) -> np.ndarray:
        """Structured ``(i, j, k)`` cell(s) of 1-indexed global element index ``gid``."""
        lin = self.ordering[np.asarray(gid, dtype=np.int64) - 1]
        nx, ny, _ = self.elems_per_axis
        return np.stack([lin % nx, (lin // nx) % ny, lin // (nx * ny)], axis=-1)

    def gid_of_cell(self, i, j, k) -> np.ndarray:
        nx, ny, _ = self.elems_per_axis
        lin = np.asarray(i) + nx * (np.asarray(j) + ny * np.asarray(k))
        return self.position_of_cell[lin] + 1

    def cell_bounds(self, gid: int) -> tuple[np.ndarray, np.ndarray]:
        i, j, k = self.cell_of(gid)
        ex, ey, ez = self.edges
        return (np.array([ex[i], ey[j], ez[k]]), np.array([ex[i + 1], ey[j + 1], ez[k + 1]]))

    def cell_center(self, gid: int) -> np.ndarray:
        lo, hi = self.cell_bounds(gid)
        return 0.5 * (lo + hi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.asarray(self.extent_lo)
        hi = np.asarray(self.extent_hi)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.extent_lo, self.extent_hi)

    def element_geometry(self, gids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Gauss-Lobatto-Legendre point coordinates, shape ``(len(gids), 3, N, N, N)``.

        This is the static per-element data that is recomputed (never
        transferred) after a repartitioning.
        """
        gids = np.asarray(gids, dtype=np.int64)
        n = self.n_per_axis
        ref = gll_points(n)
        out = np.empty((len(gids), 3, n, n, n))
        if len(gids) == 0:
            return out
        cells = self.cell_of(gids)
        for axis in range(3):
            e = self.edges[axis]
            lo = e[cells[:, axis]]
            hi = e[cells[:, axis] + 1]
            coord = lo[:, None] + 0.5 * (hi - lo)[:, None] * (ref[None, :] + 1.0)
            shape = [len(gids), 1, 1, 1]
            shape[axis + 1] = n
            out[:, axis] = np.broadcast_to(coord.reshape(shape), (len(gids), n, n, n))
        return out


def gll_points(n: int) -> np.ndarray:
    """The ``n`` Gauss-Lobatto-Legendre nodes on [-1, 1]."""
    if n == 2:
        return np.array([-1.0, 1.0])
    interior = np.polynomial.legendre.Legendre.basis(n - 1).deriv().roots()
    return np.concatenate([[-1.0], np.sort(interior.real), [1.0]])


def build_mesh(extent_lo, extent_hi, elems_per_axis, n_per_axis: int) -> Mesh:
    lo = tuple(float(v) for v in extent_lo)
    hi = tuple(float(v) for v in extent_hi)
    counts = tuple(int(v) for v in elems_per_axis)
    if len(lo) != 3 or len(hi) != 3 or len(counts) != 3:
        raise ValueError("extents and element counts must be 3-vectors")
    if any(c < 1 for c in counts):
        raise ValueError(f"element counts must be positive, got {counts}")
    if any(h <= l for l, h in zip(lo, hi)):
        raise ValueError(f"extent_hi must exceed extent_lo componentwise: {lo} vs {hi}")
    if int(n_per_axis) < 2:
        raise ValueError(f"n_per_axis must be >= 2, got {n_per_axis}")
    nelgt = counts[0] * counts[1] * counts[2]
    return Mesh(lo, hi, counts, int(n_per_axis), np.arange(nelgt, dtype=np.int64))


def _bisect(box, out: list[int], dims) -> None:
    (i0, i1), (j0, j1), (k0, k1) = box
    sizes = (i1 - i0, j1 - j0, k1 - k0)
    if sizes == (1, 1, 1):
        nx, ny, _ = dims
        out.append(i0 + nx * (j0 + ny * k0))
        return
    # max() returns the first maximal axis, giving the x > y > z tie-break
    axis = max(range(3), key=lambda a: sizes[a])
    a0, a1 = box[axis]
    mid = a0 + (sizes[axis] + 1) // 2
    left = list(box)
    right = list(box)
    left[axis] = (a0, mid)
    right[axis] = (mid, a1)
    _bisect(left, out, dims)
    _bisect(right, out, dims)


def order_elements(mesh: Mesh) -> Mesh:
    """Return ``mesh`` with its ordering set by recursive coordinate bisection.

    The cell box is split along its longest axis (in cells; ties go x, then y,
    then z), the left half receiving ``ceil(count / 2)`` cells. Halves are
    ordered left then right, so every bisection subtree is a contiguous run of
    the 1-D ordering.
    """
    nx, ny, nz = mesh.elems_per_axis
    out: list[int] = []
    _bisect(((0, nx), (0, ny), (0, nz)), out, mesh.elems_per_axis)
    return replace(mesh, ordering=np.asarray(out, dtype=np.int64))


def locate_elements(mesh: Mesh, points: np.ndarray, check: bool = True) -> np.ndarray:
    """Vectorized :func:`locate_element` for an ``(n, 3)`` array of points.

    ``check=False`` skips the domain test for points already clamped.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if check:
        inside = mesh.contains(pts)
        if not np.all(inside):
            raise ValueError(f"point {pts[~inside][0].tolist()} lies outside the mesh domain")
    idx = []
    for axis in range(3):
        e = mesh.edges[axis]
        if len(e) == 2:
            idx.append(0)
            continue
        # side='right' puts points on an internal face into the higher cell
        c = np.searchsorted(e, pts[:, axis], side="right") - 1
        idx.append(np.minimum(c, len(e) - 2))
    gids = mesh.gid_of_cell(*idx)
    return np.broadcast_to(gids, (len(pts),)).astype(np.int64)


def locate_element(mesh: Mesh, point) -> int:
    return int(locate_elements(mesh, np.asarray(point, dtype=float).reshape(1, 3))[0])
