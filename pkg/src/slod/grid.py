"""Coarse Cartesian meshes, element patches and fine-grid index maps.

The domain is the unit interval/square. Coarse elements and fine vertices are
numbered lexicographically with the x index running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class CoarseMesh:
    d: int
    n_per_dim: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"unsupported dimension d={self.d}; only 1 and 2 are supported")
        if self.n_per_dim < 2:
            raise GridError(f"n_per_dim must be >= 2, got {self.n_per_dim}")

    @property
    def H(self) -> float:
        return 1.0 / self.n_per_dim

    @property
    def num_elements(self) -> int:
        return self.n_per_dim**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_dim,) * self.d

    def multi_index(self, T: int) -> tuple[int, ...]:
        if not 0 <= T < self.num_elements:
            raise GridError(f"element id {T} out of range [0, {self.num_elements})")
        n = self.n_per_dim
        return tuple((T // n**k) % n for k in range(self.d))

    def element_id(self, idx) -> int:
        n = self.n_per_dim
        return int(sum(int(i) * n**k for k, i in enumerate(idx)))

    def element_coords(self) -> np.ndarray:
        """(num_elements, d) array of element multi-indices in id order."""
        ids = np.arange(self.num_elements)
        n = self.n_per_dim
        return np.stack([(ids // n**k) % n for k in range(self.d)], axis=1)

    def element_center(self, T: int) -> np.ndarray:
        return (np.asarray(self.multi_index(T)) + 0.5) * self.H


def build_cartesian_mesh(d: int, n_per_dim: int) -> CoarseMesh:
    return CoarseMesh(d, n_per_dim)


@dataclass(frozen=True)
class PatchIndexSet:
    """Patch N^ell(T): a box of coarse elements ``lo <= idx < hi`` per axis."""

    mesh: CoarseMesh
    center: int
    ell: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @cached_property
    def elements(self) -> np.ndarray:
        ranges = [np.arange(a, b) for a, b in zip(self.lo, self.hi)]
        grids = np.meshgrid(*ranges, indexing="ij")
        n = self.mesh.n_per_dim
        ids = sum(g * n**k for k, g in enumerate(grids))
        return np.sort(np.ravel(ids))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def touches_boundary(self) -> bool:
        n = self.mesh.n_per_dim
        return any(a == 0 for a in self.lo) or any(b == n for b in self.hi)

    @property
    def equals_domain(self) -> bool:
        n = self.mesh.n_per_dim
        return all(a == 0 for a in self.lo) and all(b == n for b in self.hi)

    def __len__(self):
        return int(np.prod(self.shape))

    def __contains__(self, T):
        idx = self.mesh.multi_index(int(T))
        return all(a <= i < b for i, a, b in zip(idx, self.lo, self.hi))


def element_patch(mesh: CoarseMesh, T: int, ell: int) -> PatchIndexSet:
    """All elements within Chebyshev distance ``ell`` of ``T`` (closed-element adjacency)."""
    if ell < 1:
        raise GridError(f"patch order must be >= 1, got {ell}")
    idx = mesh.multi_index(T)
    n = mesh.n_per_dim
    lo = tuple(max(i - ell, 0) for i in idx)
    hi = tuple(min(i + ell + 1, n) for i in idx)
    return PatchIndexSet(mesh, int(T), int(ell), lo, hi)


def whole_domain(mesh: CoarseMesh) -> PatchIndexSet:
    return PatchIndexSet(mesh, -1, 0, (0,) * mesh.d, (mesh.n_per_dim,) * mesh.d)


@dataclass(frozen=True)
class Region:
    """Fine-grid index maps for a box of coarse elements.

    ``local_to_global`` lists the global fine vertex of every local vertex in
    local lexicographic order. ``gamma`` holds local vertices on the closure of
    the artificial boundary (Dirichlet), ``outer`` local vertices on the domain
    boundary that are not in ``gamma``.
    """

    fine: "FineGrid"
    patch: PatchIndexSet
    n_cells: tuple[int, ...]
    offset: tuple[int, ...]
    local_to_global: np.ndarray
    gamma: np.ndarray
    outer: np.ndarray
    cell_to_global: np.ndarray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.local_to_global.size

    @property
    def d(self) -> int:
        return len(self.n_cells)

    def extend(self, v_local: np.ndarray) -> np.ndarray:
        """Zero extension of a local vertex vector to the global fine grid."""
        out = np.zeros(self.fine.num_vertices, dtype=np.result_type(v_local, float))
        out[self.local_to_global] = v_local
        return out

    def restrict(self, v_global: np.ndarray) -> np.ndarray:
        return v_global[self.local_to_global]

    def vertex_coords(self) -> np.ndarray:
        return self.fine.vertex_coords()[self.local_to_global]

    def cell_centers(self) -> np.ndarray:
        return self.fine.cell_centers()[self.cell_to_global]

    def cell_vertices(self) -> np.ndarray:
        """(num_cells, 2^d) local vertex indices, counterclockwise in 2D."""
        return _cell_vertices(self.n_cells)

    def cell_coarse_element(self) -> np.ndarray:
        """Position of each local cell's coarse element within ``patch.elements``."""
        r = self.fine.ratio
        cidx = _cell_multi_indices(self.n_cells)
        pshape = self.patch.shape
        loc = cidx // r
        pos = np.zeros(loc.shape[0], dtype=np.int64)
        stride = 1
        for k in range(self.d):
            pos += loc[:, k] * stride
            stride *= pshape[k]
        return pos


def _cell_multi_indices(n_cells):
    ranges = [np.arange(n) for n in n_cells]
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([np.ravel(g, order="F") for g in grids], axis=1)


def _lex(idx, n_points):
    out = np.zeros(idx.shape[0], dtype=np.int64)
    stride = 1
    for k, n in enumerate(n_points):
        out += idx[:, k] * stride
        stride *= n
    return out


def _cell_vertices(n_cells):
    cidx = _cell_multi_indices(n_cells)
    npts = tuple(n + 1 for n in n_cells)
    if len(n_cells) == 1:
        offsets = [(0,), (1,)]
    else:
        offsets = [(0, 0), (1, 0), (1, 1), (0, 1)]
    return np.stack([_lex(cidx + np.array(o), npts) for o in offsets], axis=1)


@dataclass(frozen=True)
class FineGrid:
    mesh: CoarseMesh
    n_fine: int

    def __post_init__(self):
        n = self.n_fine
        if n < self.mesh.n_per_dim or n % self.mesh.n_per_dim:
            raise GridError(
                f"fine subdivisions {n} must be a multiple of the coarse subdivisions "
                f"{self.mesh.n_per_dim}"
            )

    @property
    def d(self) -> int:
        return self.mesh.d

    @property
    def h(self) -> float:
        return 1.0 / self.n_fine

    @property
    def ratio(self) -> int:
        return self.n_fine // self.mesh.n_per_dim

    @property
    def num_vertices(self) -> int:
        return (self.n_fine + 1) ** self.d

    @property
    def num_cells(self) -> int:
        return self.n_fine**self.d

    def vertex_coords(self) -> np.ndarray:
        idx = _cell_multi_indices((self.n_fine + 1,) * self.d)
        return idx * self.h

    def cell_centers(self) -> np.ndarray:
        idx = _cell_multi_indices((self.n_fine,) * self.d)
        return (idx + 0.5) * self.h

    def boundary_vertices(self) -> np.ndarray:
        idx = _cell_multi_indices((self.n_fine + 1,) * self.d)
        on = np.any((idx == 0) | (idx == self.n_fine), axis=1)
        return np.flatnonzero(on)


def restrict_region(fine: FineGrid, patch: PatchIndexSet) -> Region:
    r = fine.ratio
    n = fine.n_fine
    lo = np.array(patch.lo) * r
    hi = np.array(patch.hi) * r
    n_cells = tuple(int(x) for x in hi - lo)
    npts = tuple(c + 1 for c in n_cells)

    vidx = _cell_multi_indices(npts)
    gidx = vidx + lo
    local_to_global = _lex(gidx, (n + 1,) * fine.d)

    on_gamma = np.zeros(vidx.shape[0], dtype=bool)
    on_outer = np.zeros(vidx.shape[0], dtype=bool)
    for k in range(fine.d):
        low_face = gidx[:, k] == lo[k]
        high_face = gidx[:, k] == hi[k]
        on_gamma |= (low_face & (lo[k] > 0)) | (high_face & (hi[k] < n))
        on_outer |= (gidx[:, k] == 0) | (gidx[:, k] == n)
    on_outer &= ~on_gamma

    cidx = _cell_multi_indices(n_cells) + lo
    cell_to_global = _lex(cidx, (n,) * fine.d)

    return Region(
        fine=fine,
        patch=patch,
        n_cells=n_cells,
        offset=tuple(int(x) for x in lo),
        local_to_global=local_to_global,
        gamma=np.flatnonzero(on_gamma),
        outer=np.flatnonzero(on_outer),
        cell_to_global=cell_to_global,
    )
