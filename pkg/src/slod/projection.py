"""Piecewise-constant L2 projection onto coarse elements and its adjoint load."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .grid import Region


@dataclass(frozen=True)
class P0Vector:
    """One complex value per coarse element of ``region.patch`` (in ``patch.elements`` order)."""

    values: np.ndarray
    region: Region

    def __post_init__(self):
        if self.values.shape != (len(self.region.patch),):
            raise ValueError(
                f"P0 vector has {self.values.shape} entries, region has {len(self.region.patch)} elements"
            )


def moment_matrix(region: Region) -> sparse.csr_matrix:
    """``P[K, i] = integral over K of the fine hat function i`` (exact for Q1)."""
    cv = region.cell_vertices()
    owner = region.cell_coarse_element()
    nloc = 2**region.d
    w = region.fine.h**region.d / nloc
    rows = np.repeat(owner, nloc)
    data = np.full(rows.size, w)
    return sparse.coo_matrix(
        (data, (rows, cv.ravel())), shape=(len(region.patch), region.num_vertices)
    ).tocsr()


def project(v: np.ndarray, region: Region) -> P0Vector:
    """Element means of a Q1 function given by its local vertex values."""
    H = region.fine.mesh.H
    vals = moment_matrix(region) @ np.asarray(v) / H**region.d
    return P0Vector(np.asarray(vals, dtype=complex), region)


def p0_load(g: P0Vector) -> np.ndarray:
    """Load vector ``(g, psi_i)`` for every local fine hat function ``psi_i``."""
    return moment_matrix(g.region).T @ g.values


def embed(g: P0Vector) -> np.ndarray:
    """Per-fine-cell values of the piecewise-constant function ``g``."""
    return g.values[g.region.cell_coarse_element()]


def project_cells(cell_values: np.ndarray, region: Region) -> P0Vector:
    """Element means of a fine-cell piecewise-constant function."""
    owner = region.cell_coarse_element()
    m = len(region.patch)
    sums = np.bincount(owner, weights=np.real(cell_values), minlength=m) + 1j * np.bincount(
        owner, weights=np.imag(cell_values), minlength=m
    )
    counts = np.bincount(owner, minlength=m)
    return P0Vector(sums / counts, region)
