"""Q1 finite element assembly of the Helmholtz sesquilinear form on Cartesian regions.

Discrete convention: for vectors ``u, v`` of nodal values, ``a(u, v) = v^H K u`` with
``K = S - kappa^2 M - i kappa B``. All element matrices are integrated exactly on
axis-aligned cells; coefficients and PML stretch factors are sampled at cell
centers.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .grid import FineGrid, Region

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class SolverWarning(UserWarning):
    pass


class ResolutionWarning(UserWarning):
    pass


# 1D reference matrices on an interval of length h: K1 / h and M1 * h
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
_M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
# local (x, y) position of the counterclockwise corners of a square cell
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def element_matrices(d: int, h: float):
    """Return ``(Sx, Sy, M)`` for one cell of side ``h``; ``Sy`` is None in 1D.

    ``Sx`` and ``Sy`` are the directional parts of the stiffness matrix, so the
    full Laplace stiffness is ``Sx + Sy``.
    """
    if d == 1:
        return _K1 / h, None, _M1 * h
    a, b = _CORNERS[:, 0], _CORNERS[:, 1]
    Sx = _K1[np.ix_(a, a)] * _M1[np.ix_(b, b)]
    Sy = _M1[np.ix_(a, a)] * _K1[np.ix_(b, b)]
    M = _M1[np.ix_(a, a)] * _M1[np.ix_(b, b)] * h**2
    return Sx, Sy, M


def _edge_mass(h):
    return _M1 * h


# -- coefficients ----------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Positive scalar coefficient, piecewise constant on fine cells.

    ``rule`` maps an (n, d) array of cell centers to n positive values.
    """

    rule: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    homogeneous: bool = False

    def __call__(self, centers: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.rule(centers), dtype=float)
        if vals.shape != (centers.shape[0],):
            vals = np.broadcast_to(vals, (centers.shape[0],)).copy()
        if np.any(vals <= 0):
            raise ValueError(f"coefficient {self.name!r} must be positive")
        return vals

    @classmethod
    def constant(cls, value: float = 1.0) -> "CoefficientField":
        return cls(lambda c: np.full(c.shape[0], float(value)), f"constant({value})", True)

    @classmethod
    def periodic_inclusions(cls, eps: float, box=None) -> "CoefficientField":
        """``eps**2`` inside square inclusions of side eps/2 centered in each eps-cell.

        ``box`` optionally restricts the inclusions to ``[(x0, y0), (x1, y1)]``.
        """

        def rule(c):
            frac = np.mod(c / eps, 1.0)
            inside = np.all((frac > 0.25) & (frac < 0.75), axis=1)
            if box is not None:
                lo, hi = np.asarray(box[0]), np.asarray(box[1])
                inside &= np.all((c > lo) & (c < hi), axis=1)
            return np.where(inside, eps**2, 1.0)

        return cls(rule, f"periodic_inclusions(eps={eps})")


# -- problem description ---------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    kappa: float
    coefficient: CoefficientField = field(default_factory=CoefficientField.constant)
    bc: str = "impedance"
    pml_width: int = 4
    C_F: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"wavenumber must be positive, got {self.kappa}")
        if self.bc not in ("impedance", "pml"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.bc == "pml" and self.pml_width < 1:
            raise ValueError("PML layer must be at least one coarse cell wide")

    def resolution_flags(self, H: float, ell: int | None = None) -> dict:
        flags = {"resolved": bool(H * self.kappa <= np.pi / np.sqrt(2))}
        if ell is not None:
            flags["patch_coercive"] = bool(H * self.kappa * ell * self.C_F <= 1 / np.sqrt(2))
        return flags

    def check_resolution(self, H: float, ell: int | None = None) -> list[str]:
        msgs = []
        flags = self.resolution_flags(H, ell)
        if not flags["resolved"]:
            msgs.append(
                f"coarse mesh does not resolve the wavenumber: H*kappa = {H * self.kappa:.4g} "
                f"> pi/sqrt(2) = {np.pi / np.sqrt(2):.4g}"
            )
        if ell is not None and not flags["patch_coercive"]:
            msgs.append(
                f"H*kappa*ell*C_F = {H * self.kappa * ell * self.C_F:.4g} > 1/sqrt(2); "
                "patch coercivity is not guaranteed"
            )
        for m in msgs:
            warnings.warn(m, ResolutionWarning, stacklevel=2)
        return msgs


def absorbing_function(x, kappa: float, width: float):
    """PML absorbing profile in one coordinate for a layer of the given width.

    Purely imaginary inside the layer, zero in the physical part, unbounded at
    0 and 1.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    left = (x > 0) & (x <= width)
    right = (x >= 1 - width) & (x < 1)
    with np.errstate(divide="ignore", over="ignore"):
        out.imag[left] = (1.0 / -x[left] + 1.0 / width) / kappa
        out.imag[right] = (1.0 / (1 - x[right]) - 1.0 / width) / kappa
    return out


def stretch_factor(x, kappa: float, width: float):
    """Complex stretch ``1 + i sigma/kappa`` with damping ``sigma >= 0`` on both sides.

    The absorbing function changes sign between the two layers (it points along
    the outward normal); the damping uses its magnitude.
    """
    out = np.ones(np.shape(x), dtype=complex)
    out.imag = np.abs(np.imag(absorbing_function(x, kappa, width)))
    return out


# -- assembled operators ---------------------------------------------------------


@dataclass
class AssembledForms:
    """Sparse matrices of the local sesquilinear form on all vertices of a region.

    ``free`` and ``dirichlet`` are local vertex indices; ``Kff`` etc. give the
    blocks with Dirichlet rows/columns eliminated.
    """

    region: Region
    kappa: float
    K: sparse.csr_matrix
    S: sparse.csr_matrix
    S1: sparse.csr_matrix
    M: sparse.csr_matrix
    B: sparse.csr_matrix
    free: np.ndarray
    dirichlet: np.ndarray
    name: str = ""

    @cached_property
    def Kff(self) -> sparse.csc_matrix:
        return self.K[self.free][:, self.free].tocsc()

    @cached_property
    def Kfd(self) -> sparse.csr_matrix:
        return self.K[self.free][:, self.dirichlet]

    @cached_property
    def energy(self) -> sparse.csr_matrix:
        """Gram matrix of |||.|||^2 = |grad .|^2 + kappa^2 |.|^2."""
        return (self.S1 + self.kappa**2 * self.M).tocsr()

    @cached_property
    def energy_A(self) -> sparse.csr_matrix:
        return (self.S + self.kappa**2 * self.M).tocsr()

    @property
    def num_free(self) -> int:
        return self.free.size

    def sesquilinear(self, u, v) -> complex:
        """a(u, v) for full local vectors."""
        return np.vdot(v, self.K @ u)

    def factorization(self) -> "Factorization":
        if "_lu" not in self.__dict__:
            self.__dict__["_lu"] = Factorization(self.Kff, self.name)
        return self.__dict__["_lu"]


class Factorization:
    """Sparse LU of a free-DOF block, reused across right-hand sides.

    The matrices are structurally symmetric, so a symmetric minimum-degree
    ordering with a weak diagonal pivot preference keeps the fill low. If a
    solve misses the residual tolerance the factorization is redone with full
    partial pivoting before warning.
    """

    def __init__(self, A: sparse.spmatrix, name: str = ""):
        self.A = sparse.csc_matrix(A, dtype=complex)
        self.name = name
        self.residuals: list[float] = []
        self.pivoting = "symmetric"
        self._lu = self._factor(diag_pivot_thresh=0.01, options={"SymmetricMode": True})

    def _factor(self, **kw):
        try:
            return spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", **kw)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed on region {self.name}: {exc}") from exc

    def _residual(self, x, rhs, adjoint):
        A = self.A.conj().T if adjoint else self.A
        res = np.linalg.norm(A @ x - rhs, axis=0) / np.linalg.norm(rhs, axis=0).clip(1e-300)
        return float(np.max(res))

    def solve(self, rhs: np.ndarray, adjoint: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=complex)
        if rhs.size == 0 or not np.any(rhs):
            return np.zeros_like(rhs)
        x = self._lu.solve(rhs, trans="H" if adjoint else "N")
        worst = self._residual(x, rhs, adjoint)
        if worst > RESIDUAL_TOL and self.pivoting == "symmetric":
            log.info("residual %.2e on %s; refactoring with partial pivoting", worst, self.name)
            self._lu = self._factor()
            self.pivoting = "partial"
            x = self._lu.solve(rhs, trans="H" if adjoint else "N")
            worst = self._residual(x, rhs, adjoint)
        self.residuals.append(worst)
        if worst > RESIDUAL_TOL:
            warnings.warn(
                f"relative residual {worst:.2e} above {RESIDUAL_TOL:g} on region {self.name}",
                SolverWarning,
                stacklevel=2,
            )
        return x


def _assemble(region: Region, cx, cy, cm):
    """COO assembly of sum_cells (cx Sx + cy Sy - cm M)-type blocks; returns (Sdir, M)."""
    d = region.d
    h = region.fine.h
    Sx, Sy, Me = element_matrices(d, h)
    cv = region.cell_vertices()
    nv = region.num_vertices
    rows = np.repeat(cv[:, :, None], cv.shape[1], axis=2).ravel()
    cols = np.repeat(cv[:, None, :], cv.shape[1], axis=1).ravel()

    def build(coef, E):
        data = (np.asarray(coef)[:, None, None] * E[None]).ravel()
        return sparse.coo_matrix((data, (rows, cols)), shape=(nv, nv)).tocsr()

    S = build(cx, Sx)
    if d == 2:
        S = S + build(cy, Sy)
    M = build(cm, Me)
    return S.tocsr(), M.tocsr()


def _boundary_mass(region: Region) -> sparse.csr_matrix:
    """Mass matrix of the trace on faces lying in the domain boundary."""
    nv = region.num_vertices
    n = region.fine.n_fine
    if region.d == 1:
        g = region.local_to_global
        on = np.flatnonzero((g == 0) | (g == n))
        return sparse.csr_matrix((np.ones(on.size), (on, on)), shape=(nv, nv))
    cv = region.cell_vertices()
    cidx = np.stack(np.divmod(region.cell_to_global, n)[::-1], axis=1)
    Eb = _edge_mass(region.fine.h)
    rows, cols, data = [], [], []
    # (vertex pair, boundary test) for bottom, right, top, left edges
    edges = [
        ((0, 1), cidx[:, 1] == 0),
        ((1, 2), cidx[:, 0] == n - 1),
        ((2, 3), cidx[:, 1] == n - 1),
        ((3, 0), cidx[:, 0] == 0),
    ]
    for (a, b), mask in edges:
        if not np.any(mask):
            continue
        pair = cv[mask][:, [a, b]]
        rows.append(np.repeat(pair[:, :, None], 2, axis=2).ravel())
        cols.append(np.repeat(pair[:, None, :], 2, axis=1).ravel())
        data.append(np.broadcast_to(Eb, (pair.shape[0], 2, 2)).ravel())
    if not rows:
        return sparse.csr_matrix((nv, nv))
    return sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv)
    ).tocsr()


def assemble_forms(region: Region, spec: ProblemSpec, cell_mask=None) -> AssembledForms:
    """Assemble the impedance (or PML, per ``spec.bc``) form on a region.

    Dirichlet DOFs are the artificial boundary vertices; in PML mode every
    domain-boundary vertex is Dirichlet as well. ``cell_mask`` restricts the
    norm matrices ``S``, ``S1`` and ``M`` to a subset of cells (used for errors
    on the physical domain); the operator ``K`` always uses all cells.
    """
    if spec.bc == "pml":
        return assemble_pml_forms(region, spec, cell_mask=cell_mask)
    centers = region.cell_centers()
    A = spec.coefficient(centers)
    ones = np.ones_like(A)
    mask = np.ones_like(A) if cell_mask is None else np.asarray(cell_mask, dtype=float)
    S, M = _assemble(region, A, A, ones)
    B = _boundary_mass(region)
    K = (S - spec.kappa**2 * M - 1j * spec.kappa * B).tocsr()
    if cell_mask is not None:
        S, M = _assemble(region, A * mask, A * mask, mask)
    S1 = _assemble(region, mask, mask, mask)[0]
    return _finish(region, spec, K, S, S1, M, B, region.gamma)


def assemble_pml_forms(region: Region, spec: ProblemSpec, cell_mask=None) -> AssembledForms:
    """Tensor-product complex-stretched form with homogeneous Dirichlet on the domain boundary."""
    if region.d != 2:
        raise ValueError("PML is only supported in 2D")
    H = region.fine.mesh.H
    width = spec.pml_width * H
    if width < H:
        raise ValueError("PML layer thinner than one coarse cell")
    centers = region.cell_centers()
    A = spec.coefficient(centers)
    sx = stretch_factor(centers[:, 0], spec.kappa, width)
    sy = stretch_factor(centers[:, 1], spec.kappa, width)
    Kstiff, Kmass = _assemble(region, A * sy / sx, A * sx / sy, sx * sy)
    K = (Kstiff - spec.kappa**2 * Kmass).tocsr()
    mask = np.ones_like(A) if cell_mask is None else np.asarray(cell_mask, dtype=float)
    S, M = _assemble(region, A * mask, A * mask, mask)
    S1 = _assemble(region, mask, mask, mask)[0]
    nv = region.num_vertices
    B = sparse.csr_matrix((nv, nv))
    dirichlet = np.union1d(region.gamma, region.outer)
    return _finish(region, spec, K, S, S1, M, B, dirichlet)


def _finish(region, spec, K, S, S1, M, B, dirichlet):
    free = np.setdiff1d(np.arange(region.num_vertices), dirichlet)
    if free.size == 0:
        raise ValueError(f"region around element {region.patch.center} has no free DOFs")
    return AssembledForms(
        region=region,
        kappa=spec.kappa,
        K=K,
        S=S,
        S1=S1,
        M=M,
        B=B,
        free=free,
        dirichlet=np.asarray(dirichlet, dtype=np.int64),
        name=f"T={region.patch.center},ell={region.patch.ell}",
    )


def solve_sesquilinear(forms: AssembledForms, rhs: np.ndarray) -> np.ndarray:
    """Solve ``Kff x = rhs`` on the free DOFs with a cached sparse LU."""
    rhs = np.asarray(rhs)
    if rhs.shape[0] != forms.num_free:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {forms.num_free} free DOFs")
    return forms.factorization().solve(rhs)


def solve_full(forms: AssembledForms, load: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Solve with a load on all local vertices; returns the full local vector (zero on Dirichlet)."""
    load = np.asarray(load, dtype=complex)
    out = np.zeros(load.shape, dtype=complex)
    out[forms.free] = forms.factorization().solve(load[forms.free], adjoint=adjoint)
    return out


def norms(v: np.ndarray, forms: AssembledForms) -> dict:
    """L2, H1-seminorm, |||.||| and the A-weighted energy norm of a full local vector."""
    v = np.asarray(v)

    def q(A):
        return float(np.sqrt(max(np.real(np.vdot(v, A @ v)), 0.0)))

    l2 = q(forms.M)
    h1 = q(forms.S1)
    s = q(forms.S)
    k2 = forms.kappa**2
    return {
        "L2": l2,
        "H1semi": h1,
        "V": float(np.sqrt(h1**2 + k2 * l2**2)),
        "VA": float(np.sqrt(s**2 + k2 * l2**2)),
    }


def global_forms(fine: FineGrid, spec: ProblemSpec, cell_mask=None) -> AssembledForms:
    from .grid import restrict_region, whole_domain

    return assemble_forms(restrict_region(fine, whole_domain(fine.mesh)), spec, cell_mask)
