"""Coarse Petrov-Galerkin assembly and solve, reference and ideal solutions, error metrics."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .core import (
    RIESZ_HARD_LIMIT,
    LocalBasisPair,
    RieszError,
    adapt_oversampling,
    compute_local_source,
    patch_forms,
    riesz_condition,
    solve_local_basis,
    stabilize_boundary_sources,
)
from .fem import AssembledForms, ProblemSpec, assemble_forms, norms, solve_full
from .grid import FineGrid, element_patch, restrict_region, whole_domain
from .projection import P0Vector, moment_matrix
from .sampler import DEFAULT_DROP_TOL, SAMPLES_PER_ELEMENT, orthonormalize_energy, sample_harmonic_space

log = logging.getLogger(__name__)

IDEAL_MAX_ELEMENTS = 256


class CoarseSolveError(RuntimeError):
    pass


# -- right-hand sides ------------------------------------------------------------


@dataclass(frozen=True)
class SourceTerm:
    """Right-hand side evaluated at fine vertices (used through its Q1 interpolant).

    kinds: ``constant`` (value), ``sincos`` (sin(pi x) cos(pi y)), ``point``
    (smooth bump of ``amplitude`` at ``center`` with ``radius``) and ``vector``
    (raw vertex values in ``values``).
    """

    kind: str = "constant"
    value: float = 1.0
    center: tuple = (0.5, 0.5)
    radius: float = 0.05
    amplitude: float = 1e4
    values: tuple | None = None

    def key(self):
        return (self.kind, self.value, tuple(self.center), self.radius, self.amplitude, self.values)

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        x = coords[:, 0]
        if self.kind == "constant":
            return np.full(coords.shape[0], float(self.value), dtype=complex)
        if self.kind == "sincos":
            y = coords[:, 1] if coords.shape[1] > 1 else 0.0
            return (np.sin(np.pi * x) * np.cos(np.pi * y)).astype(complex)
        if self.kind == "point":
            r2 = np.sum((coords - np.asarray(self.center)[: coords.shape[1]]) ** 2, axis=1)
            q = r2 / self.radius**2
            out = np.zeros(coords.shape[0], dtype=complex)
            inside = q < 1
            out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - q[inside]))
            return out
        if self.kind == "vector":
            return np.asarray(self.values, dtype=complex)
        raise ValueError(f"unknown source kind {self.kind!r}")


# -- problem container -----------------------------------------------------------


class HelmholtzProblem:
    """Fine grid plus problem data, with cached global operators and reference solves."""

    def __init__(self, fine: FineGrid, spec: ProblemSpec):
        self.fine = fine
        self.spec = spec
        self._reference = {}

    @property
    def mesh(self):
        return self.fine.mesh

    @cached_property
    def region(self):
        return restrict_region(self.fine, whole_domain(self.mesh))

    @cached_property
    def forms(self) -> AssembledForms:
        return assemble_forms(self.region, self.spec)

    @cached_property
    def physical_mask(self) -> np.ndarray | None:
        """Cells inside the physical domain (PML mode) or None."""
        if self.spec.bc != "pml":
            return None
        w = self.spec.pml_width * self.mesh.H
        c = self.fine.cell_centers()
        return np.all((c > w) & (c < 1 - w), axis=1)

    @cached_property
    def norm_forms(self) -> AssembledForms:
        """Forms whose norm matrices integrate over the physical domain only."""
        if self.physical_mask is None:
            return self.forms
        return assemble_forms(self.region, self.spec, cell_mask=self.physical_mask)

    def load(self, f: SourceTerm) -> np.ndarray:
        vals = f.evaluate(self.fine.vertex_coords())
        return self.forms.M @ vals

    def interpolate(self, f: SourceTerm) -> np.ndarray:
        return f.evaluate(self.fine.vertex_coords())

    def reference_solution(self, f: SourceTerm) -> np.ndarray:
        key = f.key()
        if key not in self._reference:
            self._reference[key] = solve_full(self.forms, self.load(f))
        return self._reference[key]

    def solve_load(self, load: np.ndarray, adjoint: bool = False) -> np.ndarray:
        return solve_full(self.forms, load, adjoint=adjoint)


def compute_errors(u: np.ndarray, u_ref: np.ndarray, forms: AssembledForms) -> dict:
    """Relative L2, V- and V_A-norm errors of ``u`` against ``u_ref``."""
    if u.shape != u_ref.shape or u.shape[0] != forms.region.num_vertices:
        raise ValueError("fields live on different grids")
    e = norms(u - u_ref, forms)
    r = norms(u_ref, forms)
    return {k: (e[k] / r[k] if r[k] > 0 else float(e[k] > 0)) for k in ("L2", "V", "VA")}


# -- offline phase ---------------------------------------------------------------


@dataclass
class SLODBasis:
    problem: HelmholtzProblem
    ell_map: dict
    sources: dict
    pairs: dict
    choice: dict
    riesz: float
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def sigma(self) -> dict:
        return {T: p.sigma for T, p in self.pairs.items()}

    def _stack(self, attr) -> sparse.csc_matrix:
        nv = self.problem.fine.num_vertices
        rows, cols, vals = [], [], []
        for T in sorted(self.pairs):
            p = self.pairs[T]
            v = getattr(p, attr)
            nz = np.flatnonzero(v)
            rows.append(p.region.local_to_global[nz])
            cols.append(np.full(nz.size, T))
            vals.append(v[nz])
        return sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nv, len(self.pairs)),
        )

    @cached_property
    def trial(self) -> sparse.csc_matrix:
        return self._stack("phi")

    @cached_property
    def test(self) -> sparse.csc_matrix:
        return self._stack("phi_adj")

    def coefficient_rows(self) -> dict:
        return {T: (p.patch.elements, p.g.values) for T, p in self.pairs.items()}


def local_source(problem, T, ell, seed=0, samples_per_element=SAMPLES_PER_ELEMENT, drop_tol=DEFAULT_DROP_TOL):
    """Sample, orthonormalize and decompose the harmonic space of one patch."""
    forms = patch_forms(problem.fine, problem.spec, T, ell)
    raw = sample_harmonic_space(forms, seed, samples_per_element * len(forms.region.patch))
    return compute_local_source(forms, orthonormalize_energy(raw, forms, drop_tol))


def adaptive_oversampling(problem, tol: float, ell_min: int = 1, ell_max: int = 4, seed: int = 0, **kw):
    """Per-element orders from the singular value indicator.

    Returns ``(ell_map, achieved_sigma, exhausted, source_cache)``; the cache can
    be passed to ``build_slod_basis`` to avoid recomputing sources.
    """
    n = problem.mesh.num_elements
    ell_max = min(ell_max, max_ell(problem.mesh))
    cache: dict = {}

    def sigma_of(T, ell):
        if (T, ell) not in cache:
            cache[(T, ell)] = local_source(problem, T, ell, seed, **kw)
        return cache[(T, ell)].sigma

    ell_map, achieved, exhausted = adapt_oversampling(sigma_of, range(n), tol, ell_min, ell_max)
    return ell_map, achieved, exhausted, cache


def max_ell(mesh) -> int:
    """Largest order for which no patch covers the whole domain."""
    return (mesh.n_per_dim) // 2 - 1


def _translation_key(patch):
    idx = patch.mesh.multi_index(patch.center)
    n = patch.mesh.n_per_dim
    return (
        patch.ell,
        patch.shape,
        tuple(i - a for i, a in zip(idx, patch.lo)),
        tuple(a == 0 for a in patch.lo),
        tuple(b == n for b in patch.hi),
    )


def build_slod_basis(
    problem: HelmholtzProblem,
    ell,
    seed: int = 0,
    samples_per_element: int = SAMPLES_PER_ELEMENT,
    drop_tol: float = DEFAULT_DROP_TOL,
    stabilize: bool = True,
    reuse_translation: bool = False,
    tau_cond: float | None = None,
    source_cache: dict | None = None,
) -> SLODBasis:
    """Compute sources and local basis pairs for every coarse element.

    ``ell`` is an int or a map element -> order. ``reuse_translation`` shares
    patch computations between translated patches (homogeneous impedance
    problems only). ``source_cache`` maps ``(T, ell)`` to an already computed
    ``LocalSource`` for the same problem and seed.
    """
    mesh = problem.mesh
    fine, spec = problem.fine, problem.spec
    n = mesh.num_elements
    ell_map = {T: int(ell) for T in range(n)} if np.isscalar(ell) else dict(ell)
    if reuse_translation and not (spec.coefficient.homogeneous and spec.bc == "impedance"):
        raise ValueError("translation reuse requires a homogeneous coefficient and impedance boundary")
    msgs = []
    t0 = time.perf_counter()

    sources: dict[int, tuple] = {}
    cache: dict = {}
    source_cache = {} if source_cache is None else source_cache
    for T in range(n):
        patch = element_patch(mesh, T, ell_map[T])
        key = _translation_key(patch) if reuse_translation else None
        if key is not None and key in cache:
            sources[T] = (patch, cache[key])
            continue
        if (T, ell_map[T]) in source_cache:
            src = source_cache[(T, ell_map[T])]
        else:
            src = local_source(problem, T, ell_map[T], seed, samples_per_element, drop_tol)
        sources[T] = (patch, src)
        if key is not None:
            cache[key] = src
    t1 = time.perf_counter()

    if stabilize:
        kw = {} if tau_cond is None else {"tau_cond": tau_cond}
        choice, smsgs = stabilize_boundary_sources(sources, mesh, **kw)
        msgs += smsgs
    else:
        choice = {T: (src.coeffs, src.sigma) for T, (_, src) in sources.items()}
    t2 = time.perf_counter()

    pairs = {}
    solved: dict = {}
    for T in range(n):
        patch, src = sources[T]
        coeffs, sigma = choice[T]
        key = (_translation_key(patch), coeffs.tobytes()) if reuse_translation else None
        region = restrict_region(fine, patch)
        g = P0Vector(np.array(coeffs, dtype=complex), region)
        if key is not None and key in solved:
            phi, phi_adj = solved[key]
        else:
            forms = assemble_forms(region, spec)
            phi, phi_adj = solve_local_basis(forms, g)
            if key is not None:
                solved[key] = (phi, phi_adj)
        pairs[T] = LocalBasisPair(
            T=T,
            ell=patch.ell,
            g=g,
            sigma=float(sigma),
            spectrum=src.spectrum,
            phi=phi,
            phi_adj=phi_adj,
            region=region,
        )
    t3 = time.perf_counter()

    rows = {T: (p.patch.elements, p.g.values) for T, p in pairs.items()}
    cond, _ = riesz_condition(rows, n)
    if cond > RIESZ_HARD_LIMIT:
        raise RieszError(f"Riesz condition {cond:.3g} exceeds {RIESZ_HARD_LIMIT:g}; increase ell")
    return SLODBasis(
        problem=problem,
        ell_map=ell_map,
        sources={T: s for T, (_, s) in sources.items()},
        pairs=pairs,
        choice=choice,
        riesz=cond,
        warnings=msgs,
        timings={"sources": t1 - t0, "stabilize": t2 - t1, "basis": t3 - t2},
    )


# -- online phase ----------------------------------------------------------------


def assemble_coarse_system(basis: SLODBasis, f: SourceTerm):
    """``A[T', T] = a(phi_T, phi*_T')`` and ``F[T'] = (f, phi*_T')``."""
    problem = basis.problem
    K = problem.forms.K
    Phi, Psi = basis.trial, basis.test
    A = (Psi.conj().T @ (K @ Phi)).tocsr()
    A.eliminate_zeros()
    F = Psi.conj().T @ problem.load(f)
    return A, np.asarray(F).ravel()


@dataclass
class SolutionReport:
    coarse_coefficients: np.ndarray
    field: np.ndarray
    reference: np.ndarray
    errors: dict
    sigma: dict
    riesz_condition: float
    residuals: dict
    timings: dict
    ell_map: dict
    warnings: list = field(default_factory=list)

    @property
    def sigma_max(self) -> float:
        return max(self.sigma.values())


def solve_coarse(basis: SLODBasis, f: SourceTerm):
    A, F = assemble_coarse_system(basis, f)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sparse.linalg.MatrixRankWarning)
            c = spla.spsolve(A.tocsc(), F)
    except (RuntimeError, sparse.linalg.MatrixRankWarning) as exc:
        raise CoarseSolveError(f"coarse system is singular ({exc}); increase ell") from exc
    if not np.all(np.isfinite(c)):
        raise CoarseSolveError("coarse system is singular; increase ell")
    res = np.linalg.norm(A @ c - F) / max(np.linalg.norm(F), 1e-300)
    return c, A, F, float(res)


def solve_slod(
    problem: HelmholtzProblem,
    f: SourceTerm,
    ell=2,
    seed: int = 0,
    basis: SLODBasis | None = None,
    **basis_kw,
) -> SolutionReport:
    """Offline basis construction (unless ``basis`` is given) plus online coarse solve."""
    t0 = time.perf_counter()
    if basis is None:
        basis = build_slod_basis(problem, ell, seed=seed, **basis_kw)
    t1 = time.perf_counter()
    c, A, F, res = solve_coarse(basis, f)
    u = basis.trial @ c
    t2 = time.perf_counter()
    u_ref = problem.reference_solution(f)
    t3 = time.perf_counter()
    return SolutionReport(
        coarse_coefficients=c,
        field=u,
        reference=u_ref,
        errors=compute_errors(u, u_ref, problem.norm_forms),
        sigma=basis.sigma,
        riesz_condition=basis.riesz,
        residuals={"coarse": res},
        timings={"offline": t1 - t0, "online": t2 - t1, "reference": t3 - t2, **basis.timings},
        ell_map=basis.ell_map,
        warnings=list(basis.warnings),
    )


def reference_solution(problem: HelmholtzProblem, f: SourceTerm) -> np.ndarray:
    return problem.reference_solution(f)


# -- ideal (non-localized) method --------------------------------------------------


def ideal_basis(problem: HelmholtzProblem):
    """Global responses ``L 1_T`` and ``L* 1_T`` for all coarse elements."""
    n = problem.mesh.num_elements
    if n > IDEAL_MAX_ELEMENTS:
        raise ValueError(
            f"ideal method needs one global solve per element; {n} > {IDEAL_MAX_ELEMENTS} elements"
        )
    P = moment_matrix(problem.region)
    loads = P.T.toarray().astype(complex)
    X = problem.solve_load(loads)
    Xs = np.conj(problem.solve_load(np.conj(loads)))
    return X, Xs


def ideal_method_solution(problem: HelmholtzProblem, f: SourceTerm, basis=None) -> np.ndarray:
    X, Xs = ideal_basis(problem) if basis is None else basis
    A = Xs.conj().T @ (problem.forms.K @ X)
    F = Xs.conj().T @ problem.load(f)
    c = np.linalg.solve(A, F)
    return X @ c
