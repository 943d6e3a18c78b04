"""Super-localized source terms and basis functions on element patches.

For every coarse element ``T`` the piecewise-constant source ``g_T`` on the
patch ``N^ell(T)`` is chosen nearly L2-orthogonal to the sampled space of
Helmholtz-harmonic functions; the corresponding patch responses (primal and
adjoint) are the trial and test functions of the coarse Petrov-Galerkin method.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import AssembledForms, ProblemSpec, assemble_forms, norms, solve_full
from .grid import FineGrid, PatchIndexSet, Region, element_patch, restrict_region
from .projection import P0Vector, moment_matrix, p0_load
from .sampler import (
    DEFAULT_DROP_TOL,
    SAMPLES_PER_ELEMENT,
    HarmonicBasis,
    SamplingError,
    orthonormalize_energy,
    sample_harmonic_space,
)

log = logging.getLogger(__name__)

TAU_COND = 1e3
RIESZ_HARD_LIMIT = 1e6
AMBIGUITY_TOL = 1e3 * np.finfo(float).eps


class StabilityWarning(UserWarning):
    pass


class RieszError(RuntimeError):
    pass


@dataclass
class LocalSource:
    """SVD of the projected harmonic space on one patch.

    ``candidates[:, k]`` is the P0 coefficient vector belonging to
    ``candidate_sigma[k]``, ordered from the smallest singular value upwards.
    ``gram = B B^H`` gives ``|B^H c|^2 = c^H gram c`` for any coefficient vector.
    """

    T: int
    ell: int
    coeffs: np.ndarray
    sigma: float
    spectrum: np.ndarray
    candidates: np.ndarray
    candidate_sigma: np.ndarray
    ambiguous: bool
    rank: int
    gram: np.ndarray = field(repr=False, default=None)

    def sigma_of(self, c: np.ndarray) -> float:
        """Projection indicator ``|B^H c|`` of a unit coefficient vector."""
        return float(np.sqrt(max(np.real(np.vdot(c, self.gram @ c)), 0.0)))


@dataclass
class LocalBasisPair:
    T: int
    ell: int
    g: P0Vector
    sigma: float
    spectrum: np.ndarray
    phi: np.ndarray = field(repr=False)
    phi_adj: np.ndarray = field(repr=False)
    region: Region = field(repr=False, default=None)

    def __post_init__(self):
        if self.region is None:
            self.region = self.g.region

    @property
    def patch(self) -> PatchIndexSet:
        return self.region.patch


def fix_phase(c: np.ndarray) -> np.ndarray:
    """Rotate so the largest-magnitude entry (lowest index on ties) is real positive."""
    k = int(np.argmax(np.abs(c)))
    if abs(c[k]) == 0:
        return c
    return c * (np.conj(c[k]) / abs(c[k]))


def patch_forms(fine: FineGrid, spec: ProblemSpec, T: int, ell: int) -> AssembledForms:
    patch = element_patch(fine.mesh, T, ell)
    if patch.equals_domain:
        raise SamplingError(
            f"patch N^{ell}({T}) coincides with the domain; decrease ell"
        )
    return assemble_forms(restrict_region(fine, patch), spec)


def compute_local_source(
    forms: AssembledForms, Y_on: HarmonicBasis, num_candidates: int | None = None
) -> LocalSource:
    """Smallest singular pair of the element-moment operator on the orthonormal basis.

    With moments ``B[K, j] = int_K y_j / H^{d/2}`` one has
    ``(g, y_j)_omega = H^{d/2} (B^H c)_j`` for ``g = sum_K c_K 1_K``, so the
    minimizer of ``|B^H c|`` over unit ``c`` is the left singular vector of the
    smallest singular value (zero if there are fewer samples than elements).
    """
    region = forms.region
    patch = region.patch
    d = region.d
    H = region.fine.mesh.H
    m = len(patch)
    B = (moment_matrix(region) @ Y_on.Y) / H ** (d / 2)
    p = B.shape[1]
    U, s, _ = np.linalg.svd(B, full_matrices=p < m)
    spectrum = np.zeros(m)
    spectrum[: s.size] = s
    if num_candidates is None:
        num_candidates = min(m, patch.ell**d + 1)
    q = min(num_candidates, m)
    idx = np.arange(m - 1, m - 1 - q, -1)
    cands = np.stack([fix_phase(U[:, i]) for i in idx], axis=1)
    ambiguous = m > 1 and (spectrum[-2] - spectrum[-1]) < AMBIGUITY_TOL * max(spectrum[0], 1e-300)
    return LocalSource(
        T=patch.center,
        ell=patch.ell,
        coeffs=cands[:, 0],
        sigma=float(spectrum[-1]),
        spectrum=spectrum,
        candidates=cands,
        candidate_sigma=spectrum[idx],
        ambiguous=bool(ambiguous),
        rank=p,
        gram=B @ B.conj().T,
    )


def solve_local_basis(forms: AssembledForms, g: P0Vector):
    """Primal and adjoint patch responses, zero on the Dirichlet set.

    The adjoint source is ``conj(g)``, which is nearly orthogonal to the
    adjoint-harmonic space ``conj(Y)``. Since ``K`` is complex symmetric its
    local adjoint response is ``conj(phi)``.
    """
    phi = solve_full(forms, p0_load(g))
    return phi, np.conj(phi)


def local_source_for(
    fine: FineGrid,
    spec: ProblemSpec,
    T: int,
    ell: int,
    seed: int = 0,
    count: int | None = None,
    drop_tol: float = DEFAULT_DROP_TOL,
):
    """Full per-element pipeline: assemble, sample, orthonormalize, SVD."""
    forms = patch_forms(fine, spec, T, ell)
    if count is None:
        count = SAMPLES_PER_ELEMENT * len(forms.region.patch)
    raw = sample_harmonic_space(forms, seed, count)
    Y_on = orthonormalize_energy(raw, forms, drop_tol)
    return forms, compute_local_source(forms, Y_on)


# -- stabilization near the boundary -------------------------------------------


def _scatter(src_elements: np.ndarray, coeffs: np.ndarray, n: int) -> np.ndarray:
    row = np.zeros(n, dtype=complex)
    row[src_elements] = coeffs
    return row


def constrained_minimizer(src: LocalSource, N: np.ndarray):
    """Unit ``c`` minimizing ``|B^H c|`` subject to ``N^H c = 0``.

    ``N`` holds already chosen sources (columns, on the patch elements). Returns
    ``(c, sigma)`` or ``None`` if the constraints leave no room.
    """
    m = src.gram.shape[0]
    Q, R = np.linalg.qr(N, mode="complete")
    r = int(np.sum(np.abs(np.diag(R)) > 1e-12 * max(np.abs(R).max(), 1e-300))) if N.size else 0
    if r >= m:
        return None
    Z = Q[:, r:]
    lam, V = np.linalg.eigh(Z.conj().T @ src.gram @ Z)
    c = fix_phase(Z @ V[:, 0])
    return c, float(np.sqrt(max(lam[0], 0.0)))


def stabilize_boundary_sources(
    sources: dict, mesh, tau_cond: float = TAU_COND, affected=None
) -> tuple[dict, list[str]]:
    """Choose sources for boundary-affected elements so the family stays well conditioned.

    ``sources`` maps element id to ``(patch, LocalSource)``. Elements whose patch
    touches the domain boundary (or whose minimizer is ambiguous) are swept by
    increasing patch size, then id; all others keep their minimizer.

    A clipped patch contains the patches of elements closer to the boundary, and
    their sources are near-minimizers on the larger patch too. The first
    candidate of a swept element is therefore the minimizer restricted to the
    orthogonal complement of the sources of already fixed elements whose patch it
    contains; the plain singular vectors follow. The first candidate for which the
    rows of fixed overlapping elements plus the candidate have condition number
    below ``tau_cond`` is accepted. Otherwise the least collinear candidate is
    used and a warning is recorded.

    Returns ``(choice, warnings)`` with ``choice[T] = (coeffs, sigma)``.
    """
    n = mesh.num_elements
    if affected is None:
        affected = {T for T, (patch, src) in sources.items() if patch.touches_boundary or src.ambiguous}
    choice = {T: (src.coeffs, src.sigma) for T, (patch, src) in sources.items()}
    fixed = {T for T in sources if T not in affected}
    msgs = []
    coords = mesh.element_coords()
    ell_max = max(p.ell for p, _ in sources.values())
    order = sorted(affected, key=lambda T: (len(sources[T][0]), T))

    for T in order:
        patch, src = sources[T]
        dist = np.max(np.abs(coords - coords[T]), axis=1)
        near = [int(S) for S in np.flatnonzero(dist <= patch.ell + ell_max) if int(S) in fixed and S != T]
        overlap = [S for S in near if np.intersect1d(sources[S][0].elements, patch.elements).size]
        rows = [_scatter(sources[S][0].elements, choice[S][0], n) for S in overlap]

        cands = []
        nested = [S for S in overlap if np.isin(sources[S][0].elements, patch.elements).all()]
        if nested:
            N = np.stack([rows[overlap.index(S)][patch.elements] for S in nested], axis=1)
            cm = constrained_minimizer(src, N)
            if cm is not None:
                cands.append(cm)
        cands += [(src.candidates[:, k], float(src.candidate_sigma[k])) for k in range(src.candidates.shape[1])]

        best = None
        for c, sig in cands:
            G = np.array(rows + [_scatter(patch.elements, c, n)])
            cols = np.flatnonzero(np.any(G != 0, axis=0))
            s = np.linalg.svd(G[:, cols], compute_uv=False)
            if s[-1] > 0 and s[0] / s[-1] < tau_cond:
                best = (c, sig)
                break
        if best is None:
            overlaps = [
                max((abs(np.vdot(r, _scatter(patch.elements, c, n))) for r in rows), default=0.0)
                for c, _ in cands
            ]
            best = cands[int(np.argmin(overlaps))]
            msg = f"element {T}: no candidate keeps the local condition below {tau_cond:g}"
            msgs.append(msg)
            warnings.warn(msg, StabilityWarning, stacklevel=2)
        choice[T] = best
        fixed.add(T)
    return choice, msgs


def coefficient_matrix(rows: dict, n: int) -> np.ndarray:
    """Dense ``G`` with row ``T`` the global P0 coefficients of ``g_T``.

    ``rows`` maps element id to ``(patch elements, coefficient vector)``.
    """
    G = np.zeros((n, n), dtype=complex)
    for T, (elems, c) in rows.items():
        G[T, elems] = c
    return G


def riesz_condition(rows: dict, n: int) -> tuple[float, bool]:
    """Condition number of the source coefficient matrix and whether it has full rank."""
    G = coefficient_matrix(rows, n)
    s = np.linalg.svd(G, compute_uv=False)
    full_rank = bool(s[-1] > s[0] * n * np.finfo(float).eps)
    if not full_rank:
        raise RieszError(
            "sources do not span the piecewise-constant space (rank-deficient coefficient matrix)"
        )
    return float(s[0] / s[-1]), full_rank


# -- diagnostics -----------------------------------------------------------------


def localization_error_probe(pair: LocalBasisPair, global_forms: AssembledForms) -> dict:
    """|||phi - phi_loc||| for the global response phi to the same source."""
    load = pair.region.extend(p0_load(pair.g))
    phi = solve_full(global_forms, load)
    diff = phi - pair.region.extend(pair.phi)
    err = norms(diff, global_forms)["V"]
    ref = norms(phi, global_forms)["V"]
    return {
        "error": err,
        "relative": err / ref if ref > 0 else 0.0,
        "reference_norm": ref,
        "sigma": pair.sigma,
        "ratio": err / pair.sigma if pair.sigma > 0 else np.inf,
    }


def adapt_oversampling(sigma_of, elements, tol: float, ell_min: int, ell_max: int):
    """Smallest order per element whose indicator is below ``tol``.

    ``sigma_of(T, ell)`` returns the indicator and is expected to cache. Returns
    ``(ell_map, achieved_sigma, exhausted_elements)``.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    ell_map, achieved, exhausted = {}, {}, []
    for T in elements:
        for ell in range(ell_min, ell_max + 1):
            s = sigma_of(T, ell)
            if s <= tol:
                break
        else:
            exhausted.append(T)
        ell_map[T] = ell
        achieved[T] = s
    if exhausted:
        warnings.warn(
            f"indicator above {tol:g} at ell_max={ell_max} on elements {exhausted}",
            StabilityWarning,
            stacklevel=2,
        )
    return ell_map, achieved, exhausted
