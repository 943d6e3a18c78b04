"""Random sampling of discrete Helmholtz-harmonic functions on a patch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import AssembledForms

DEFAULT_DROP_TOL = 1e-12
SAMPLES_PER_ELEMENT = 5


class SamplingError(ValueError):
    pass


@dataclass
class HarmonicBasis:
    """Columns are full local vectors on the patch (free + Dirichlet DOFs)."""

    Y: np.ndarray
    stage: str
    rank: int
    seed: int | None
    drop_tol: float | None = None
    trace_data: np.ndarray | None = None


def patch_seed(seed: int, T: int, ell: int) -> np.random.SeedSequence:
    """Per-patch seed sequence mixing the run seed with (element id, order)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(T) + 1, int(ell)])


def sample_harmonic_space(
    forms: AssembledForms, seed: int = 0, count: int | None = None
) -> HarmonicBasis:
    """Discrete Helmholtz-harmonic extensions of iid uniform complex traces on Gamma.

    Each sample ``y`` equals the random data on the artificial boundary and
    satisfies ``a(v, y) = 0`` for every ``v`` vanishing on the Dirichlet set,
    i.e. ``(K^H y)_free = 0``.
    """
    region = forms.region
    patch = region.patch
    gamma = region.gamma
    if gamma.size == 0:
        raise SamplingError("patch coincides with domain; decrease ell")
    if count is None:
        count = SAMPLES_PER_ELEMENT * len(patch)
    rng = np.random.default_rng(patch_seed(seed, patch.center, patch.ell))
    data = rng.uniform(-1, 1, (gamma.size, count)) + 1j * rng.uniform(-1, 1, (gamma.size, count))

    Y = np.zeros((region.num_vertices, count), dtype=complex)
    Y[gamma] = data
    K_gf = forms.K[gamma][:, forms.free]
    rhs = -(K_gf.conj().T @ data)
    Y[forms.free] = forms.factorization().solve(rhs, adjoint=True)
    return HarmonicBasis(Y, "raw", count, seed, trace_data=data)


def harmonicity_residual(forms: AssembledForms, Y: np.ndarray) -> np.ndarray:
    """Per-column ``|(K^H y)_free| / |K^H y|``-type relative residual."""
    r = (forms.K.conj().T @ Y)[forms.free]
    scale = np.abs(forms.K).T @ np.abs(Y)
    return np.linalg.norm(r, axis=0) / np.linalg.norm(scale[forms.free], axis=0).clip(1e-300)


def _gram_orthonormalize(Y, E, drop_tol):
    G = Y.conj().T @ (E @ Y)
    G = 0.5 * (G + G.conj().T)
    lam, V = np.linalg.eigh(G)
    if lam[-1] <= 0:
        return Y[:, :0], 1.0
    keep = lam >= drop_tol * lam[-1]
    return Y @ (V[:, keep] / np.sqrt(lam[keep])), lam[-1] / lam[keep][0]


def orthonormalize_energy(
    basis: HarmonicBasis, forms: AssembledForms, drop_tol: float = DEFAULT_DROP_TOL
) -> HarmonicBasis:
    """Energy-orthonormal basis of the span of the raw samples.

    Eigen-decomposition of the energy Gram matrix, dropping eigenvalues below
    ``drop_tol`` times the largest. If the kept part is badly conditioned a
    second pass restores the orthonormality lost in the first.
    """
    if basis.Y.shape[1] == 0:
        raise SamplingError("empty sample set")
    E = forms.energy
    Q, cond = _gram_orthonormalize(basis.Y, E, drop_tol)
    if Q.shape[1] == 0:
        raise SamplingError("sampled harmonic space has rank 0")
    if cond > 1e8:
        Q, _ = _gram_orthonormalize(Q, E, drop_tol)
    return HarmonicBasis(Q, "energy-orthonormal", Q.shape[1], basis.seed, drop_tol)
