import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slod.core import patch_forms
from slod.fem import ProblemSpec, assemble_forms
from slod.grid import FineGrid, build_cartesian_mesh, restrict_region, whole_domain
from slod.sampler import (
    HarmonicBasis,
    SamplingError,
    harmonicity_residual,
    orthonormalize_energy,
    sample_harmonic_space,
)

FINE2 = FineGrid(build_cartesian_mesh(2, 8), 64)
SPEC = ProblemSpec(8.0)


def _forms(T, ell, fine=FINE2, spec=SPEC):
    return patch_forms(fine, spec, T, ell)


@pytest.mark.parametrize("T,ell", [(0, 1), (27, 1), (27, 2), (7, 2)])
def test_samples_match_trace_and_are_harmonic(T, ell):
    f = _forms(T, ell)
    raw = sample_harmonic_space(f, seed=3)
    np.testing.assert_array_equal(raw.Y[f.region.gamma], raw.trace_data)
    assert raw.Y.shape[1] == 5 * len(f.region.patch)
    assert harmonicity_residual(f, raw.Y).max() <= 1e-10
    # uniform complex data on the unit square
    assert np.all(np.abs(raw.trace_data.real) <= 1) and np.all(np.abs(raw.trace_data.imag) <= 1)


@given(seed=st.integers(0, 2**32 - 1))
def test_orthonormal_basis_gram_is_identity(seed):
    f = _forms(27, 1)
    on = orthonormalize_energy(sample_harmonic_space(f, seed), f)
    G = on.Y.conj().T @ (f.energy @ on.Y)
    assert np.abs(G - np.eye(on.rank)).max() <= 1e-10
    assert harmonicity_residual(f, on.Y).max() <= 1e-10


def test_sampling_is_deterministic_per_seed_and_patch():
    f = _forms(27, 1)
    a = sample_harmonic_space(f, seed=5).Y
    b = sample_harmonic_space(f, seed=5).Y
    c = sample_harmonic_space(f, seed=6).Y
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    # distinct patches draw distinct streams under the same run seed
    g = _forms(28, 1)
    d = sample_harmonic_space(g, seed=5).trace_data
    assert not np.allclose(d, sample_harmonic_space(f, seed=5).trace_data)


def test_1d_harmonic_space_has_rank_at_most_two():
    fine = FineGrid(build_cartesian_mesh(1, 16), 256)
    f = patch_forms(fine, SPEC, 8, 2)
    on = orthonormalize_energy(sample_harmonic_space(f, seed=0), f)
    assert on.rank == 2
    f0 = patch_forms(fine, SPEC, 0, 2)
    assert orthonormalize_energy(sample_harmonic_space(f0, seed=0), f0).rank == 1


def test_duplicate_samples_do_not_increase_rank():
    f = _forms(27, 1)
    raw = sample_harmonic_space(f, seed=1, count=10)
    dup = HarmonicBasis(np.hstack([raw.Y, raw.Y]), "raw", 20, 1)
    r1 = orthonormalize_energy(raw, f).rank
    r2 = orthonormalize_energy(dup, f).rank
    assert r1 == r2 == 10


def test_whole_domain_patch_is_rejected():
    f = assemble_forms(restrict_region(FINE2, whole_domain(FINE2.mesh)), SPEC)
    with pytest.raises(SamplingError):
        sample_harmonic_space(f)


def test_empty_sample_set_is_rejected():
    f = _forms(27, 1)
    with pytest.raises(SamplingError):
        orthonormalize_energy(HarmonicBasis(np.zeros((f.region.num_vertices, 0)), "raw", 0, 0), f)
