import numpy as np
import pytest
import scipy.linalg as sl

from conftest import random_density
from d2d.errors import BudgetExceededError, DegenerateKernelError
from d2d.hilbert import HilbertDims, ModelParams, build_parity, build_spin_ops, embed_spin
from d2d.liouvillian import (
    DensityMatrix,
    SteadyStateOptions,
    build_jumps,
    evolve,
    kernel_basis,
    liouvillian_from_params,
    long_time_limit,
    photon_mass_by_parity,
    spectrum_near_zero,
    steady_state,
)

SMALL = ModelParams(omega_c=1.0, omega_a=1.3, lam=0.6, kappa1=0.4, kappa2=0.1, n_spins=2)
SMALL_DIMS = HilbertDims(2, 8)


@pytest.fixture(scope="module")
def small_L():
    return liouvillian_from_params(SMALL, SMALL_DIMS)


def lindblad_rhs(h, jumps, rho):
    """Textbook dissipator, written out independently of the superoperator."""
    out = -1j * (h @ rho - rho @ h)
    for op in jumps:
        op = op.toarray()
        ld = op.conj().T
        out += op @ rho @ ld - 0.5 * (ld @ op @ rho + rho @ ld @ op)
    return out


def test_matches_direct_lindblad_formula(small_L, rng):
    rho = random_density(SMALL_DIMS.total_dim, rng)
    direct = lindblad_rhs(small_L.hamiltonian.toarray(), build_jumps(SMALL, SMALL_DIMS), rho)
    np.testing.assert_allclose(small_L.apply(rho), direct, atol=1e-12)


def test_trace_preservation_and_hermiticity(small_L, rng):
    assert small_L.trace_defect() < 1e-12
    rho = random_density(SMALL_DIMS.total_dim, rng)
    out = small_L.apply(rho)
    assert abs(np.trace(out)) < 1e-12
    np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


def test_parity_is_a_weak_symmetry(small_L, rng):
    par = build_parity(SMALL_DIMS).toarray()
    rho = random_density(SMALL_DIMS.total_dim, rng)
    lhs = small_L.apply(par @ rho @ par.conj().T)
    rhs = par @ small_L.apply(rho) @ par.conj().T
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_steady_state_matches_dense_null_space(small_L):
    rho = steady_state(small_L)
    rho.check()
    assert small_L.residual(rho) < 1e-9
    null = sl.null_space(small_L.matrix.toarray(), rcond=1e-10)
    assert null.shape[1] == 1
    ref = DensityMatrix.from_vector(null[:, 0], SMALL_DIMS)
    np.testing.assert_allclose(rho.data, ref.data, atol=1e-9)


def test_evolution_converges_to_steady_state(small_L):
    rho_ss = steady_state(small_L)
    d = SMALL_DIMS.total_dim
    rho_t = evolve(small_L, DensityMatrix(np.eye(d) / d, SMALL_DIMS), 400.0)
    np.testing.assert_allclose(rho_t.data, rho_ss.data, atol=1e-7)
    rho_e = steady_state(small_L, SteadyStateOptions(method="evolve", tol=1e-9))
    np.testing.assert_allclose(rho_e.data, rho_ss.data, atol=1e-8)


def test_decoupled_limit_needs_kernel_handling():
    p = SMALL.replace(lam=0.0)
    L = liouvillian_from_params(p, SMALL_DIMS)
    with pytest.raises(DegenerateKernelError):
        steady_state(L)
    d = SMALL_DIMS.total_dim
    rho = long_time_limit(L, DensityMatrix(np.eye(d) / d, SMALL_DIMS))
    spin_mix = np.eye(3) / 3
    vac = np.zeros((8, 8))
    vac[0, 0] = 1
    np.testing.assert_allclose(rho.data, np.kron(spin_mix, vac), atol=1e-8)


def test_rank_two_kernel_splits_by_photon_parity():
    p = ModelParams(omega_c=1, omega_a=1, lam=0.5, kappa1=0.0, kappa2=0.1, n_spins=1)
    dims = HilbertDims(1, 10)
    L = liouvillian_from_params(p, dims)
    states = kernel_basis(L)
    assert len(states) == 2
    masses = sorted(photon_mass_by_parity(s) for s in states)
    assert masses[0][0] < 1e-8 and masses[1][1] < 1e-8
    for s in states:
        s.check(min_eig=-1e-8)
        assert L.residual(s) < 1e-8


def test_spectrum_near_zero_matches_dense_eigenvalues():
    p = SMALL.replace(lam=0.3)
    dims = HilbertDims(1, 6)
    p = p.replace(n_spins=1)
    L = liouvillian_from_params(p, dims)
    sl_ = spectrum_near_zero(L, 6, n_search=36)
    ref = np.linalg.eigvals(L.matrix.toarray())
    ref = ref[np.lexsort((ref.imag, -ref.real))][:6]
    np.testing.assert_allclose(np.sort_complex(sl_.eigenvalues), np.sort_complex(ref), atol=1e-9)
    assert np.all(sl_.eigenvalues.real <= 1e-8)


def test_decoupled_cavity_mode_in_spectrum():
    p = ModelParams(lam=0.0, kappa1=0.4, kappa2=0.1, n_spins=1)
    L = liouvillian_from_params(p, HilbertDims(1, 6))
    vals = spectrum_near_zero(L, 40, n_search=40).eigenvalues
    assert np.min(np.abs(vals - (-0.4))) < 1e-10


def test_budget_is_enforced():
    with pytest.raises(BudgetExceededError, match="trajectory"):
        liouvillian_from_params(ModelParams(n_spins=15), HilbertDims(15, 120))


def test_spin_length_is_a_strong_symmetry():
    dims = HilbertDims(3, 6)
    p = ModelParams(lam=0.7, kappa2=0.2, n_spins=3)
    L = liouvillian_from_params(p, dims)
    jx, jy, jz = build_spin_ops(3)
    j2 = embed_spin(jx @ jx + jy @ jy + jz @ jz, dims)
    for op in (L.hamiltonian, *L.jumps):
        assert abs(op @ j2 - j2 @ op).max() < 1e-10


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.5, 0.6]), 2).check()
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.2, -0.2]), 2).check()
    with pytest.raises(ValueError):
        DensityMatrix(np.eye(3) / 3, 2)
