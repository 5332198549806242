import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from d2d.errors import InvalidDimensionError
from d2d.hilbert import (
    HilbertDims,
    ModelParams,
    basis_state,
    build_fock_ops,
    build_hamiltonian,
    build_parity,
    build_spin_ops,
    embed_photon,
    embed_spin,
    parity_classes,
    tensor,
)


def comm(a, b):
    return (a @ b - b @ a).toarray()


@pytest.mark.parametrize("n_spins", [1, 2, 3, 4, 5, 8])
def test_spin_algebra_is_doubled(n_spins):
    jx, jy, jz = build_spin_ops(n_spins)
    np.testing.assert_allclose(comm(jx, jy), 2j * jz.toarray(), atol=1e-12)
    np.testing.assert_allclose(comm(jy, jz), 2j * jx.toarray(), atol=1e-12)
    np.testing.assert_allclose(comm(jz, jx), 2j * jy.toarray(), atol=1e-12)
    casimir = (jx @ jx + jy @ jy + jz @ jz).toarray()
    np.testing.assert_allclose(casimir, n_spins * (n_spins + 2) * np.eye(n_spins + 1), atol=1e-10)
    np.testing.assert_allclose(jz.diagonal().real, np.arange(-n_spins, n_spins + 1, 2))


def test_fock_operators():
    a, ad, n = build_fock_ops(6)
    c = comm(a, ad)
    # [a, a†] = 1 except on the truncation edge
    np.testing.assert_allclose(np.diag(c)[:-1], 1.0)
    assert np.isclose(c[-1, -1], -5.0)
    np.testing.assert_allclose((ad @ a).toarray(), n.toarray(), atol=1e-14)


def test_tensor_order_and_index():
    dims = HilbertDims(2, 4)
    assert dims.spin_dim == 3 and dims.total_dim == 12
    assert dims.index(2, 1) == 9
    n_full = embed_photon(build_fock_ops(4).n_op, dims)
    jz_full = embed_spin(build_spin_ops(2).jz, dims)
    psi = basis_state(dims, 2, 1)
    assert np.isclose(np.vdot(psi, n_full @ psi), 1.0)
    assert np.isclose(np.vdot(psi, jz_full @ psi), 2.0)
    with pytest.raises(InvalidDimensionError):
        tensor(sp.identity(2), sp.identity(4), dims)


def test_hamiltonian_matrix_elements():
    p = ModelParams(omega_c=1.3, omega_a=0.7, lam=0.45, n_spins=2)
    dims = HilbertDims(2, 6)
    h = build_hamiltonian(p, dims).toarray()
    # diagonal: ωc n + (ωa/2)(2s - N)
    s, n = 1, 3
    i = dims.index(s, n)
    assert np.isclose(h[i, i], 1.3 * 3 + 0.35 * (2 * 1 - 2))
    # pair creation: ⟨s+1, n+2| H |s, n⟩ = (λ/N) ⟨s+1|Jx|s⟩ √((n+1)(n+2))
    jx = build_spin_ops(2).jx.toarray()
    expected = 0.45 / 2 * jx[2, 1] * np.sqrt(4 * 5)
    assert np.isclose(h[dims.index(2, 5), dims.index(1, 3)], expected)
    assert np.isclose(h[dims.index(0, 5), dims.index(1, 3)], 0.45 / 2 * jx[0, 1] * np.sqrt(20))
    # no single-photon processes
    assert h[dims.index(1, 4), dims.index(1, 3)] == 0


def test_parity_is_a_z4_symmetry():
    dims = HilbertDims(3, 9)
    p = ModelParams(lam=0.8, n_spins=3)
    h = build_hamiltonian(p, dims)
    par = build_parity(dims)
    assert abs(h @ par - par @ h).max() < 1e-12
    p4 = (par @ par @ par @ par).toarray()
    np.testing.assert_allclose(p4, np.eye(dims.total_dim), atol=1e-14)
    assert set(np.round(par.diagonal(), 12)) == {1, 1j, -1, -1j}
    assert parity_classes(dims)[dims.index(1, 3)] == (3 + 2) % 4


@settings(max_examples=25, deadline=None)
@given(
    wc=st.floats(0.1, 3), wa=st.floats(0.1, 3), lam=st.floats(0, 3),
    n_spins=st.integers(1, 5), m=st.integers(2, 12),
)
def test_hamiltonian_hermitian_and_symmetric(wc, wa, lam, n_spins, m):
    dims = HilbertDims(n_spins, m)
    h = build_hamiltonian(ModelParams(omega_c=wc, omega_a=wa, lam=lam, n_spins=n_spins), dims)
    assert abs(h - h.conj().T).max() < 1e-12
    par = build_parity(dims)
    assert abs(h @ par - par @ h).max() < 1e-10


def test_validation():
    with pytest.raises(InvalidDimensionError):
        HilbertDims(0, 10)
    with pytest.raises(InvalidDimensionError):
        HilbertDims(2, 1)
    with pytest.raises(ValueError):
        ModelParams(lam=-1)
    with pytest.raises(ValueError):
        ModelParams(kappa1=float("nan"))
    with pytest.raises(InvalidDimensionError):
        build_hamiltonian(ModelParams(n_spins=2), HilbertDims(3, 4))
    assert ModelParams(lam=0.5).replace(lam=0.7).lam == 0.7
