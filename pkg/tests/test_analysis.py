import logging
import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import random_density
from d2d.analysis import (
    FockDistribution,
    GridTooNarrowWarning,
    NoLobeDetected,
    fit_superradiant_lobe,
    fock_distribution,
    lobe_spacing,
    off_origin_maxima,
    reduce_photon,
    wigner,
    x_quadrature_distribution,
    z4_asymmetry,
)
from d2d.errors import InvalidDimensionError
from d2d.hilbert import HilbertDims, build_fock_ops
from d2d.liouvillian import DensityMatrix


def coherent(alpha, m):
    a = build_fock_ops(m).a.toarray()
    psi = expm(alpha * a.conj().T - np.conj(alpha) * a)[:, 0]
    return psi / np.linalg.norm(psi)


def vacuum(m):
    rho = np.zeros((m, m), dtype=complex)
    rho[0, 0] = 1
    return rho


# -- partial trace and P(n)


def test_reduce_photon_of_product_state(rng):
    dims = HilbertDims(2, 5)
    rs, rp = random_density(3, rng), random_density(5, rng)
    out = reduce_photon(DensityMatrix(np.kron(rs, rp), dims))
    np.testing.assert_allclose(out.data, rp, atol=1e-15)
    mixed = reduce_photon(DensityMatrix(np.eye(15) / 15, dims))
    np.testing.assert_allclose(mixed.data, np.eye(5) / 5, atol=1e-15)
    rho = random_density(15, rng)
    red = reduce_photon(DensityMatrix(rho, dims))
    assert abs(red.trace - 1) < 1e-12
    assert np.linalg.eigvalsh(red.data).min() > -1e-12
    with pytest.raises(InvalidDimensionError):
        reduce_photon(np.eye(4), dims)


def test_fock_distribution_and_clipping(caplog):
    dist = fock_distribution(vacuum(6))
    np.testing.assert_array_equal(dist.probabilities, [1, 0, 0, 0, 0, 0])
    assert dist.tail_mass == 0 and not dist.clipped
    with caplog.at_level(logging.INFO, logger="d2d.analysis"):
        d = fock_distribution(np.diag([0.7, 0.3 + 1e-12, -1e-12]))
    assert d.clipped and "clipping" in caplog.text
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    assert d.probabilities.min() >= 0


# -- lobe fit


def synthetic_lobe(mu=30.0, sigma=4.0, m=80, spike=0.3):
    n = np.arange(m)
    p = np.exp(-((n - mu) ** 2) / (2 * sigma**2))
    p = (1 - spike) * p / p.sum()
    p[0] += spike
    return p


def test_fit_recovers_synthetic_lobe():
    fit = fit_superradiant_lobe(FockDistribution(synthetic_lobe()), n_spins=5)
    assert fit.mu == pytest.approx(30.0, abs=0.1)
    assert fit.sigma == pytest.approx(4.0, abs=0.1)
    assert fit.n_min <= fit.mu <= fit.n_max
    assert fit.scaled_mu == pytest.approx(6.0, abs=0.02)
    assert fit.rmse < 1e-6


def test_fit_is_robust_to_multiplicative_noise():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = synthetic_lobe(mu=25.0, sigma=5.0) * (1 + 0.01 * rng.normal(size=80))
        fit = fit_superradiant_lobe(p / p.sum())
        assert abs(fit.mu - 25.0) < 0.5


def test_monotone_distribution_has_no_lobe():
    p = 0.6 ** np.arange(30)
    with pytest.raises(NoLobeDetected):
        fit_superradiant_lobe(p / p.sum())
    # round-off wiggles in a decaying tail are not a lobe
    q = p / p.sum()
    q[20] += 1e-12
    with pytest.raises(NoLobeDetected):
        fit_superradiant_lobe(q)


# -- Wigner function


def test_vacuum_wigner():
    w = wigner(vacuum(8), n_points=101)
    centre = w.values[50, 50]
    assert centre == pytest.approx(1 / np.pi, abs=1e-14)
    xx, pp = np.meshgrid(w.x_axis, w.p_axis, indexing="ij")
    np.testing.assert_allclose(w.values, np.exp(-(xx**2) - pp**2) / np.pi, atol=1e-14)
    assert w.integral() == pytest.approx(1.0, abs=1e-3)
    assert z4_asymmetry(w) < 1e-6


def test_coherent_state_wigner_is_a_displaced_gaussian():
    alpha = 1.1 - 0.6j
    psi = coherent(alpha, 40)
    axis = np.linspace(-6, 6, 49)
    w = wigner(np.outer(psi, psi.conj()), axis, axis)
    x0, p0 = np.sqrt(2) * alpha.real, np.sqrt(2) * alpha.imag
    xx, pp = np.meshgrid(axis, axis, indexing="ij")
    np.testing.assert_allclose(w.values, np.exp(-((xx - x0) ** 2) - (pp - p0) ** 2) / np.pi, atol=1e-10)


def test_wigner_matches_displaced_parity_oracle(rng):
    m, big = 10, 50
    rho = random_density(m, rng)
    a = build_fock_ops(big).a.toarray()
    parity = np.diag((-1.0) ** np.arange(big))
    rho_big = np.zeros((big, big), dtype=complex)
    rho_big[:m, :m] = rho
    pts = [(0.3, -0.5), (1.2, 0.4), (-0.7, 1.6), (2.0, -1.0)]
    with pytest.warns(GridTooNarrowWarning):
        w = wigner(rho, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    for i, (x, p) in enumerate(pts):
        al = (x + 1j * p) / np.sqrt(2)
        d = expm(al * a.conj().T - np.conj(al) * a)
        ref = np.real(np.trace(rho_big @ d @ parity @ d.conj().T)) / np.pi
        assert w.values[i, i] == pytest.approx(ref, abs=1e-10)


def test_wigner_is_stable_at_large_cutoff():
    psi = coherent(6.0, 120)
    w = wigner(np.outer(psi, psi.conj()), n_points=61)
    assert np.all(np.isfinite(w.values))
    assert w.integral() == pytest.approx(1.0, abs=1e-3)
    xx, pp = np.meshgrid(w.x_axis, w.p_axis, indexing="ij")
    ref = np.exp(-((xx - 6 * np.sqrt(2)) ** 2) - pp**2) / np.pi
    assert np.max(np.abs(w.values - ref)) < 1e-9


def test_wigner_marginal_matches_quadrature_distribution(rng):
    rho = random_density(8, rng)
    axis = np.linspace(-8, 8, 321)
    w = wigner(rho, axis, axis)
    direct = x_quadrature_distribution(rho, axis)
    assert np.max(np.abs(w.marginal_x() - direct)) < 1e-4


def test_wigner_purity_bound(rng):
    axis = np.linspace(-7, 7, 201)
    for rank in (1, 3):
        rho = random_density(6, rng, rank=rank)
        w = wigner(rho, axis, axis)
        overlap = 2 * np.pi * np.sum(w.values**2) * w.cell_area
        purity = np.trace(rho @ rho).real
        assert overlap <= purity + 1e-3
        if rank == 1:
            assert overlap == pytest.approx(purity, abs=1e-3)


def test_narrow_grid_warns():
    psi = coherent(2.0, 30)
    with pytest.warns(GridTooNarrowWarning):
        w = wigner(np.outer(psi, psi.conj()), n_points=21, extent=2.0)
    assert w.boundary_max > 1e-6
    with warnings.catch_warnings():
        warnings.simplefilter("error", GridTooNarrowWarning)
        wigner(np.outer(psi, psi.conj()), n_points=41)


def test_z4_asymmetry_controls():
    psi = coherent(1.5, 30)
    w = wigner(np.outer(psi, psi.conj()), n_points=101)
    assert z4_asymmetry(w) > 0.1
    # an equal mixture of the four Z4 images is symmetric and has four lobes
    rho = sum(np.outer(coherent(1.5 * 1j**k, 30), coherent(1.5 * 1j**k, 30).conj()) for k in range(4)) / 4
    w4 = wigner(rho, n_points=101)
    assert z4_asymmetry(w4) < 1e-6
    maxima = off_origin_maxima(w4)
    assert maxima.shape[0] >= 4
    np.testing.assert_allclose(lobe_spacing(maxima), 90.0, atol=5.0)
    with pytest.raises(InvalidDimensionError):
        z4_asymmetry(wigner(vacuum(4), np.linspace(-4, 4, 11), np.linspace(-4, 4, 13)))


def test_wigner_is_real_for_hermitian_input(rng):
    w = wigner(random_density(5, rng), n_points=31, extent=5.0)
    assert w.values.dtype == float
