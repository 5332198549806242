import numpy as np
import pytest
import scipy.sparse as sp
from scipy import stats

from d2d.errors import TrajectoryError
from d2d.hilbert import HilbertDims, ModelParams, basis_state, build_fock_ops, build_hamiltonian
from d2d.liouvillian import build_jumps, liouvillian_from_params, steady_state
from d2d.trajectories import (
    StateVector,
    TrajectoryConfig,
    TrajectoryEngine,
    average_density_matrix,
    default_t_final,
    evolve_trajectory,
    run_ensemble,
    sample_haar,
    trajectory_rng,
)

P = ModelParams(omega_c=1.0, omega_a=1.2, lam=0.5, kappa1=0.4, kappa2=0.15, n_spins=1)
DIMS = HilbertDims(1, 8)


def trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


@pytest.mark.parametrize("method", ["dyadic", "ode"])
def test_locators_agree_with_eigen_path(method):
    psi0 = StateVector(basis_state(DIMS, 1, 5), DIMS)
    runs = {}
    for m in ("eigen", method):
        cfg = TrajectoryConfig(n_traj=1, t_final=30.0, method=m)
        runs[m] = evolve_trajectory(psi0, P, DIMS, cfg, rng=trajectory_rng(7, 0), record=True)
    a, b = runs["eigen"], runs[method]
    assert a.jump_times.size > 3
    np.testing.assert_array_equal(a.channels, b.channels)
    np.testing.assert_allclose(a.jump_times, b.jump_times, atol=1e-6)
    overlap = abs(np.vdot(a.state.amplitudes, b.state.amplitudes))
    assert overlap > 1 - 1e-8


def test_jump_time_is_exact_for_pure_decay():
    kappa = 0.7
    dims = HilbertDims(1, 4)
    a = sp.kron(sp.identity(2), build_fock_ops(4).a, format="csr")
    cfg = TrajectoryConfig(n_traj=1, t_final=200.0)
    engine = TrajectoryEngine(sp.csr_matrix((8, 8)), [np.sqrt(kappa) * a], dims, cfg, 200.0)
    for seed in range(5):
        psi = basis_state(dims, 0, 1)[:, None]
        _, n_jumps, rec = engine.run(psi, [trajectory_rng(seed, 0)], [0], record=True)
        r = trajectory_rng(seed, 0).random()
        assert n_jumps[0] == 1
        assert rec[0][0][0] == pytest.approx(-np.log(r) / kappa, abs=1e-7)


def test_waiting_times_are_exponential():
    kappa = 0.5
    dims = HilbertDims(1, 3)
    a = sp.kron(sp.identity(2), build_fock_ops(3).a, format="csr")
    cfg = TrajectoryConfig(n_traj=1, t_final=100.0)
    engine = TrajectoryEngine(sp.csr_matrix((6, 6)), [np.sqrt(kappa) * a], dims, cfg, 100.0)
    n = 600
    psi0 = np.tile(basis_state(dims, 0, 1)[:, None], (1, n))
    _, _, rec = engine.run(psi0, [trajectory_rng(3, i) for i in range(n)], list(range(n)), record=True)
    waits = np.array([r[0][0] for r in rec if r])
    assert waits.size > 0.99 * n
    assert stats.kstest(waits, "expon", args=(0, 1 / kappa)).pvalue > 1e-3


def test_ensemble_is_deterministic_and_batch_independent():
    base = dict(n_traj=40, t_final=20.0, seed=11)
    r1 = run_ensemble(P, DIMS, TrajectoryConfig(batch_size=16, **base))
    r2 = run_ensemble(P, DIMS, TrajectoryConfig(batch_size=16, **base))
    r3 = run_ensemble(P, DIMS, TrajectoryConfig(batch_size=5, **base))
    np.testing.assert_array_equal(r1.rho.data, r2.rho.data)
    np.testing.assert_allclose(r1.rho.data, r3.rho.data, atol=1e-13)
    np.testing.assert_allclose(r1.photon_numbers, r3.photon_numbers, atol=1e-12)
    other = run_ensemble(P, DIMS, TrajectoryConfig(batch_size=16, **{**base, "seed": 12}))
    assert np.abs(other.rho.data - r1.rho.data).max() > 1e-6


def test_ensemble_prefix_is_a_smaller_ensemble():
    big = run_ensemble(P, DIMS, TrajectoryConfig(n_traj=30, t_final=15.0, seed=2))
    small = run_ensemble(P, DIMS, TrajectoryConfig(n_traj=10, t_final=15.0, seed=2))
    np.testing.assert_allclose(big.photon_numbers[:10], small.photon_numbers, atol=1e-12)
    np.testing.assert_array_equal(big.n_jumps[:10], small.n_jumps)


def test_decoupled_limit_relaxes_photons_only():
    p = P.replace(lam=0.0, n_spins=2)
    dims = HilbertDims(2, 6)
    cfg = TrajectoryConfig(n_traj=60, seed=5, keep_states=True)
    res = run_ensemble(p, dims, cfg)
    assert res.t_final == pytest.approx(default_t_final(p))
    rho = res.rho.data.reshape(3, 6, 3, 6)
    photon = np.einsum("ijik->jk", rho)
    assert photon[0, 0].real > 1 - 1e-6
    # spin populations are frozen at the sampled initial indices
    spins = np.array([trajectory_rng(5, i).integers(dims.total_dim) // 6 for i in range(60)])
    expected = np.bincount(spins, minlength=3) / 60
    spin = np.einsum("ijkj->ik", rho)
    np.testing.assert_allclose(np.diag(spin).real, expected, atol=1e-6)
    np.testing.assert_allclose(spin - np.diag(np.diag(spin)), 0, atol=1e-6)


def test_small_ensemble_approaches_exact_steady_state():
    rho_ed = steady_state(liouvillian_from_params(P, DIMS)).data
    res = run_ensemble(P, DIMS, TrajectoryConfig(n_traj=600, seed=1, batch_size=200))
    assert trace_distance(res.rho.data, rho_ed) < 0.08
    conv = res.convergence
    assert conv[-1, 0] == 600
    assert np.all(conv[:, 2] > 0)
    res.rho.check(min_eig=-1e-10)


def test_average_density_matrix():
    dims = HilbertDims(1, 3)
    rng = np.random.default_rng(0)
    states = [sample_haar(dims, rng) for _ in range(5)]
    rho = average_density_matrix(states)
    direct = sum(np.outer(s.amplitudes, s.amplitudes.conj()) for s in states) / 5
    np.testing.assert_allclose(rho.data, direct, atol=1e-15)
    assert abs(states[0].norm - 1) < 1e-12
    with pytest.raises(ValueError):
        average_density_matrix([])


def test_config_and_input_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(n_traj=0)
    with pytest.raises(ValueError):
        TrajectoryConfig(method="rk4")
    with pytest.raises(ValueError):
        TrajectoryConfig(t_final=-1)
    psi = StateVector(2 * basis_state(DIMS, 0, 0), DIMS)
    with pytest.raises(ValueError, match="normalized"):
        evolve_trajectory(psi, P, DIMS, TrajectoryConfig(n_traj=1, t_final=1.0))
    with pytest.raises(ValueError):
        StateVector(np.zeros(3), DIMS)


def test_explicit_initial_state():
    psi = basis_state(DIMS, 0, 0)
    cfg = TrajectoryConfig(n_traj=4, t_final=5.0, init="explicit", psi0=psi)
    res = run_ensemble(P.replace(lam=0.0), DIMS, cfg)
    # vacuum with spins down is dark when λ = 0
    assert res.rho.data[0, 0].real == pytest.approx(1.0, abs=1e-12)
    assert np.all(res.n_jumps == 0)


def test_ill_conditioned_eigenbasis_switches_locator():
    cfg = TrajectoryConfig(n_traj=1, t_final=2.0, cond_limit=1.0)
    engine = TrajectoryEngine(build_hamiltonian(P, DIMS), build_jumps(P, DIMS), DIMS, cfg, 2.0)
    assert engine.method == "dyadic"


def test_repeated_jumps_and_underflow_error():
    dims = HilbertDims(1, 3)
    gamma = sp.diags([0, 1.0, 0, 0, 0, 0]).tocsr()
    cfg = TrajectoryConfig(n_traj=1, t_final=2000.0, dt_max=50.0)
    engine = TrajectoryEngine(sp.csr_matrix((6, 6)), [gamma], dims, cfg, 2000.0)
    psi = basis_state(dims, 0, 1)[:, None]
    # the projector jump returns the state to |1>, so it keeps decaying and jumping
    _, n_jumps, _ = engine.run(psi, [trajectory_rng(0, 0)], [0])
    assert n_jumps[0] > 100
    with pytest.raises(TrajectoryError):
        engine._jump(np.zeros(6, dtype=complex), trajectory_rng(0, 0), 3)
