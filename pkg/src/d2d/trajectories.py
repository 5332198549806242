"""Monte Carlo wave-function (quantum trajectory) steady states.

Trajectories are propagated in lockstep batches. Between jumps the state
evolves under ``H_eff = H - (i/2) Σ Lₙ†Lₙ`` with an exact propagator, so
there is no integrator error to control. A jump happens when the squared
norm falls to a uniform random threshold ``r``. The crossing time is
located to ``jump_tolerance`` in squared norm by one of two routines:

* ``'eigen'``: safeguarded Newton on ``log‖ψ(τ)‖²`` using the eigenbasis
  of ``H_eff``. Used when the eigenvector matrix is well conditioned.
* ``'dyadic'``: bisection with precomputed propagators ``U(δ/2^k)``.

There is also a per-trajectory ``solve_ivp`` path (``method='ode'``) with
terminal norm events. It serves as an independent oracle.

Every trajectory owns a generator seeded by ``SeedSequence(seed,
spawn_key=(index,))``. Results therefore do not depend on batching
order, and any prefix of an ensemble is itself a valid smaller ensemble.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import TrajectoryError
from .hilbert import HilbertDims, ModelParams, build_fock_ops, build_hamiltonian, embed_photon
from .liouvillian import DensityMatrix, build_jumps

log = logging.getLogger(__name__)


@dataclasses.dataclass
class StateVector:
    amplitudes: np.ndarray
    dims: HilbertDims

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.dims.total_dim,):
            raise ValueError(f"state has shape {self.amplitudes.shape}, expected ({self.dims.total_dim},)")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclasses.dataclass
class TrajectoryConfig:
    """Ensemble settings.

    Attributes
    ----------
    n_traj : int
        Number of trajectories N_T.
    t_final : float, optional
        Evolution time; default from :func:`default_t_final`.
    dt_max : float
        Lockstep step length cap.
    seed : int
        Root seed; trajectory ``i`` uses ``SeedSequence(seed, spawn_key=(i,))``.
    init : {'infinite-temperature', 'haar', 'explicit'}
        Initial-state distribution.
    psi0 : array, optional
        Initial state for ``init='explicit'``.
    jump_tolerance : float
        Accuracy of the jump condition ``‖ψ‖² = r``.
    batch_size : int
        Trajectories propagated together.
    method : {'auto', 'eigen', 'dyadic', 'ode'}
        Jump-time locator (``'auto'`` picks eigen or dyadic by conditioning).
    cond_limit : float
        Largest eigenvector condition number accepted by ``'auto'``.
    checkpoint_every : int, optional
        Spacing of the ⟨n⟩-vs-N_T convergence curve; default N_T/20.
    keep_states : bool
        Keep the final state of every trajectory in the result.
    """

    n_traj: int = 500
    t_final: float | None = None
    dt_max: float = 0.5
    seed: int = 0
    init: str = "infinite-temperature"
    psi0: np.ndarray | None = None
    jump_tolerance: float = 1e-8
    batch_size: int = 256
    method: str = "auto"
    cond_limit: float = 1e6
    checkpoint_every: int | None = None
    keep_states: bool = False

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.t_final is not None and self.t_final <= 0:
            raise ValueError("t_final must be > 0")
        if self.dt_max <= 0:
            raise ValueError("dt_max must be > 0")
        if self.init not in ("infinite-temperature", "haar", "explicit"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.method not in ("auto", "eigen", "dyadic", "ode"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclasses.dataclass
class TrajectoryResult:
    state: StateVector
    jump_times: np.ndarray
    channels: np.ndarray


@dataclasses.dataclass
class EnsembleResult:
    """Averaged state plus convergence metadata.

    ``convergence`` has columns ``(n_traj, mean ⟨n⟩, standard error)``.
    """

    rho: DensityMatrix
    convergence: np.ndarray
    photon_numbers: np.ndarray
    n_jumps: np.ndarray
    t_final: float
    method: str
    states: np.ndarray | None = None


def default_t_final(params: ModelParams) -> float:
    """``50 / min(κ_eff, ωc)`` with ``κ_eff = κ1`` if nonzero, else ``κ2``."""
    k_eff = params.kappa1 if params.kappa1 > 0 else params.kappa2
    rates = [r for r in (k_eff, params.omega_c) if r > 0]
    if not rates:
        raise ValueError("need a positive loss rate or cavity frequency to pick t_final")
    return 50.0 / min(rates)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator of trajectory ``index`` under root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def sample_infinite_temperature(dims: HilbertDims, rng: np.random.Generator) -> StateVector:
    """A uniformly drawn computational basis state (averages to I/d)."""
    psi = np.zeros(dims.total_dim, dtype=complex)
    psi[rng.integers(dims.total_dim)] = 1.0
    return StateVector(psi, dims)


def sample_haar(dims: HilbertDims, rng: np.random.Generator) -> StateVector:
    """A Haar-random pure state (also averages to I/d)."""
    psi = rng.normal(size=dims.total_dim) + 1j * rng.normal(size=dims.total_dim)
    return StateVector(psi / np.linalg.norm(psi), dims)


def average_density_matrix(states: Sequence[StateVector]) -> DensityMatrix:
    """Uniform mixture ``Σ|ψᵢ⟩⟨ψᵢ| / N``."""
    if len(states) == 0:
        raise ValueError("cannot average an empty list of states")
    dims = states[0].dims
    if any(s.dims != dims for s in states):
        raise ValueError("states have different dims")
    psi = np.column_stack([s.amplitudes for s in states])
    return DensityMatrix(_mixture(psi), dims)


def _mixture(psi: np.ndarray, block: int = 256) -> np.ndarray:
    # fixed block order keeps the reduction deterministic
    rho = np.zeros((psi.shape[0], psi.shape[0]), dtype=complex)
    for start in range(0, psi.shape[1], block):
        chunk = psi[:, start : start + block]
        rho += chunk @ chunk.conj().T
    rho /= psi.shape[1]
    return 0.5 * (rho + rho.conj().T)


class _Locator:
    """Exact step propagation and jump-time location within one step of δ."""

    def __init__(self, h_eff: np.ndarray, gamma_diag: np.ndarray, delta: float, tol: float):
        self.delta = delta
        self.tol = tol
        self.gamma = gamma_diag
        self.u_step = sl.expm(-1j * h_eff * delta)

    def full_step(self, psi: np.ndarray) -> np.ndarray:
        return self.u_step @ psi

    def advance(self, psi: np.ndarray, lo: np.ndarray, r: np.ndarray):
        """Move columns from time ``lo`` to the crossing or to δ.

        Returns ``(psi, lo, crossed)``.
        """
        raise NotImplementedError


class _EigenLocator(_Locator):
    def __init__(self, h_eff, gamma_diag, delta, tol, evals, evecs, evecs_inv):
        super().__init__(h_eff, gamma_diag, delta, tol)
        self.E, self.V, self.Vi = evals, evecs, evecs_inv

    def _at(self, c: np.ndarray, tau: np.ndarray) -> np.ndarray:
        return self.V @ (c * np.exp(-1j * np.outer(self.E, tau)))

    def advance(self, psi, lo, r):
        c = self.Vi @ psi
        rem = self.delta - lo
        end = self._at(c, rem)
        p_end = np.sum(np.abs(end) ** 2, axis=0)
        crossed = p_end < r
        out = end
        idx = np.flatnonzero(crossed)
        if idx.size:
            cs, rs = c[:, idx], r[idx]
            a = np.zeros(idx.size)
            b = rem[idx].copy()
            p0 = np.sum(np.abs(psi[:, idx]) ** 2, axis=0)
            # first guess: the single-exponential interpolation
            tau = b * np.log(p0 / rs) / np.log(p0 / p_end[idx])
            tau = np.where(np.isfinite(tau), np.clip(tau, 0.0, b), 0.5 * b)
            for _ in range(200):
                st = self._at(cs, tau)
                p = np.sum(np.abs(st) ** 2, axis=0)
                err = p - rs
                # a collapsed bracket means the tolerance is below round-off
                done = (np.abs(err) < self.tol) | (b - a <= 4 * np.finfo(float).eps * np.maximum(b, 1.0))
                if done.all():
                    break
                above = err > 0
                a = np.where(above, tau, a)
                b = np.where(above, b, tau)
                dp = -np.einsum("i,ij->j", self.gamma, np.abs(st) ** 2)
                with np.errstate(divide="ignore", invalid="ignore"):
                    newton = tau - (np.log(p) - np.log(rs)) * p / dp
                bad = ~np.isfinite(newton) | (newton <= a) | (newton >= b)
                tau = np.where(done, tau, np.where(bad, 0.5 * (a + b), newton))
            else:
                raise TrajectoryError(f"jump-time search did not converge (max error {np.max(np.abs(err)):.2e})")
            out = out.copy()
            out[:, idx] = st
            lo = lo.copy()
            lo[idx] += tau
        lo = np.where(crossed, lo, self.delta)
        return out, lo, crossed


class _DyadicLocator(_Locator):
    def __init__(self, h_eff, gamma_diag, delta, tol):
        super().__init__(h_eff, gamma_diag, delta, tol)
        gmax = max(float(np.max(gamma_diag)), 1e-300)
        self.levels = int(min(52, max(1, np.ceil(np.log2(gmax * delta / tol)) + 1)))
        self.units = 1 << self.levels
        # U(δ/2^k) for k = 1..levels, built from the finest by squaring
        props = [sl.expm(-1j * h_eff * (delta / self.units))]
        for _ in range(self.levels - 1):
            props.append(props[-1] @ props[-1])
        self.props = props[::-1]  # props[k-1] = U(δ/2^k)

    def advance(self, psi, lo, r):
        psi = psi.copy()
        pos = np.rint(lo / self.delta * self.units).astype(np.int64)
        for k in range(1, self.levels + 1):
            step = self.units >> k
            cand_cols = np.flatnonzero(pos + step <= self.units)
            if cand_cols.size == 0:
                continue
            cand = self.props[k - 1] @ psi[:, cand_cols]
            ok = np.sum(np.abs(cand) ** 2, axis=0) >= r[cand_cols]
            cols = cand_cols[ok]
            psi[:, cols] = cand[:, ok]
            pos[cols] += step
        crossed = pos < self.units
        return psi, pos * (self.delta / self.units), crossed


class TrajectoryEngine:
    """Reusable MCWF propagator for fixed operators.

    Parameters
    ----------
    h : sparse matrix
        Hamiltonian.
    jumps : sequence of sparse matrices
        Jump operators.
    dims : HilbertDims
    cfg : TrajectoryConfig
    t_final : float
        Evolution time (the engine's δ divides it exactly).
    """

    def __init__(self, h, jumps, dims: HilbertDims, cfg: TrajectoryConfig, t_final: float):
        self.dims = dims
        self.cfg = cfg
        self.t_final = float(t_final)
        self.jumps = [sp.csr_matrix(op, dtype=complex) for op in jumps]
        h = sp.csr_matrix(h, dtype=complex)
        gamma = sp.csr_matrix((dims.total_dim, dims.total_dim), dtype=complex)
        for op in self.jumps:
            gamma = gamma + op.conj().T @ op
        self.gamma = gamma.tocsr()
        off_diag = self.gamma - sp.diags(self.gamma.diagonal())
        if off_diag.nnz and abs(off_diag).max() > 1e-12:
            raise ValueError("Σ L†L must be diagonal in the computational basis")
        self.gamma_diag = np.real(self.gamma.diagonal())
        self.h_eff_sparse = (h - 0.5j * self.gamma).tocsr()
        self.n_steps = max(1, int(np.ceil(self.t_final / cfg.dt_max)))
        self.delta = self.t_final / self.n_steps
        self.method = cfg.method
        self._locator = None
        if self.method != "ode":
            self._locator = self._build_locator()

    @classmethod
    def from_params(cls, params: ModelParams, dims: HilbertDims, cfg: TrajectoryConfig) -> "TrajectoryEngine":
        t_final = cfg.t_final if cfg.t_final is not None else default_t_final(params)
        return cls(build_hamiltonian(params, dims), build_jumps(params, dims), dims, cfg, t_final)

    def _build_locator(self) -> _Locator:
        h_eff = self.h_eff_sparse.toarray()
        tol = self.cfg.jump_tolerance
        if self.method in ("auto", "eigen"):
            evals, evecs = np.linalg.eig(h_eff)
            try:
                vi = np.linalg.inv(evecs)
                cond = np.linalg.norm(evecs, 2) * np.linalg.norm(vi, 2)
            except np.linalg.LinAlgError:
                cond = np.inf
            if self.method == "eigen" or cond <= self.cfg.cond_limit:
                self.method = "eigen"
                log.debug("eigen locator, cond(V) = %.3g", cond)
                return _EigenLocator(h_eff, self.gamma_diag, self.delta, tol, evals, evecs, vi)
            log.info("cond(V) = %.3g above %.3g; using dyadic bisection", cond, self.cfg.cond_limit)
        self.method = "dyadic"
        return _DyadicLocator(h_eff, self.gamma_diag, self.delta, tol)

    # -- jumps

    def _jump(self, psi: np.ndarray, rng: np.random.Generator, index: int) -> tuple[np.ndarray, int]:
        outs = [op @ psi for op in self.jumps]
        w = np.array([np.vdot(o, o).real for o in outs])
        total = w.sum()
        if not total > 1e-300:
            raise TrajectoryError("norm decayed with no available jump (underflow)", index)
        k = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
        k = min(k, len(outs) - 1)
        return outs[k] / np.sqrt(w[k]), k

    # -- propagation

    def run(self, psi0: np.ndarray, rngs: Sequence[np.random.Generator], indices: Sequence[int], record: bool = False):
        """Propagate the columns of ``psi0`` to ``t_final``.

        Returns normalized final states (d x B), jump counts and, with
        ``record``, per-column lists of ``(time, channel)``.
        """
        if self.method == "ode":
            return self._run_ode(psi0, rngs, indices, record)
        psi = np.array(psi0, dtype=complex, copy=True)
        nb = psi.shape[1]
        r = np.array([g.random() for g in rngs])
        n_jumps = np.zeros(nb, dtype=np.int64)
        records = [[] for _ in range(nb)] if record else None
        loc = self._locator
        for step in range(self.n_steps):
            t0 = step * self.delta
            end = loc.full_step(psi)
            p = np.sum(np.abs(end) ** 2, axis=0)
            pending = np.flatnonzero(p < r)
            keep = np.flatnonzero(p >= r)
            psi[:, keep] = end[:, keep]
            lo = np.zeros(pending.size)
            cur = psi[:, pending]
            while pending.size:
                cur, lo, crossed = loc.advance(cur, lo, r[pending])
                for j in np.flatnonzero(crossed):
                    col = pending[j]
                    cur[:, j], ch = self._jump(cur[:, j], rngs[col], indices[col])
                    r[col] = rngs[col].random()
                    n_jumps[col] += 1
                    if record:
                        records[col].append((t0 + lo[j], ch))
                finished = ~crossed
                psi[:, pending[finished]] = cur[:, finished]
                pending, cur, lo = pending[crossed], cur[:, crossed], lo[crossed]
        psi /= np.linalg.norm(psi, axis=0)
        return psi, n_jumps, records

    def _run_ode(self, psi0, rngs, indices, record):
        h_eff = self.h_eff_sparse
        t_end = self.t_final
        tol = self.cfg.jump_tolerance
        out = np.empty_like(np.asarray(psi0, dtype=complex))
        n_jumps = np.zeros(psi0.shape[1], dtype=np.int64)
        records = [[] for _ in range(psi0.shape[1])] if record else None

        def rhs(_, y):
            return -1j * (h_eff @ y)

        for col in range(psi0.shape[1]):
            rng = rngs[col]
            psi = np.array(psi0[:, col], dtype=complex)
            t = 0.0
            r = rng.random()
            while t < t_end:
                event = lambda _, y, r=r: np.vdot(y, y).real - r  # noqa: E731
                event.terminal = True
                event.direction = -1
                sol = solve_ivp(rhs, (t, t_end), psi, method="DOP853", rtol=1e-11, atol=1e-13,
                                events=event, max_step=self.cfg.dt_max)
                if not sol.success:
                    raise TrajectoryError(f"integrator failed: {sol.message}", indices[col])
                if sol.status == 1 and sol.t_events[0].size:
                    t_jump = float(sol.t_events[0][0])
                    psi = sol.y_events[0][0]
                    # polish on the dense path: bisection in time on the integrator output
                    psi, t_jump = self._polish_ode(rhs, t, psi, t_jump, r, tol, sol)
                    psi, ch = self._jump(psi, rng, indices[col])
                    n_jumps[col] += 1
                    if record:
                        records[col].append((t_jump, ch))
                    t = t_jump
                    r = rng.random()
                else:
                    psi = sol.y[:, -1]
                    t = t_end
            out[:, col] = psi / np.linalg.norm(psi)
        return out, n_jumps, records

    @staticmethod
    def _polish_ode(rhs, t0, psi_event, t_event, r, tol, sol):
        p = np.vdot(psi_event, psi_event).real
        if abs(p - r) < tol:
            return psi_event, t_event
        # one Newton correction along the exact derivative
        dp = 2 * np.real(np.vdot(psi_event, rhs(t_event, psi_event)))
        dt = (r - p) / dp
        short = solve_ivp(rhs, (t_event, t_event + dt), psi_event, method="DOP853", rtol=1e-12, atol=1e-14)
        return short.y[:, -1], t_event + dt


def _initial_states(dims: HilbertDims, cfg: TrajectoryConfig, rngs) -> np.ndarray:
    d = dims.total_dim
    psi = np.zeros((d, len(rngs)), dtype=complex)
    for j, g in enumerate(rngs):
        if cfg.init == "infinite-temperature":
            psi[:, j] = sample_infinite_temperature(dims, g).amplitudes
        elif cfg.init == "haar":
            psi[:, j] = sample_haar(dims, g).amplitudes
        else:
            if cfg.psi0 is None:
                raise ValueError("init='explicit' needs psi0")
            v = np.asarray(cfg.psi0, dtype=complex)
            psi[:, j] = v / np.linalg.norm(v)
    return psi


def evolve_trajectory(
    psi0: StateVector,
    params: ModelParams,
    dims: HilbertDims,
    cfg: TrajectoryConfig,
    rng: np.random.Generator | None = None,
    engine: TrajectoryEngine | None = None,
    record: bool = False,
):
    """One MCWF trajectory from ``psi0`` to ``t_final``.

    Returns the normalized final StateVector, or a TrajectoryResult with
    jump times and channels when ``record`` is set.
    """
    if abs(psi0.norm - 1.0) > 1e-10:
        raise ValueError("psi0 must be normalized")
    engine = engine or TrajectoryEngine.from_params(params, dims, cfg)
    rng = rng or trajectory_rng(cfg.seed, 0)
    psi, _, records = engine.run(psi0.amplitudes[:, None], [rng], [0], record=record)
    state = StateVector(psi[:, 0], dims)
    if not record:
        return state
    rec = records[0]
    return TrajectoryResult(state, np.array([t for t, _ in rec]), np.array([c for _, c in rec], dtype=int))


def run_ensemble(params: ModelParams, dims: HilbertDims, cfg: TrajectoryConfig,
                 engine: TrajectoryEngine | None = None) -> EnsembleResult:
    """Average ``cfg.n_traj`` trajectories into a steady-state estimate."""
    engine = engine or TrajectoryEngine.from_params(params, dims, cfg)
    n_photon = np.tile(np.arange(dims.fock_cutoff, dtype=float), dims.spin_dim)
    d = dims.total_dim
    rho = np.zeros((d, d), dtype=complex)
    photons = np.empty(cfg.n_traj)
    jumps = np.empty(cfg.n_traj, dtype=np.int64)
    states = np.empty((d, cfg.n_traj), dtype=complex) if cfg.keep_states else None
    for start in range(0, cfg.n_traj, cfg.batch_size):
        idx = list(range(start, min(cfg.n_traj, start + cfg.batch_size)))
        rngs = [trajectory_rng(cfg.seed, i) for i in idx]
        psi0 = _initial_states(dims, cfg, rngs)
        try:
            psi, nj, _ = engine.run(psi0, rngs, idx)
        except TrajectoryError:
            raise
        except Exception as exc:  # attach the batch range for diagnosis
            raise TrajectoryError(f"{type(exc).__name__}: {exc}", idx[0]) from exc
        rho += psi @ psi.conj().T
        photons[idx[0] : idx[-1] + 1] = n_photon @ (np.abs(psi) ** 2)
        jumps[idx[0] : idx[-1] + 1] = nj
        if states is not None:
            states[:, idx[0] : idx[-1] + 1] = psi
    rho /= cfg.n_traj
    rho = 0.5 * (rho + rho.conj().T)
    every = cfg.checkpoint_every or max(1, cfg.n_traj // 20)
    marks = sorted(set(list(range(every, cfg.n_traj + 1, every)) + [cfg.n_traj]))
    conv = []
    for m in marks:
        x = photons[:m]
        err = x.std(ddof=1) / np.sqrt(m) if m > 1 else float("nan")
        conv.append((m, x.mean(), err))
    return EnsembleResult(DensityMatrix(rho, dims), np.array(conv), photons, jumps, engine.t_final,
                          engine.method, states)


def photon_number_operator(dims: HilbertDims) -> sp.csr_matrix:
    return embed_photon(build_fock_ops(dims.fock_cutoff).n_op, dims)
