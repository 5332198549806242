"""Lindblad superoperator, exact steady states and the spectrum near zero.

Vectorization is column stacking: ``vec(ρ)[i + j*d] = ρ[i, j]``, so that
``vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)``.

The Liouvillian commutes with the Z4 parity superoperator ``ρ ↦ Π ρ Π†``.
Entries ``ρ[i, j]`` whose parity charges differ by ``q (mod 4)`` therefore
form four invariant blocks. Every Z4-symmetric density matrix, and hence
every steady state reached from a symmetric initial state, lives in the
``q = 0`` block. The eigensolvers work block by block. This cuts the
unknowns by four and, more importantly, the LU fill by about an order of
magnitude.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ._sparse import ShiftInvert, eigs_near
from .errors import (
    BudgetExceededError,
    ConvergenceError,
    DegenerateKernelError,
    InvalidDimensionError,
    KernelLimitError,
)
from .hilbert import HilbertDims, ModelParams, build_fock_ops, embed_photon, parity_classes

log = logging.getLogger(__name__)

# largest Hilbert-space dimension d handled by exact diagonalization
ED_BUDGET_DIM = 1500
KERNEL_TOL = 1e-8


@dataclasses.dataclass
class DensityMatrix:
    """Density matrix on the composite space (``dims`` a HilbertDims) or on
    a single factor (``dims`` the integer dimension)."""

    data: np.ndarray
    dims: HilbertDims | int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        d = self.dim
        if self.data.shape != (d, d):
            raise InvalidDimensionError(f"density matrix shape {self.data.shape} != ({d}, {d})")

    @property
    def dim(self) -> int:
        return self.dims.total_dim if isinstance(self.dims, HilbertDims) else int(self.dims)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def expect(self, op) -> complex:
        """``Tr(op ρ)``."""
        if sp.issparse(op):
            return complex((op.multiply(self.data.T)).sum())
        return complex(np.einsum("ij,ji->", np.asarray(op), self.data))

    def check(self, herm_tol: float = 1e-10, trace_tol: float = 1e-10, min_eig: float = -1e-8) -> None:
        """Raise ValueError if Hermiticity, unit trace or positivity fail."""
        herm = np.max(np.abs(self.data - self.data.conj().T))
        if herm > herm_tol:
            raise ValueError(f"not Hermitian: {herm:.3e}")
        if abs(self.trace - 1.0) > trace_tol:
            raise ValueError(f"trace {self.trace} != 1")
        lo = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0]
        if lo < min_eig:
            raise ValueError(f"minimum eigenvalue {lo:.3e} < {min_eig}")

    @classmethod
    def from_vector(cls, vec: np.ndarray, dims: HilbertDims | int, normalize: bool = True) -> "DensityMatrix":
        """Unvectorize, Hermitize and (optionally) normalize the trace."""
        d = dims.total_dim if isinstance(dims, HilbertDims) else int(dims)
        rho = np.asarray(vec, dtype=complex).reshape((d, d), order="F")
        rho = 0.5 * (rho + rho.conj().T)
        if normalize:
            tr = np.trace(rho).real
            if tr == 0:
                raise ValueError("cannot normalize a traceless matrix")
            rho = rho / tr
        return cls(rho, dims)

    @classmethod
    def from_pure(cls, psi: np.ndarray, dims: HilbertDims | int) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()), dims)


@dataclasses.dataclass(frozen=True, eq=False)
class Superoperator:
    """Sparse Lindblad generator acting on column-stacked ``vec(ρ)``."""

    matrix: sp.csr_matrix
    dims: HilbertDims
    hamiltonian: sp.csr_matrix
    jumps: tuple
    vectorization: str = "column"

    @property
    def dim(self) -> int:
        return self.dims.total_dim

    def apply(self, rho: np.ndarray | DensityMatrix) -> np.ndarray:
        """``unvec(L vec(ρ))``."""
        data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
        d = self.dim
        return (self.matrix @ data.reshape(-1, order="F")).reshape((d, d), order="F")

    def residual(self, rho: np.ndarray | DensityMatrix) -> float:
        """Max-norm of ``L ρ``."""
        return float(np.max(np.abs(self.apply(rho))))

    def trace_defect(self) -> float:
        """Max-norm of ``vec(I)† L``; zero for a trace-preserving generator."""
        d = self.dim
        rows = np.arange(d) * (d + 1)
        return float(np.max(np.abs(np.asarray(self.matrix[rows].sum(axis=0)))))

    def conserves_photon_parity(self) -> bool:
        """True when H and every jump commute with exp(iπ n)."""
        parity = embed_photon(sp.diags((-1.0) ** np.arange(self.dims.fock_cutoff)), self.dims)
        for op in (self.hamiltonian, *self.jumps):
            if abs(parity @ op - op @ parity).max() > 1e-12:
                return False
        return True


@dataclasses.dataclass
class SpectrumSlice:
    """Eigenvalues sorted by descending real part, with their Z4 block."""

    eigenvalues: np.ndarray
    k: int
    sectors: np.ndarray


@dataclasses.dataclass
class SteadyStateOptions:
    """Controls for :func:`steady_state`.

    Attributes
    ----------
    method : {'eigs', 'evolve'}
        Shift-invert eigensolve (default) or long-time integration.
    tol : float
        Required max-norm of ``L ρ``.
    kernel_tol : float
        Eigenvalues with modulus below this count as zero modes.
    sigma : float
        Shift for shift-invert; a small positive real keeps ``L - σ`` regular.
    n_eigs : int
        Eigenvalues requested near the shift (needs >= 2 to detect degeneracy).
    maxiter : int, optional
        ARPACK iteration cap.
    fallback : bool
        Integrate ``dρ/dt = Lρ`` when the eigensolve fails.
    rho0 : DensityMatrix, optional
        Initial state for the integration path; default I/d.
    t_chunk, t_max : float
        Integration chunk and total time limit.
    ordering : {'auto', 'metis', 'colamd'}
        Fill-reducing ordering for the LU.
    """

    method: str = "eigs"
    tol: float = 1e-9
    kernel_tol: float = KERNEL_TOL
    sigma: float = 1e-7
    n_eigs: int = 3
    maxiter: int | None = 5000
    fallback: bool = True
    rho0: DensityMatrix | None = None
    t_chunk: float = 50.0
    t_max: float = 5000.0
    ordering: str = "auto"


def build_jumps(params: ModelParams, dims: HilbertDims) -> list[sp.csr_matrix]:
    """One- and two-photon loss operators; zero-rate channels are omitted."""
    if params.n_spins != dims.n_spins:
        raise InvalidDimensionError("params.n_spins does not match dims")
    a = build_fock_ops(dims.fock_cutoff).a
    jumps = []
    if params.kappa1 > 0:
        jumps.append((np.sqrt(params.kappa1) * embed_photon(a, dims)).tocsr())
    if params.kappa2 > 0:
        jumps.append((np.sqrt(params.kappa2 / dims.n_spins) * embed_photon(a @ a, dims)).tocsr())
    return jumps


def effective_hamiltonian(h: sp.spmatrix, jumps: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    """``H - (i/2) Σ L†L``."""
    h_eff = sp.csr_matrix(h, dtype=complex)
    for op in jumps:
        h_eff = h_eff - 0.5j * (op.conj().T @ op)
    return h_eff.tocsr()


def build_liouvillian(
    h: sp.spmatrix,
    jumps: Sequence[sp.spmatrix],
    dims: HilbertDims,
    max_dim: int | None = ED_BUDGET_DIM,
) -> Superoperator:
    """Assemble the column-stacked Lindblad superoperator.

    Uses ``L = -i I⊗H_eff + i conj(H_eff)⊗I + Σ conj(Lₙ)⊗Lₙ`` which equals
    the textbook form with ``H_eff = H - (i/2)ΣLₙ†Lₙ``.

    Raises
    ------
    BudgetExceededError
        If ``d > max_dim``.
    """
    d = dims.total_dim
    if h.shape != (d, d) or any(op.shape != (d, d) for op in jumps):
        raise InvalidDimensionError(f"operators must be {d}x{d}")
    if max_dim is not None and d > max_dim:
        raise BudgetExceededError(
            f"Hilbert dimension {d} exceeds the ED budget {max_dim} "
            f"(superoperator {d * d}x{d * d}); use the trajectory solver"
        )
    h = sp.csr_matrix(h, dtype=complex)
    jumps = tuple(sp.csr_matrix(op, dtype=complex) for op in jumps)
    ident = sp.identity(d, dtype=complex, format="csr")
    h_eff = effective_hamiltonian(h, jumps)
    mat = -1j * sp.kron(ident, h_eff, format="csr") + 1j * sp.kron(h_eff.conj(), ident, format="csr")
    for op in jumps:
        mat = mat + sp.kron(op.conj(), op, format="csr")
    mat = mat.tocsr()
    mat.eliminate_zeros()
    return Superoperator(mat, dims, h, jumps)


def liouvillian_from_params(params: ModelParams, dims: HilbertDims, max_dim: int | None = ED_BUDGET_DIM) -> Superoperator:
    """Convenience: Hamiltonian + jumps + assembly."""
    from .hilbert import build_hamiltonian

    return build_liouvillian(build_hamiltonian(params, dims), build_jumps(params, dims), dims, max_dim)


def sector_indices(dims: HilbertDims, charge: int) -> np.ndarray:
    """Positions in ``vec(ρ)`` of entries ``ρ[i, j]`` with charge(i) - charge(j) = q mod 4."""
    cls = parity_classes(dims)
    d = dims.total_dim
    i = np.tile(np.arange(d), d)
    j = np.repeat(np.arange(d), d)
    return np.flatnonzero((cls[i] - cls[j]) % 4 == charge % 4)


def _sector_block(L: Superoperator, charge: int) -> tuple[np.ndarray, sp.csr_matrix]:
    idx = sector_indices(L.dims, charge)
    return idx, L.matrix[idx][:, idx].tocsr()


def _embed(idx: np.ndarray, vec: np.ndarray, size: int) -> np.ndarray:
    full = np.zeros(size, dtype=complex)
    full[idx] = vec
    return full


def _precheck(L: Superoperator) -> None:
    defect = L.trace_defect()
    scale = max(1.0, float(abs(L.matrix).max()))
    if defect > 1e-10 * scale:
        raise ValueError(f"superoperator is not trace preserving (defect {defect:.3e})")


def steady_state(L: Superoperator, options: SteadyStateOptions | None = None) -> DensityMatrix:
    """Unique non-equilibrium steady state.

    Raises
    ------
    DegenerateKernelError
        More than one zero mode in the symmetric block.
    ConvergenceError
        Neither the eigensolve nor the integration fallback met ``tol``.
    """
    opts = options or SteadyStateOptions()
    _precheck(L)
    if opts.method == "evolve":
        return _steady_by_evolution(L, opts)
    if opts.method != "eigs":
        raise ValueError(f"unknown steady-state method {opts.method!r}")
    try:
        return _steady_by_eigs(L, opts)
    except DegenerateKernelError:
        raise
    except ConvergenceError as exc:
        if not opts.fallback:
            raise
        log.warning("eigensolve failed (%s); integrating to the steady state", exc)
        return _steady_by_evolution(L, opts)


def _steady_by_eigs(L: Superoperator, opts: SteadyStateOptions) -> DensityMatrix:
    d = L.dim
    idx, block = _sector_block(L, 0)
    vals, vecs, solver = eigs_near(
        block, max(2, opts.n_eigs), opts.sigma, maxiter=opts.maxiter, ordering=opts.ordering
    )
    zero = np.abs(vals) < opts.kernel_tol
    if zero.sum() > 1:
        raise DegenerateKernelError(
            f"{int(zero.sum())} zero modes (|λ| < {opts.kernel_tol:g}); use kernel_basis", vals
        )
    vec = vecs[:, 0]
    rho = DensityMatrix.from_vector(_embed(idx, vec, d * d), L.dims)
    res = L.residual(rho)
    # inverse iteration polishes eigenvectors from a loose ARPACK solve
    for _ in range(3):
        if res <= opts.tol:
            break
        if solver is None:
            solver = ShiftInvert(block, opts.sigma, ordering=opts.ordering)
        vec = solver.solve(rho.data.reshape(-1, order="F")[idx])
        rho = DensityMatrix.from_vector(_embed(idx, vec, d * d), L.dims)
        res = L.residual(rho)
    if res > opts.tol:
        raise ConvergenceError("steady state residual above tolerance", res)
    log.info("steady state: λ0=%.3e, next=%s, residual=%.2e", abs(vals[0]), vals[1:], res)
    return rho


def evolve(L: Superoperator, rho0: DensityMatrix | np.ndarray, t: float) -> DensityMatrix:
    """``exp(L t) ρ0`` by Krylov-type action of the matrix exponential."""
    data = rho0.data if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    vec = sla.expm_multiply(L.matrix * t, data.reshape(-1, order="F"))
    return DensityMatrix(vec.reshape(data.shape, order="F"), L.dims)


def _steady_by_evolution(L: Superoperator, opts: SteadyStateOptions) -> DensityMatrix:
    d = L.dim
    rho = opts.rho0 or DensityMatrix(np.eye(d, dtype=complex) / d, L.dims)
    t = 0.0
    res = L.residual(rho)
    while res > opts.tol and t < opts.t_max:
        rho = evolve(L, rho, opts.t_chunk)
        rho = DensityMatrix(0.5 * (rho.data + rho.data.conj().T) / np.trace(rho.data).real, L.dims)
        t += opts.t_chunk
        res = L.residual(rho)
    if res > opts.tol:
        raise ConvergenceError(f"integration to t={t:g} did not reach the steady state", res)
    return rho


def _hermitian_basis(mats: list[np.ndarray], k: int) -> list[np.ndarray]:
    """Real-linear Hermitian basis of a †-closed complex span of dimension k."""
    herm = []
    for x in mats:
        herm.append(0.5 * (x + x.conj().T))
        herm.append(0.5j * (x - x.conj().T))
    stack = np.array([np.concatenate([h.real.ravel(), h.imag.ravel()]) for h in herm])
    _, s, vt = np.linalg.svd(stack, full_matrices=False)
    d = mats[0].shape[0]
    out = []
    for row in vt[:k]:
        re, im = row[: d * d], row[d * d :]
        h = (re + 1j * im).reshape(d, d)
        out.append(0.5 * (h + h.conj().T))
    return out


def _kernel_vectors(L: Superoperator, k_max: int, tol: float, sigma: float, left: bool = False, solver=None):
    idx, block = _sector_block(L, 0)
    vals, vecs, solver = eigs_near(block, k_max + 1, sigma, left=left, solver=solver)
    zero = np.abs(vals) < tol
    if zero.sum() > k_max:
        raise KernelLimitError(f"more than k_max={k_max} zero modes: {vals}", vals)
    return idx, vals, vecs[:, zero], solver


def _physical_states(L: Superoperator, basis: list[np.ndarray], tol: float) -> list[np.ndarray] | None:
    """Split a degenerate Hermitian kernel into states with disjoint supports."""
    k = len(basis)
    d = L.dim

    def in_kernel(m):
        return np.max(np.abs(L.apply(m))) < max(tol, 1e-9) * max(1.0, np.max(np.abs(m)))

    candidates = []
    if L.conserves_photon_parity():
        n = np.tile(np.arange(L.dims.fock_cutoff), L.dims.spin_dim)
        for parity in (0, 1):
            mask = (n % 2) == parity
            best = max(basis, key=lambda b: abs(np.trace(b[np.ix_(mask, mask)])))
            block = np.zeros_like(best)
            block[np.ix_(mask, mask)] = best[np.ix_(mask, mask)]
            tr = np.trace(block).real
            if abs(tr) > 1e-12:
                candidates.append(block / tr)
    else:
        # minimal projectors of a generic element of a commutative fixed-point algebra
        rng = np.random.default_rng(0)
        y = sum(c * b for c, b in zip(rng.normal(size=k), basis))
        w, v = np.linalg.eigh(y)
        keep = np.abs(w) > 1e-10 * np.max(np.abs(w))
        w, v = w[keep], v[:, keep]
        groups: list[list[int]] = []
        for i in np.argsort(w):
            if groups and abs(w[i] - w[groups[-1][-1]]) < 1e-8 * np.max(np.abs(w)):
                groups[-1].append(i)
            else:
                groups.append([i])
        for g in groups:
            p = v[:, g] @ v[:, g].conj().T
            block = p @ y @ p
            tr = np.trace(block).real
            if abs(tr) > 1e-12:
                candidates.append(block / tr)
    states = [c for c in candidates if in_kernel(c)]
    if len(states) != k:
        return None
    rank = np.linalg.matrix_rank(np.array([s.ravel() for s in states]), tol=1e-8)
    if rank != k:
        return None
    return states


def kernel_basis(
    L: Superoperator, k_max: int = 4, tol: float = KERNEL_TOL, sigma: float = 1e-7
) -> list[DensityMatrix]:
    """Physical basis of the steady-state manifold.

    Zero modes are taken from the Z4-symmetric block. With a degenerate
    kernel and conserved photon parity, the basis is the even- and
    odd-Fock projections. Otherwise the supports of a generic kernel
    element are used, and raw Hermitian kernel vectors are returned (with
    a warning) if neither splitting works.

    Raises
    ------
    KernelLimitError
        More than ``k_max`` zero modes were found.
    """
    _precheck(L)
    d = L.dim
    idx, vals, vecs, _ = _kernel_vectors(L, k_max, tol, sigma)
    if vecs.shape[1] == 0:
        raise ConvergenceError(f"no zero mode below {tol:g}; nearest eigenvalues {vals}")
    q, _ = np.linalg.qr(vecs)
    mats = [_embed(idx, q[:, i], d * d).reshape((d, d), order="F") for i in range(q.shape[1])]
    k = len(mats)
    if k == 1:
        return [DensityMatrix.from_vector(mats[0].reshape(-1, order="F"), L.dims)]
    basis = _hermitian_basis(mats, k)
    states = _physical_states(L, basis, tol)
    if states is None:
        log.warning("could not split the %d-dimensional kernel into physical states", k)
        states = [b / np.trace(b).real if abs(np.trace(b)) > 1e-12 else b for b in basis]
    return [DensityMatrix(s, L.dims) for s in states]


def long_time_limit(L: Superoperator, rho0: DensityMatrix, k_max: int = 16, tol: float = KERNEL_TOL, sigma: float = 1e-7) -> DensityMatrix:
    """``lim_{t→∞} exp(Lt) ρ0`` by biorthogonal projection onto the kernel.

    ``ρ0`` should be Z4 symmetric (any diagonal state is); its components
    outside the symmetric block are discarded.
    """
    d = L.dim
    idx, _, right, solver = _kernel_vectors(L, k_max, tol, sigma)
    _, _, left, _ = _kernel_vectors(L, k_max, tol, sigma, left=True, solver=solver)
    if right.shape[1] != left.shape[1] or right.shape[1] == 0:
        raise ConvergenceError(f"left/right kernel mismatch ({left.shape[1]} vs {right.shape[1]})")
    x0 = rho0.data.reshape(-1, order="F")[idx]
    gram = left.conj().T @ right
    coef = np.linalg.solve(gram, left.conj().T @ x0)
    return DensityMatrix.from_vector(_embed(idx, right @ coef, d * d), L.dims)


def spectrum_near_zero(
    L: Superoperator, k: int, n_search: int | None = None, sigma: float = 1e-7, sectors: Sequence[int] = (0, 1, 2, 3)
) -> SpectrumSlice:
    """The ``k`` eigenvalues of largest real part among those nearest 0.

    Each Z4 block contributes its ``n_search`` eigenvalues closest to
    the origin (default ``k + 6``); the union is sorted by real part.
    Block 3 is the complex conjugate of block 1 (ρ ↦ ρ† maps one onto the
    other) and is not solved separately.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_search = n_search or k + 6
    vals_all, sec_all = [], []
    done = {}
    for q in sectors:
        q = q % 4
        if q == 3 and 1 in done:
            vals = done[1].conj()
        else:
            _, block = _sector_block(L, q)
            vals, _, _ = eigs_near(block, min(n_search, max(1, block.shape[0] - 2)), sigma)
            done[q] = vals
        vals_all.append(vals)
        sec_all.append(np.full(len(vals), q))
    vals = np.concatenate(vals_all)
    secs = np.concatenate(sec_all)
    order = np.lexsort((vals.imag, -vals.real))
    sel = order[:k]
    return SpectrumSlice(vals[sel], k, secs[sel])


def photon_mass_by_parity(rho: DensityMatrix) -> tuple[float, float]:
    """Total weight on even and odd Fock states."""
    dims = rho.dims
    n = np.tile(np.arange(dims.fock_cutoff), dims.spin_dim)
    diag = np.real(np.diag(rho.data))
    return float(diag[n % 2 == 0].sum()), float(diag[n % 2 == 1].sum())
