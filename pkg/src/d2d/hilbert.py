"""Truncated spin-photon Hilbert space and model operators.

Conventions (frozen, asserted in the tests):

* Tensor order is ``spin ⊗ photon``. The composite basis index of spin
  index ``s`` (``s = 0..N``) and Fock index ``n`` (``n = 0..M-1``) is
  ``s * M + n``.
* Spin operators are *twice* the standard spin-``N/2`` matrices, so
  ``[Jx, Jy] = 2i Jz`` and ``Jz = diag(-N, -N+2, ..., N)``. Spin index
  ``s`` counts excitations above the ground state ``Jz = -N``.
* The Hamiltonian is
  ``H = wc (I ⊗ n) + (wa/2) (Jz ⊗ I) + (lam/N) Jx ⊗ (a†² + a²)``.
* The Z4 parity operator is diagonal, ``Π|s, n⟩ = i^((n + 2s) mod 4) |s, n⟩``.
  This is ``exp(iπ(n/2 + Sz))`` with the undoubled ``Sz = s - N/2``, up to
  the global phase ``i^N``. With the doubled ``Jz`` in the exponent the
  spin factor would be a constant and Π would anticommute with the
  coupling, so the undoubled form is used.

All operators are returned as ``scipy.sparse`` CSR matrices.
"""

from __future__ import annotations

import dataclasses
import math
from typing import NamedTuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensionError

OperatorMatrix = Union[sp.csr_matrix, np.ndarray]


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Physical constants of the two-photon Dicke model (ħ = 1).

    Attributes
    ----------
    omega_c : float
        Cavity frequency.
    omega_a : float
        Atomic frequency.
    lam : float
        Coupling strength λ.
    kappa1, kappa2 : float
        One- and two-photon loss rates.
    n_spins : int
        Number of two-level emitters N.
    """

    omega_c: float = 1.0
    omega_a: float = 1.0
    lam: float = 0.0
    kappa1: float = 0.4
    kappa2: float = 0.0
    n_spins: int = 1

    def __post_init__(self):
        for name in ("omega_c", "omega_a", "lam", "kappa1", "kappa2"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        for name in ("lam", "kappa1", "kappa2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise InvalidDimensionError(f"n_spins must be an integer >= 1, got {self.n_spins}")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class HilbertDims:
    """Dimensions of the truncated ``spin ⊗ photon`` space."""

    n_spins: int
    fock_cutoff: int

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise InvalidDimensionError(f"n_spins must be >= 1, got {self.n_spins}")
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 2:
            raise InvalidDimensionError(f"fock_cutoff must be >= 2, got {self.fock_cutoff}")

    @property
    def spin_dim(self) -> int:
        return self.n_spins + 1

    @property
    def total_dim(self) -> int:
        return self.spin_dim * self.fock_cutoff

    def index(self, s: int, n: int) -> int:
        """Composite basis index of spin index ``s`` and Fock state ``n``."""
        return s * self.fock_cutoff + n


class FockOps(NamedTuple):
    a: sp.csr_matrix
    a_dag: sp.csr_matrix
    n_op: sp.csr_matrix


class SpinOps(NamedTuple):
    jx: sp.csr_matrix
    jy: sp.csr_matrix
    jz: sp.csr_matrix


def build_fock_ops(fock_cutoff: int) -> FockOps:
    """Annihilation, creation and number operators on ``|0⟩..|M-1⟩``."""
    if int(fock_cutoff) != fock_cutoff or fock_cutoff < 2:
        raise InvalidDimensionError(f"fock_cutoff must be >= 2, got {fock_cutoff}")
    m = int(fock_cutoff)
    a = sp.diags(np.sqrt(np.arange(1, m, dtype=float)), 1, shape=(m, m), format="csr", dtype=complex)
    a_dag = a.conj().T.tocsr()
    n_op = sp.diags(np.arange(m, dtype=float), 0, shape=(m, m), format="csr", dtype=complex)
    return FockOps(a, a_dag, n_op)


def build_spin_ops(n_spins: int) -> SpinOps:
    """Doubled collective spin operators on the maximal-J sector (dim N+1)."""
    if int(n_spins) != n_spins or n_spins < 1:
        raise InvalidDimensionError(f"n_spins must be >= 1, got {n_spins}")
    j = n_spins / 2.0
    m = np.arange(-j, j + 1.0)
    # standard J+ has <m+1|J+|m> = sqrt(j(j+1) - m(m+1)); doubled below
    raise_elems = np.sqrt(j * (j + 1.0) - m[:-1] * (m[:-1] + 1.0))
    j_plus = sp.diags(raise_elems, -1, format="csr", dtype=complex)
    j_minus = j_plus.conj().T.tocsr()
    jx = (j_plus + j_minus).tocsr()
    jy = (-1j * (j_plus - j_minus)).tocsr()
    jz = sp.diags(2.0 * m, 0, format="csr", dtype=complex)
    return SpinOps(jx, jy, jz)


def tensor(spin_op: OperatorMatrix, photon_op: OperatorMatrix, dims: HilbertDims | None = None) -> sp.csr_matrix:
    """Kronecker product ``spin_op ⊗ photon_op`` in the fixed factor order."""
    spin_op = sp.csr_matrix(spin_op)
    photon_op = sp.csr_matrix(photon_op)
    for op in (spin_op, photon_op):
        if op.shape[0] != op.shape[1]:
            raise InvalidDimensionError(f"operator must be square, got shape {op.shape}")
    if dims is not None:
        if spin_op.shape[0] != dims.spin_dim or photon_op.shape[0] != dims.fock_cutoff:
            raise InvalidDimensionError(
                f"factor shapes {spin_op.shape[0]}, {photon_op.shape[0]} do not match "
                f"spin_dim={dims.spin_dim}, fock_cutoff={dims.fock_cutoff}"
            )
    return sp.kron(spin_op, photon_op, format="csr")


def spin_identity(dims: HilbertDims) -> sp.csr_matrix:
    return sp.identity(dims.spin_dim, dtype=complex, format="csr")


def photon_identity(dims: HilbertDims) -> sp.csr_matrix:
    return sp.identity(dims.fock_cutoff, dtype=complex, format="csr")


def embed_photon(op: OperatorMatrix, dims: HilbertDims) -> sp.csr_matrix:
    """``I ⊗ op`` on the composite space."""
    return tensor(spin_identity(dims), op, dims)


def embed_spin(op: OperatorMatrix, dims: HilbertDims) -> sp.csr_matrix:
    """``op ⊗ I`` on the composite space."""
    return tensor(op, photon_identity(dims), dims)


def _check_dims(params: ModelParams, dims: HilbertDims) -> None:
    if params.n_spins != dims.n_spins:
        raise InvalidDimensionError(
            f"params.n_spins={params.n_spins} does not match dims.n_spins={dims.n_spins}"
        )


def build_hamiltonian(params: ModelParams, dims: HilbertDims) -> sp.csr_matrix:
    """Two-photon Dicke Hamiltonian on the truncated composite space."""
    _check_dims(params, dims)
    fock = build_fock_ops(dims.fock_cutoff)
    spin = build_spin_ops(dims.n_spins)
    pair = fock.a_dag @ fock.a_dag + fock.a @ fock.a
    h = (
        params.omega_c * embed_photon(fock.n_op, dims)
        + 0.5 * params.omega_a * embed_spin(spin.jz, dims)
        + (params.lam / dims.n_spins) * tensor(spin.jx, pair, dims)
    )
    return h.tocsr()


def parity_classes(dims: HilbertDims) -> np.ndarray:
    """Z4 charge ``(n + 2s) mod 4`` of every composite basis state."""
    s = np.repeat(np.arange(dims.spin_dim), dims.fock_cutoff)
    n = np.tile(np.arange(dims.fock_cutoff), dims.spin_dim)
    return (n + 2 * s) % 4


def build_parity(dims: HilbertDims) -> sp.csr_matrix:
    """Diagonal Z4 parity operator with eigenvalues ``i^charge``."""
    phases = np.array([1, 1j, -1, -1j])[parity_classes(dims)]
    return sp.diags(phases, 0, format="csr", dtype=complex)


def basis_state(dims: HilbertDims, s: int, n: int) -> np.ndarray:
    """Composite basis vector ``|s⟩ ⊗ |n⟩`` as a dense complex array."""
    psi = np.zeros(dims.total_dim, dtype=complex)
    psi[dims.index(s, n)] = 1.0
    return psi
