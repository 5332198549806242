"""Sparse shift-invert machinery shared by the ED routines.

Liouvillians of the two-photon Dicke model have a 2D-grid-like sparsity
pattern (spin index x Fock index on both sides of ρ). Column approximate
minimum degree orderings fill in badly on such graphs; METIS nested
dissection keeps the LU factors several times smaller. ``pymetis`` is used
when importable, otherwise SuperLU's COLAMD.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import ConvergenceError

log = logging.getLogger(__name__)

try:  # pragma: no cover - exercised implicitly
    import pymetis
except ImportError:  # pragma: no cover
    pymetis = None

# sectors up to this size are diagonalized densely
DENSE_LIMIT = 600


def nested_dissection_order(a: sp.spmatrix) -> np.ndarray | None:
    """Fill-reducing permutation of ``a`` from METIS, or None if unavailable."""
    if pymetis is None:
        return None
    g = (abs(a) + abs(a.T)).tocsr()
    g.setdiag(0)
    g.eliminate_zeros()
    g.sort_indices()
    if hasattr(pymetis, "CSRAdjacency"):
        perm, _ = pymetis.nested_dissection(adjacency=pymetis.CSRAdjacency(g.indptr, g.indices))
    else:  # pragma: no cover - older pymetis
        perm, _ = pymetis.nested_dissection(xadj=g.indptr, adjncy=g.indices)
    return np.asarray(perm, dtype=np.int64)


class ShiftInvert:
    """LU factorization of ``A - sigma*I`` with solves for ``N`` and ``H``.

    Parameters
    ----------
    a : sparse matrix
        Square complex matrix.
    sigma : complex
        Shift.
    ordering : {'auto', 'metis', 'colamd'}
        Fill-reducing ordering; 'auto' means METIS when available.
    """

    def __init__(self, a: sp.spmatrix, sigma: complex, ordering: str = "auto"):
        n = a.shape[0]
        self.shape = a.shape
        self.sigma = sigma
        b = (a - sigma * sp.identity(n, dtype=complex, format="csr")).tocsr()
        perm = None
        if ordering in ("auto", "metis"):
            perm = nested_dissection_order(b)
            if perm is None and ordering == "metis":
                raise RuntimeError("pymetis is not installed")
        if perm is not None:
            self.perm = perm
            bp = b[perm][:, perm].tocsc()
            self.lu = sla.splu(
                bp, permc_spec="NATURAL", diag_pivot_thresh=0.01, options=dict(SymmetricMode=True)
            )
        else:
            self.perm = None
            self.lu = sla.splu(b.tocsc(), permc_spec="COLAMD")
        if log.isEnabledFor(logging.DEBUG):
            # .L and .U build full copies of the factors
            log.debug("LU n=%d nnz(L+U)=%d", n, self.lu.L.nnz + self.lu.U.nnz)

    def solve(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        """Solve ``(A - sigma I) x = rhs`` (``trans='H'``: conjugate transpose)."""
        rhs = np.asarray(rhs, dtype=complex)
        if self.perm is None:
            return self.lu.solve(rhs, trans=trans)
        x = np.empty_like(rhs)
        x[self.perm] = self.lu.solve(rhs[self.perm], trans=trans)
        return x

    def operator(self, trans: str = "N") -> sla.LinearOperator:
        return sla.LinearOperator(self.shape, matvec=lambda v: self.solve(v, trans), dtype=complex)


def eigs_near(
    a: sp.spmatrix,
    k: int,
    sigma: float,
    *,
    left: bool = False,
    solver: ShiftInvert | None = None,
    maxiter: int | None = None,
    tol: float = 0.0,
    ordering: str = "auto",
) -> tuple[np.ndarray, np.ndarray, ShiftInvert | None]:
    """Eigenpairs of ``a`` (or ``a^H`` if ``left``) nearest to ``sigma``.

    Small matrices are diagonalized densely. Returns eigenvalues of ``a``
    (conjugated back when ``left``), eigenvectors as columns, and the
    factorization so callers can reuse it.
    """
    n = a.shape[0]
    k = max(1, min(k, n))
    if n <= DENSE_LIMIT:
        dense = a.toarray()
        if left:
            dense = dense.conj().T
        vals, vecs = sl.eig(dense)
        order = np.argsort(np.abs(vals - sigma))[:k]
        vals, vecs = vals[order], vecs[:, order]
        return (vals.conj() if left else vals), vecs, solver
    if k >= n - 1:
        raise ValueError(f"requested {k} eigenpairs of a {n}x{n} matrix; too many for ARPACK")
    if solver is None:
        solver = ShiftInvert(a, sigma, ordering=ordering)
    op = a.conj().T.tocsr() if left else a
    try:
        vals, vecs = sla.eigs(
            op,
            k=k,
            sigma=sigma,
            OPinv=solver.operator("H" if left else "N"),
            which="LM",
            maxiter=maxiter,
            tol=tol,
        )
    except sla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"ARPACK did not converge ({len(exc.eigenvalues)} of {k} eigenvalues)") from exc
    order = np.argsort(np.abs(vals - sigma))
    vals, vecs = vals[order], vecs[:, order]
    return (vals.conj() if left else vals), vecs, solver
