"""Mean-field and second-order-cumulant semiclassics in the thermodynamic limit.

Scaled variables: ``a`` and ``a†`` are divided by √N, second moments
and ``n`` by N, spins by N. In these units the equations of motion do not
depend on N.

Two flows are implemented:

* one-photon-loss mean field in ``(X, Y, n, jx, jy, jz)`` with
  ``X = a² + a†²`` and ``Y = a² - a†²``;
* the second-order cumulant closure with one- and two-photon loss in
  ``(a, a†, a², a†², n, jx, jy, jz)``.

Spin precession follows the ``∂t jx = -2 ωa jy`` form used throughout
the semiclassical literature on this model. The Hamiltonian in
:mod:`d2d.hilbert` (``(ωa/2) Jz`` with doubled spins) produces ``-ωa jy``,
so semiclassics at ``ωa`` describe the quantum model at ``2 ωa``.

Jacobians are derived by hand from the RHS below and checked against
central finite differences in the tests. Both flows are polynomial, so
the Jacobian is taken with every moment (including ``a†`` and ``a†²``)
as an independent complex variable.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .hilbert import ModelParams

log = logging.getLogger(__name__)

STABILITY_TOL = 1e-9
BRANCHES = ("normal", "superradiant-upper", "superradiant-lower")
MODELS = ("mf-one-loss", "cumulant")


@dataclasses.dataclass(frozen=True)
class SemiclassicalState:
    """Scaled moments ``(⟨a⟩, ⟨a†⟩, ⟨a²⟩, ⟨a†²⟩, ⟨n⟩, jx, jy, jz)``.

    Fields are complex so the same type carries time derivatives and
    independent-variable perturbations. Physical states have
    ``a_dag = conj(a)``, ``a_dag2 = conj(a2)`` and real ``n`` and spins.
    """

    a: complex = 0.0
    a_dag: complex = 0.0
    a2: complex = 0.0
    a_dag2: complex = 0.0
    n: complex = 0.0
    jx: complex = 0.0
    jy: complex = 0.0
    jz: complex = -1.0

    @classmethod
    def physical(cls, a=0.0, a2=0.0, n=0.0, jx=0.0, jy=0.0, jz=-1.0) -> "SemiclassicalState":
        """Build a physical state, filling in the conjugate moments."""
        return cls(complex(a), complex(a).conjugate(), complex(a2), complex(a2).conjugate(), n, jx, jy, jz)

    @classmethod
    def from_xy(cls, X, Y, n, jx, jy, jz) -> "SemiclassicalState":
        """State with zero first moments from the quadrature pair ``(X, Y)``."""
        return cls(0.0, 0.0, 0.5 * (X + Y), 0.5 * (X - Y), n, jx, jy, jz)

    @classmethod
    def from_vector(cls, z: Sequence[complex]) -> "SemiclassicalState":
        return cls(*(complex(v) for v in z))

    @classmethod
    def from_real(cls, x: Sequence[float]) -> "SemiclassicalState":
        """Inverse of :meth:`to_real`."""
        ar, ai, br, bi, n, jx, jy, jz = (float(v) for v in x)
        return cls.physical(ar + 1j * ai, br + 1j * bi, n, jx, jy, jz)

    def to_vector(self) -> np.ndarray:
        return np.array([self.a, self.a_dag, self.a2, self.a_dag2, self.n, self.jx, self.jy, self.jz], dtype=complex)

    def to_real(self) -> np.ndarray:
        """``(Re a, Im a, Re a², Im a², n, jx, jy, jz)``."""
        return np.array(
            [self.a.real, self.a.imag, self.a2.real, self.a2.imag,
             np.real(self.n), np.real(self.jx), np.real(self.jy), np.real(self.jz)]
        )

    def to_xy(self) -> np.ndarray:
        """``(X, Y, n, jx, jy, jz)``."""
        return np.array([self.X, self.Y, self.n, self.jx, self.jy, self.jz], dtype=complex)

    @property
    def X(self) -> complex:
        return self.a2 + self.a_dag2

    @property
    def Y(self) -> complex:
        return self.a2 - self.a_dag2

    @property
    def spin_length(self) -> float:
        return float(np.sqrt(abs(self.jx) ** 2 + abs(self.jy) ** 2 + abs(self.jz) ** 2))

    def is_physical(self, tol: float = 1e-8) -> bool:
        """Conjugation structure and the moment bound ``|⟨a⟩|² ≤ ⟨n⟩``."""
        conj_ok = abs(self.a_dag - np.conj(self.a)) < tol and abs(self.a_dag2 - np.conj(self.a2)) < tol
        real_ok = all(abs(np.imag(v)) < tol for v in (self.n, self.jx, self.jy, self.jz))
        return bool(conj_ok and real_ok and np.real(self.n) > -tol and abs(self.a) ** 2 <= np.real(self.n) + tol)


@dataclasses.dataclass
class FixedPoint:
    """A semiclassical steady state with its linear stability.

    ``family`` is ``'symmetric'`` for roots with ``⟨a⟩ = 0`` and
    ``'broken'`` for roots with ``⟨a⟩ ≠ 0`` (cumulant model only).
    """

    state: SemiclassicalState
    branch: str
    residual: float
    bogoliubov_spectrum: np.ndarray
    stable: bool
    model: str = "cumulant"
    family: str = "symmetric"

    @property
    def max_re(self) -> float:
        return float(np.max(self.bogoliubov_spectrum.real))


# ---------------------------------------------------------------- flows


def _mf_vec(y: np.ndarray, p: ModelParams) -> np.ndarray:
    X, Y, n, jx, jy, jz = y
    k1, wc, wa, lam = p.kappa1, p.omega_c, p.omega_a, p.lam
    return np.array([
        -k1 * X - 2j * wc * Y,
        -k1 * Y - 2j * wc * X - 8j * lam * jx * n,
        -k1 * n + 2j * lam * jx * Y,
        -2 * wa * jy,
        2 * wa * jx - 2 * lam * jz * X,
        2 * lam * jy * X,
    ], dtype=complex)


def _mf_jac(y: np.ndarray, p: ModelParams) -> np.ndarray:
    X, Y, n, jx, jy, jz = y
    k1, wc, wa, lam = p.kappa1, p.omega_c, p.omega_a, p.lam
    J = np.zeros((6, 6), dtype=complex)
    J[0, 0], J[0, 1] = -k1, -2j * wc
    J[1, 0], J[1, 1], J[1, 2], J[1, 3] = -2j * wc, -k1, -8j * lam * jx, -8j * lam * n
    J[2, 1], J[2, 2], J[2, 3] = 2j * lam * jx, -k1, 2j * lam * Y
    J[3, 4] = -2 * wa
    J[4, 0], J[4, 3], J[4, 5] = -2 * lam * jz, 2 * wa, -2 * lam * X
    J[5, 0], J[5, 4] = 2 * lam * jy, 2 * lam * X
    return J


def _cumulant_vec(z: np.ndarray, p: ModelParams) -> np.ndarray:
    a, ad, a2, ad2, n, jx, jy, jz = z
    k1, k2, wc, wa, lam = p.kappa1, p.kappa2, p.omega_c, p.omega_a, p.lam
    X = a2 + ad2
    return np.array([
        -(k1 / 2 + 1j * wc) * a - 2j * lam * jx * ad - k2 * (2 * n * a + a2 * ad - 2 * a**2 * ad),
        -(k1 / 2 - 1j * wc) * ad + 2j * lam * jx * a - k2 * (2 * n * ad + ad2 * a - 2 * ad**2 * a),
        -(k1 + 2j * wc) * a2 - 4j * lam * jx * n - 2 * k2 * (3 * n * a2 - 2 * ad * a**3),
        -(k1 - 2j * wc) * ad2 + 4j * lam * jx * n - 2 * k2 * (3 * n * ad2 - 2 * a * ad**3),
        2j * lam * jx * (a2 - ad2) - k1 * n - k2 * (4 * n**2 - 4 * ad**2 * a**2 + 2 * ad2 * a2),
        -2 * wa * jy,
        2 * wa * jx - 2 * lam * jz * X,
        2 * lam * jy * X,
    ], dtype=complex)


def _cumulant_jac(z: np.ndarray, p: ModelParams) -> np.ndarray:
    a, ad, a2, ad2, n, jx, jy, jz = z
    k1, k2, wc, wa, lam = p.kappa1, p.kappa2, p.omega_c, p.omega_a, p.lam
    X = a2 + ad2
    J = np.zeros((8, 8), dtype=complex)
    # ⟨a⟩
    J[0, 0] = -(k1 / 2 + 1j * wc) - k2 * (2 * n - 4 * a * ad)
    J[0, 1] = -2j * lam * jx - k2 * (a2 - 2 * a**2)
    J[0, 2] = -k2 * ad
    J[0, 4] = -2 * k2 * a
    J[0, 5] = -2j * lam * ad
    # ⟨a†⟩
    J[1, 0] = 2j * lam * jx - k2 * (ad2 - 2 * ad**2)
    J[1, 1] = -(k1 / 2 - 1j * wc) - k2 * (2 * n - 4 * a * ad)
    J[1, 3] = -k2 * a
    J[1, 4] = -2 * k2 * ad
    J[1, 5] = 2j * lam * a
    # ⟨a²⟩
    J[2, 0] = 12 * k2 * ad * a**2
    J[2, 1] = 4 * k2 * a**3
    J[2, 2] = -(k1 + 2j * wc) - 6 * k2 * n
    J[2, 4] = -4j * lam * jx - 6 * k2 * a2
    J[2, 5] = -4j * lam * n
    # ⟨a†²⟩
    J[3, 0] = 4 * k2 * ad**3
    J[3, 1] = 12 * k2 * a * ad**2
    J[3, 3] = -(k1 - 2j * wc) - 6 * k2 * n
    J[3, 4] = 4j * lam * jx - 6 * k2 * ad2
    J[3, 5] = 4j * lam * n
    # ⟨n⟩
    J[4, 0] = 8 * k2 * ad**2 * a
    J[4, 1] = 8 * k2 * ad * a**2
    J[4, 2] = 2j * lam * jx - 2 * k2 * ad2
    J[4, 3] = -2j * lam * jx - 2 * k2 * a2
    J[4, 4] = -k1 - 8 * k2 * n
    J[4, 5] = 2j * lam * (a2 - ad2)
    # spins
    J[5, 6] = -2 * wa
    J[6, 2] = J[6, 3] = -2 * lam * jz
    J[6, 5] = 2 * wa
    J[6, 7] = -2 * lam * X
    J[7, 2] = J[7, 3] = 2 * lam * jy
    J[7, 6] = 2 * lam * X
    return J


def mf_rhs_xy(y: Sequence[complex], params: ModelParams) -> np.ndarray:
    """One-photon-loss mean-field RHS on ``(X, Y, n, jx, jy, jz)``."""
    return _mf_vec(np.asarray(y, dtype=complex), params)


def mf_rhs_one_loss(s: SemiclassicalState, params: ModelParams) -> SemiclassicalState:
    """Mean-field time derivatives (κ2 ignored, first moments frozen at zero).

    The derivative of ``(X, Y)`` is returned through ``a2`` and ``a_dag2``
    of the result, ``d a² = (dX + dY)/2`` and ``d a†² = (dX - dY)/2``.
    """
    dX, dY, dn, djx, djy, djz = _mf_vec(s.to_xy(), params)
    return SemiclassicalState.from_xy(dX, dY, dn, djx, djy, djz)


def cumulant_rhs(s: SemiclassicalState, params: ModelParams) -> SemiclassicalState:
    """Second-order cumulant time derivatives, thermodynamic limit."""
    return SemiclassicalState.from_vector(_cumulant_vec(s.to_vector(), params))


def mf_jacobian(s: SemiclassicalState, params: ModelParams) -> np.ndarray:
    """Analytic 6x6 Jacobian of the MF flow in ``(X, Y, n, jx, jy, jz)``."""
    return _mf_jac(s.to_xy(), params)


def cumulant_jacobian(s: SemiclassicalState, params: ModelParams) -> np.ndarray:
    """Analytic 8x8 Jacobian of the cumulant flow in ``(a, a†, a², a†², n, jx, jy, jz)``."""
    return _cumulant_jac(s.to_vector(), params)


def finite_difference_jacobian(model: str, s: SemiclassicalState, params: ModelParams, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian in the same variables as the analytic one."""
    if model == "cumulant":
        f, z = _cumulant_vec, s.to_vector()
    elif model == "mf-one-loss":
        f, z = _mf_vec, s.to_xy()
    else:
        raise ValueError(f"unknown model {model!r}")
    J = np.empty((len(z), len(z)), dtype=complex)
    for k in range(len(z)):
        e = np.zeros(len(z), dtype=complex)
        e[k] = h
        J[:, k] = (f(z + e, params) - f(z - e, params)) / (2 * h)
    return J


# ---------------------------------------------------------- mean field


def critical_coupling(params: ModelParams) -> float:
    """Mean-field threshold ``λc = √(κ1² + 4ωc²) / 4``."""
    if params.omega_c <= 0:
        raise ValueError("omega_c must be positive")
    return 0.25 * float(np.sqrt(params.kappa1**2 + 4 * params.omega_c**2))


def _stability(J: np.ndarray) -> tuple[np.ndarray, bool]:
    ev = np.linalg.eigvals(J)
    return ev, bool(np.max(ev.real) < STABILITY_TOL)


def mf_fixed_points(params: ModelParams) -> list[FixedPoint]:
    """Closed-form MF fixed points with one-photon loss.

    Always contains the normal state. Above ``λc`` the superradiant
    state is added as its two Z4 partners ``jx = ±λc/λ`` (they share ⟨n⟩
    and both carry the label ``superradiant-upper``).
    """
    out = []
    normal = SemiclassicalState.physical()
    out.append(_make_fp(normal, "normal", "mf-one-loss", params))
    lc = critical_coupling(params)
    if params.lam > lc:
        r = lc / params.lam
        jz = -np.sqrt(1.0 - r * r)
        for jx in (r, -r):
            n = -(params.omega_a / params.omega_c) * jx * jx / jz
            X = (params.omega_a / params.lam) * jx / jz
            Y = -(params.kappa1 / (2j * params.omega_c)) * X
            s = SemiclassicalState.from_xy(X, Y, n, jx, 0.0, jz)
            out.append(_make_fp(s, "superradiant-upper", "mf-one-loss", params))
    return out


def _residual(model: str, s: SemiclassicalState, params: ModelParams) -> float:
    if model == "mf-one-loss":
        return float(np.max(np.abs(_mf_vec(s.to_xy(), params))))
    return float(np.max(np.abs(_cumulant_vec(s.to_vector(), params))))


def _make_fp(s: SemiclassicalState, branch: str, model: str, params: ModelParams, family: str = "symmetric") -> FixedPoint:
    J = mf_jacobian(s, params) if model == "mf-one-loss" else cumulant_jacobian(s, params)
    ev, stable = _stability(J)
    return FixedPoint(s, branch, _residual(model, s, params), ev, stable, model, family)


def bogoliubov(fp: FixedPoint, params: ModelParams, model: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stability matrix at ``fp`` and its eigenvalues.

    Raises
    ------
    ValueError
        If ``fp`` is not a fixed point of the chosen flow (residual > 1e-8).
    """
    model = model or fp.model
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    res = _residual(model, fp.state, params)
    if res > 1e-8:
        raise ValueError(f"not a fixed point of {model}: residual {res:.3e}")
    J = mf_jacobian(fp.state, params) if model == "mf-one-loss" else cumulant_jacobian(fp.state, params)
    return J, np.linalg.eigvals(J)


# ---------------------------------------------------- cumulant roots

# real parametrization: x = (Re a, Im a, Re a², Im a², n, jx, jy, jz)
_T = np.zeros((8, 8), dtype=complex)
_T[0, 0], _T[1, 0], _T[0, 1], _T[1, 1] = 1, 1, 1j, -1j
_T[2, 2], _T[3, 2], _T[2, 3], _T[3, 3] = 1, 1, 1j, -1j
_T[4, 4] = _T[5, 5] = _T[6, 6] = _T[7, 7] = 1


def _z_of_x(x: np.ndarray) -> np.ndarray:
    return _T @ x.astype(complex)


def _real_system(x: np.ndarray, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Residual and Jacobian of the real root-finding system.

    Rows: Re/Im of the ⟨a⟩ and ⟨a²⟩ equations, the ⟨n⟩, jx and jy
    equations, and the sphere constraint in place of the (redundant at a
    fixed point) jz equation.
    """
    z = _z_of_x(x)
    f = _cumulant_vec(z, p)
    Jz = _cumulant_jac(z, p) @ _T
    F = np.array([f[0].real, f[0].imag, f[2].real, f[2].imag, f[4].real, f[5].real, f[6].real,
                  x[5] ** 2 + x[6] ** 2 + x[7] ** 2 - 1.0])
    J = np.vstack([Jz[0].real, Jz[0].imag, Jz[2].real, Jz[2].imag, Jz[4].real, Jz[5].real, Jz[6].real,
                   np.array([0, 0, 0, 0, 0, 2 * x[5], 2 * x[6], 2 * x[7]])])
    return F, J


def _dF_dlam(x: np.ndarray, p: ModelParams) -> np.ndarray:
    # every equation is affine in λ
    z = _z_of_x(x)
    df = _cumulant_vec(z, p.replace(lam=1.0)) - _cumulant_vec(z, p.replace(lam=0.0))
    return np.array([df[0].real, df[0].imag, df[2].real, df[2].imag, df[4].real, df[5].real, df[6].real, 0.0])


def _newton(x0: np.ndarray, p: ModelParams, tol: float, max_iter: int) -> tuple[np.ndarray, float, bool]:
    x = np.array(x0, dtype=float)
    F, J = _real_system(x, p)
    norm = np.max(np.abs(F))
    for _ in range(max_iter):
        if norm < tol:
            return x, norm, True
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, F, rcond=None)[0]
        alpha = 1.0
        while alpha > 1e-4:
            xt = x - alpha * step
            Ft, Jt = _real_system(xt, p)
            nt = np.max(np.abs(Ft))
            if np.isfinite(nt) and nt < norm:
                break
            alpha *= 0.5
        else:
            return x, norm, False
        x, F, J, norm = xt, Ft, Jt, nt
    return x, norm, norm < tol


def _z4(x: np.ndarray) -> np.ndarray:
    # Π acts as a → -i a, a² → -a², jx → -jx, jy → -jy
    return np.array([x[1], -x[0], -x[2], -x[3], x[4], -x[5], -x[6], x[7]])


def canonical_real(x: np.ndarray) -> np.ndarray:
    """Representative of the Z4 orbit: jx ≥ 0, then largest Re a."""
    orbit = [x]
    for _ in range(3):
        orbit.append(_z4(orbit[-1]))
    return max(orbit, key=lambda y: (round(y[5], 9), round(y[0], 9), round(y[1], 9)))


@dataclasses.dataclass
class RootOptions:
    """Controls for :func:`find_fixed_points_cumulant`.

    Attributes
    ----------
    family : {'symmetric', 'broken', 'all'}
        Which root family to keep: ⟨a⟩ = 0, ⟨a⟩ ≠ 0, or both.
    tol : float
        Required max-norm of the full RHS at a root.
    dedup_tol : float
        Roots closer than this (after Z4 canonicalization) are merged.
    n_grid, jx_grid : int
        Size of the default (n, jx) seed grid.
    n_max : float, optional
        Upper end of the n seed range; default ``max(2, λ/κ2)``.
    """

    family: str = "symmetric"
    tol: float = 1e-10
    dedup_tol: float = 1e-6
    max_iter: int = 100
    n_grid: int = 9
    jx_grid: int = 9
    n_max: float | None = None


class RootList(list):
    """List of FixedPoint that also records per-seed Newton failures."""

    failures: list

    def __init__(self, items=(), failures=None):
        super().__init__(items)
        self.failures = failures or []


def default_seeds(params: ModelParams, options: RootOptions | None = None) -> list[SemiclassicalState]:
    """Normal state, MF closed forms and an (n, jx) grid.

    Grid seeds solve the ⟨a²⟩ equation at ⟨a⟩ = 0 for given (n, jx) on the
    lower hemisphere. For the broken family each grid point also gets
    coherent-like seeds ``a = √n e^{iθ}``, ``a² = a²``.
    """
    opts = options or RootOptions()
    p = params
    seeds = [SemiclassicalState.physical()]
    for fp in mf_fixed_points(p.replace(kappa2=0.0))[1:]:
        seeds.append(fp.state)
    n_max = opts.n_max
    if n_max is None:
        n_max = max(2.0, p.lam / p.kappa2) if p.kappa2 > 0 else 2.0
    for n in np.linspace(0.0, n_max, opts.n_grid)[1:]:
        for jx in np.linspace(-1.0, 1.0, opts.jx_grid)[1:-1]:
            jz = -np.sqrt(1.0 - jx * jx)
            a2 = -4j * p.lam * jx * n / (p.kappa1 + 2j * p.omega_c + 6 * p.kappa2 * n)
            if opts.family in ("symmetric", "all"):
                seeds.append(SemiclassicalState.physical(0.0, a2, n, jx, 0.0, jz))
            if opts.family in ("broken", "all"):
                for theta in np.linspace(0, np.pi / 2, 4, endpoint=False):
                    a = np.sqrt(n) * np.exp(1j * theta)
                    seeds.append(SemiclassicalState.physical(a, a * a, n, jx, 0.0, jz))
    return seeds


def _family(s: SemiclassicalState) -> str:
    return "broken" if abs(s.a) > 1e-8 else "symmetric"


def find_fixed_points_cumulant(
    params: ModelParams, seeds: Iterable[SemiclassicalState] | None = None, options: RootOptions | None = None
) -> RootList:
    """Roots of the cumulant flow by damped Newton from each seed.

    Roots are deduplicated modulo Z4, filtered for physicality (moment
    bound, ``n ≥ 0``) and for the spin-inverted vacuum, and labelled by
    ⟨n⟩ within each family: the largest is ``superradiant-upper``, the
    rest ``superradiant-lower``. The normal root is always present.
    """
    opts = options or RootOptions()
    if opts.family not in ("symmetric", "broken", "all"):
        raise ValueError(f"unknown family {opts.family!r}")
    seeds = list(seeds) if seeds is not None else default_seeds(params, opts)
    seeds.insert(0, SemiclassicalState.physical())
    roots: list[np.ndarray] = []
    failures = []
    for i, seed in enumerate(seeds):
        x, norm, ok = _newton(seed.to_real(), params, opts.tol * 1e-2, opts.max_iter)
        if ok and 0 < x[0] ** 2 + x[1] ** 2 < 1e-4 * max(x[4], 1.0):
            # the ⟨a⟩ block is singular on symmetric roots, so the residual
            # grows only like |a|³ off them; polish inside the a = 0 subspace
            xs = x.copy()
            xs[:2] = 0.0
            xs, _, ok_s = _newton(xs, params, opts.tol * 1e-2, opts.max_iter)
            if ok_s:
                x = xs
        s = SemiclassicalState.from_real(x)
        res = _residual("cumulant", s, params)
        if not ok or res > opts.tol:
            failures.append((i, res))
            continue
        if np.real(s.n) < 1e-12 and np.real(s.jz) > 0:
            log.debug("dropping spin-inverted vacuum root")
            continue
        if not s.is_physical():
            log.debug("dropping unphysical root n=%.4g |a|^2=%.4g", s.n.real, abs(s.a) ** 2)
            continue
        fam = _family(s)
        if opts.family != "all" and fam != opts.family:
            continue
        xc = canonical_real(x)
        if all(np.max(np.abs(xc - y)) > opts.dedup_tol for y in roots):
            roots.append(xc)
    out = RootList(failures=failures)
    states = [SemiclassicalState.from_real(x) for x in roots]
    normal = [s for s in states if np.real(s.n) < 1e-9 and abs(s.a) < 1e-9]
    if not normal:
        normal = [SemiclassicalState.physical()]
    out.append(_make_fp(normal[0], "normal", "cumulant", params))
    for fam in ("broken", "symmetric"):
        sr = sorted((s for s in states if np.real(s.n) >= 1e-9 and _family(s) == fam), key=lambda s: -np.real(s.n))
        for k, s in enumerate(sr):
            out.append(_make_fp(s, BRANCHES[1] if k == 0 else BRANCHES[2], "cumulant", params, fam))
    return out


# --------------------------------------------------------- continuation


@dataclasses.dataclass
class BranchPath:
    """Points ``(λ, x)`` along a pseudo-arclength continuation."""

    lam: np.ndarray
    x: np.ndarray
    fold_lam: float | None


def trace_branch(
    params: ModelParams,
    start: SemiclassicalState,
    ds: float = 0.02,
    direction: int = -1,
    max_steps: int = 2000,
    lam_bounds: tuple[float, float] = (0.0, 10.0),
    stop_at_fold: bool = True,
) -> BranchPath:
    """Pseudo-arclength continuation of a cumulant root in λ.

    Starts at ``start`` (a root at ``params.lam``) and walks in the
    direction of decreasing (``direction=-1``) or increasing λ. A fold is
    a sign change of dλ/ds; its position is refined by a parabola through
    the three bracketing points.
    """
    x, norm, ok = _newton(start.to_real(), params, 1e-13, 100)
    if not ok:
        raise ValueError("start is not a root")
    y = np.append(x, params.lam)

    def system(yv):
        p = params.replace(lam=float(max(yv[8], 0.0)))
        F, J = _real_system(yv[:8], p)
        return F, np.hstack([J, _dF_dlam(yv[:8], p)[:, None]])

    def tangent(yv, prev):
        _, A = system(yv)
        t = np.linalg.svd(A)[2][-1]
        if prev is None:
            return t * np.sign(t[8] * direction or 1.0)
        return t if t @ prev >= 0 else -t

    t = tangent(y, None)
    lams, xs = [y[8]], [y[:8].copy()]
    fold = None
    h = ds
    for _ in range(max_steps):
        pred = y + h * t
        yc = pred.copy()
        ok = False
        for _ in range(30):
            F, A = system(yc)
            G = np.append(F, t @ (yc - pred))
            if np.max(np.abs(G)) < 1e-12:
                ok = True
                break
            M = np.vstack([A, t])
            yc = yc - np.linalg.solve(M, G)
        if not ok:
            h *= 0.5
            if h < 1e-6:
                break
            continue
        t_new = tangent(yc, t)
        crossed = t_new[8] * t[8] < 0
        y, t = yc, t_new
        lams.append(y[8])
        xs.append(y[:8].copy())
        if crossed and fold is None:
            l3 = np.array(lams[-3:]) if len(lams) >= 3 else np.array(lams)
            fold = float(_parabola_extremum(l3))
            if stop_at_fold:
                break
        if not (lam_bounds[0] <= y[8] <= lam_bounds[1]):
            break
        h = min(ds, h * 1.5)
    return BranchPath(np.array(lams), np.array(xs), fold)


def _parabola_extremum(vals: np.ndarray) -> float:
    """Extremum of the parabola through equally weighted consecutive samples."""
    if len(vals) < 3:
        return float(vals.min())
    # parametrize by position along the path (approximately equal arclength)
    s = np.arange(3, dtype=float)
    c = np.polyfit(s, vals[-3:], 2)
    if c[0] == 0:
        return float(vals.min())
    s0 = -c[1] / (2 * c[0])
    return float(np.polyval(c, s0))


def locate_fold(params: ModelParams, family: str = "symmetric", lam_probe: float | None = None, ds: float = 0.01) -> float | None:
    """λ at which the superradiant pair of ``family`` is born.

    Finds the upper root at ``lam_probe`` (default ``max(1.3, 2.5 λc)``)
    and continues it to lower λ until the fold. Returns None if no upper
    root exists at the probe.
    """
    probe = lam_probe if lam_probe is not None else max(1.3, 2.5 * critical_coupling(params))
    p = params.replace(lam=probe)
    roots = find_fixed_points_cumulant(p, options=RootOptions(family=family))
    upper = [fp for fp in roots if fp.branch == "superradiant-upper" and fp.family == family]
    if not upper:
        return None
    path = trace_branch(p, upper[0].state, ds=ds, direction=-1)
    return path.fold_lam


# ---------------------------------------------------------------- sweep


@dataclasses.dataclass
class SweepRow:
    lam: float
    branch: str
    family: str
    n: float
    jx: float
    jy: float
    jz: float
    max_re: float
    stable: bool


@dataclasses.dataclass
class SweepResult:
    """Branch table of a λ sweep.

    ``births``/``deaths`` map a branch key ``'<family>/<branch>'`` to the
    first/last grid λ where it was found; ``gaps`` lists ``(key, last good
    λ)`` for branches that vanished and later reappeared.
    """

    model: str
    rows: list[SweepRow]
    births: dict
    deaths: dict
    gaps: list
    folds: dict = dataclasses.field(default_factory=dict)

    def at(self, lam: float) -> list[SweepRow]:
        return [r for r in self.rows if abs(r.lam - lam) < 1e-12]


def _key(fp: FixedPoint) -> str:
    return f"{fp.family}/{fp.branch}"


def sweep(
    params_base: ModelParams,
    lambda_grid: Sequence[float],
    model: str = "cumulant",
    options: RootOptions | None = None,
    refine_folds: bool = False,
) -> SweepResult:
    """Fixed points and stability along a sorted λ grid.

    For the cumulant model the roots at λᵢ seed Newton at λᵢ₊₁ together
    with the default seeds. With ``refine_folds`` each newly born
    superradiant branch is continued back to its fold by pseudo-arclength.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("lambda_grid must be a nonempty 1D sequence")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("lambda_grid must be strictly increasing")
    if model not in ("mf", "mf-one-loss", "cumulant"):
        raise ValueError(f"unknown model {model!r}")
    opts = options or RootOptions()
    rows: list[SweepRow] = []
    presence: dict[str, list[bool]] = {}
    folds: dict[str, float | None] = {}
    prev: list[SemiclassicalState] = []
    for i, lam in enumerate(grid):
        p = params_base.replace(lam=float(lam))
        if model == "cumulant":
            seeds = default_seeds(p, opts) + prev
            fps = find_fixed_points_cumulant(p, seeds, opts)
            prev = [fp.state for fp in fps]
        else:
            fps = mf_fixed_points(p)[:2]
        keys = set()
        for fp in fps:
            key = _key(fp)
            keys.add(key)
            s = fp.state
            rows.append(SweepRow(float(lam), fp.branch, fp.family, float(np.real(s.n)), float(np.real(s.jx)),
                                 float(np.real(s.jy)), float(np.real(s.jz)), fp.max_re, fp.stable))
            if key not in presence:
                presence[key] = [False] * i
                if refine_folds and model == "cumulant" and fp.branch == "superradiant-upper" and i > 0:
                    try:
                        folds[key] = trace_branch(p, s, ds=0.01, direction=-1).fold_lam
                    except ValueError:
                        folds[key] = None
        for key in presence:
            if len(presence[key]) < i + 1:
                presence[key].append(key in keys)
    births, deaths, gaps = {}, {}, []
    for key, flags in presence.items():
        idx = np.flatnonzero(flags)
        births[key] = float(grid[idx[0]])
        if idx[-1] < len(grid) - 1:
            deaths[key] = float(grid[idx[-1]])
        for a, b in zip(idx[:-1], idx[1:]):
            if b > a + 1:
                gaps.append((key, float(grid[a])))
    return SweepResult("cumulant" if model == "cumulant" else "mf-one-loss", rows, births, deaths, gaps, folds)


# ------------------------------------------------------------ integration


def integrate(
    model: str,
    s0: SemiclassicalState,
    params: ModelParams,
    t_final: float,
    t_eval: Sequence[float] | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "DOP853",
):
    """Integrate a semiclassical flow from a physical state.

    Returns ``(t, states)`` with ``states`` a list of SemiclassicalState.
    The flows are integrated in real variables: ``(Re a, Im a, Re a²,
    Im a², n, jx, jy, jz)`` for the cumulant model, ``(X, Im Y, n, jx, jy,
    jz)`` for the mean field.
    """
    if model == "cumulant":
        def f(_, x):
            d = _cumulant_vec(_z_of_x(x), params)
            return [d[0].real, d[0].imag, d[2].real, d[2].imag, d[4].real, d[5].real, d[6].real, d[7].real]

        x0 = s0.to_real()
        to_state = SemiclassicalState.from_real
    elif model == "mf-one-loss":
        def f(_, x):
            d = _mf_vec(np.array([x[0], 1j * x[1], x[2], x[3], x[4], x[5]]), params)
            return [d[0].real, d[1].imag, d[2].real, d[3].real, d[4].real, d[5].real]

        y = s0.to_xy()
        x0 = np.array([y[0].real, y[1].imag, y[2].real, y[3].real, y[4].real, y[5].real])

        def to_state(x):
            return SemiclassicalState.from_xy(x[0], 1j * x[1], x[2], x[3], x[4], x[5])
    else:
        raise ValueError(f"unknown model {model!r}")
    sol = solve_ivp(f, (0.0, t_final), x0, method=method, rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    return sol.t, [to_state(sol.y[:, k]) for k in range(sol.y.shape[1])]


# ------------------------------------------------------------ calibration


@dataclasses.dataclass
class CalibrationRow:
    kappa1: float
    kappa2: float
    fold_broken: float | None
    fold_symmetric: float | None
    score: float


def calibrate(
    params_base: ModelParams,
    kappa1_values: Sequence[float],
    kappa2_values: Sequence[float],
    targets: tuple[float, float] = (0.645, 0.82),
) -> list[CalibrationRow]:
    """Exploratory scan of loss rates against two target onsets.

    For each (κ1, κ2) the folds of the broken and symmetric families are
    located and scored by the summed squared deviation from ``targets``
    (``inf`` when a fold is missing). Rows come back sorted by score.
    This is a best-effort recovery of unstated rates, not a fit with
    error bars.
    """
    rows = []
    for k1 in kappa1_values:
        for k2 in kappa2_values:
            p = params_base.replace(kappa1=float(k1), kappa2=float(k2))
            fb = locate_fold(p, "broken")
            fs = locate_fold(p, "symmetric")
            score = float("inf")
            if fb is not None and fs is not None:
                score = (fb - targets[0]) ** 2 + (fs - targets[1]) ** 2
            rows.append(CalibrationRow(float(k1), float(k2), fb, fs, score))
    return sorted(rows, key=lambda r: r.score)
