"""Photon-mode observables: partial trace, P(n), lobe fits, Wigner functions.

Wigner convention: ``α = (x + i p)/√2`` and ``∫∫ W dx dp = 1``, so the
vacuum is ``W = exp(-x² - p²)/π``. For a Fock-basis density matrix

    W(x, p) = (1/π) Σ_{m,n} ρ_mn (-1)^n ⟨n|D(-2α)|m⟩,

which follows from ``D(α) P D(α)† = P D(-2α)``, where ``P = (-1)^{a†a}``.
The displaced-Fock elements are evaluated with a normalized Laguerre
recurrence. Its starting value carries the prefactor
``|β|^d e^{-|β|²/2}/√d!`` computed in log space, so nothing overflows at
large cutoffs.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import maximum_filter
from scipy.optimize import curve_fit

from .errors import InvalidDimensionError, NoLobeDetected
from .hilbert import HilbertDims
from .liouvillian import DensityMatrix

log = logging.getLogger(__name__)

WIGNER_CONVENTION = "alpha=(x+ip)/sqrt2; integral W dx dp = 1"
TAIL_WIDTH = 5


class GridTooNarrowWarning(UserWarning):
    """The Wigner function has not decayed at the grid boundary."""


@dataclasses.dataclass
class FockDistribution:
    """Photon-number distribution with truncation metadata.

    Attributes
    ----------
    probabilities : ndarray
        ``P(n)`` for ``n = 0..M-1``.
    clipped : bool
        Whether negative entries were set to zero and P renormalized.
    metadata : dict
        Free-form source information (parameters, N, M).
    """

    probabilities: np.ndarray
    clipped: bool = False
    metadata: dict = dataclasses.field(default_factory=dict)

    @property
    def cutoff(self) -> int:
        return self.probabilities.size

    @property
    def tail_mass(self) -> float:
        """``Σ_{n ≥ M-5} P(n)``, the truncation audit figure."""
        return float(self.probabilities[-TAIL_WIDTH:].sum())

    @property
    def mean(self) -> float:
        return float(np.arange(self.cutoff) @ self.probabilities)

    @property
    def variance(self) -> float:
        n = np.arange(self.cutoff)
        return float(n**2 @ self.probabilities - self.mean**2)


@dataclasses.dataclass
class GaussianFit:
    """``A exp(-(n-μ)²/2σ²)`` fitted to a side lobe of P(n)."""

    mu: float
    sigma: float
    amplitude: float
    rmse: float
    n_min: int
    n_max: int
    n_spins: int | None = None

    @property
    def scaled_mu(self) -> float:
        """``μ/N`` for comparison with the scaled semiclassical ⟨n⟩."""
        if not self.n_spins:
            raise ValueError("n_spins unknown; pass it to fit_superradiant_lobe")
        return self.mu / self.n_spins


@dataclasses.dataclass
class WignerGrid:
    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray  # values[i, j] = W(x_i, p_j)
    convention: str = WIGNER_CONVENTION
    boundary_max: float = 0.0

    @property
    def cell_area(self) -> float:
        return float((self.x_axis[1] - self.x_axis[0]) * (self.p_axis[1] - self.p_axis[0]))

    def integral(self) -> float:
        """Trapezoidal ``∫∫ W dx dp``."""
        return float(np.trapezoid(np.trapezoid(self.values, self.p_axis, axis=1), self.x_axis))

    def marginal_x(self) -> np.ndarray:
        return np.trapezoid(self.values, self.p_axis, axis=1)


def reduce_photon(rho: DensityMatrix | np.ndarray, dims: HilbertDims | None = None) -> DensityMatrix:
    """Partial trace over the spin factor."""
    if isinstance(rho, DensityMatrix):
        data = rho.data
        dims = dims or (rho.dims if isinstance(rho.dims, HilbertDims) else None)
    else:
        data = np.asarray(rho)
    if dims is None:
        raise InvalidDimensionError("dims are required to split the composite space")
    d = dims.total_dim
    if data.shape != (d, d):
        raise InvalidDimensionError(f"rho has shape {data.shape}, expected ({d}, {d})")
    s, m = dims.spin_dim, dims.fock_cutoff
    rho_ph = np.einsum("ijik->jk", data.reshape(s, m, s, m))
    return DensityMatrix(rho_ph, m)


def fock_distribution(rho_ph: DensityMatrix | np.ndarray, metadata: dict | None = None) -> FockDistribution:
    """Diagonal of ρ_ph; negative round-off is clipped and logged."""
    data = rho_ph.data if isinstance(rho_ph, DensityMatrix) else np.asarray(rho_ph)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {data.shape}")
    p = np.real(np.diag(data)).astype(float)
    clipped = bool((p < 0).any())
    if clipped:
        worst = float(p.min())
        level = logging.WARNING if worst < -1e-10 else logging.INFO
        log.log(level, "clipping %d negative P(n) entries (min %.3e) and renormalizing", int((p < 0).sum()), worst)
        p = np.clip(p, 0.0, None)
    total = p.sum()
    if total <= 0:
        raise ValueError("photon distribution has no weight")
    p = p / total
    return FockDistribution(p, clipped, dict(metadata or {}))


def _gauss(n, amplitude, mu, sigma):
    return amplitude * np.exp(-((n - mu) ** 2) / (2.0 * sigma**2))


def fit_superradiant_lobe(
    p: FockDistribution | np.ndarray,
    smoothing: int = 3,
    min_prominence: float = 1e-6,
    n_spins: int | None = None,
) -> GaussianFit:
    """Gaussian fit of the side lobe that follows the vacuum peak.

    The window starts at the first local minimum of the moving-averaged
    P(n) after ``n = 0`` and runs to ``M - 1``.

    Parameters
    ----------
    p : FockDistribution or array
    smoothing : int
        Moving-average width used only to locate the window.
    min_prominence : float
        The lobe must rise above the window minimum by at least this much
        (guards against round-off wiggles in a decaying tail).
    n_spins : int, optional
        Stored on the result for ``scaled_mu``.

    Raises
    ------
    NoLobeDetected
        If P(n) has no side lobe (normal phase).
    """
    if isinstance(p, FockDistribution):
        if n_spins is None:
            n_spins = p.metadata.get("n_spins")
        prob = p.probabilities
    else:
        prob = np.asarray(p, dtype=float)
    m = prob.size
    if m < 4:
        raise NoLobeDetected("distribution too short to contain a lobe")
    w = max(1, int(smoothing))
    kernel = np.ones(w) / w
    smooth = np.convolve(np.pad(prob, (w // 2, w - 1 - w // 2), mode="edge"), kernel, mode="valid")
    n_min = None
    for n in range(1, m - 1):
        if smooth[n] <= smooth[n - 1] and smooth[n + 1] > smooth[n]:
            n_min = n
            break
    if n_min is None or smooth[n_min:].max() - smooth[n_min] < min_prominence:
        raise NoLobeDetected("P(n) decreases monotonically after the vacuum peak")
    n = np.arange(n_min, m, dtype=float)
    y = prob[n_min:]
    peak = int(np.argmax(y))
    weights = np.clip(y - y.min(), 0, None)
    mu0 = n[peak]
    sigma0 = math.sqrt(max(1.0, float(weights @ (n - mu0) ** 2 / max(weights.sum(), 1e-300))))
    try:
        popt, _ = curve_fit(_gauss, n, y, p0=(y[peak], mu0, sigma0), maxfev=10000)
    except RuntimeError as exc:
        raise NoLobeDetected(f"Gaussian fit failed: {exc}") from exc
    amplitude, mu, sigma = float(popt[0]), float(popt[1]), abs(float(popt[2]))
    rmse = float(np.sqrt(np.mean((_gauss(n, amplitude, mu, sigma) - y) ** 2)))
    if amplitude <= 0 or not (n_min <= mu <= m - 1):
        raise NoLobeDetected(f"fitted lobe (A={amplitude:.3g}, mu={mu:.3g}) is outside the window")
    return GaussianFit(mu, sigma, amplitude, rmse, int(n_min), m - 1, n_spins)


def default_wigner_extent(rho_ph: DensityMatrix | np.ndarray, tail: float = 1e-9) -> float:
    """Half-width ``1.2 x_max`` of the default Wigner grid.

    ``x_max = √(2(⟨n⟩ + 3σ_n))``, widened to ``√(2 n_q + 1) + 2.5`` where
    ``n_q`` is the photon number above which P(n) holds less than ``tail``.
    Heavy-tailed distributions would otherwise leak past the boundary. The
    floor of 3.2 keeps the vacuum below 1e-6 at the edge.
    """
    dist = fock_distribution(rho_ph)
    x_max = math.sqrt(2.0 * (dist.mean + 3.0 * math.sqrt(max(dist.variance, 0.0))))
    beyond = np.cumsum(dist.probabilities[::-1])[::-1]
    n_q = int(np.flatnonzero(beyond >= tail)[-1])
    x_tail = math.sqrt(2.0 * n_q + 1.0) + 2.5
    return 1.2 * max(x_max, x_tail, 3.2)


def wigner(
    rho_ph: DensityMatrix | np.ndarray,
    x_axis: np.ndarray | None = None,
    p_axis: np.ndarray | None = None,
    n_points: int = 201,
    extent: float | None = None,
    boundary_tol: float = 1e-6,
) -> WignerGrid:
    """Wigner function of a single-mode density matrix on an (x, p) grid.

    Parameters
    ----------
    rho_ph : DensityMatrix or array
        M x M photon density matrix.
    x_axis, p_axis : array, optional
        Explicit axes. By default ``n_points`` points span ``[-extent, extent]``.
    extent : float, optional
        Half-width of the default grid; see :func:`default_wigner_extent`.
    boundary_tol : float
        A :class:`GridTooNarrowWarning` is issued when ``max|W|`` on the
        grid boundary exceeds this.
    """
    data = rho_ph.data if isinstance(rho_ph, DensityMatrix) else np.asarray(rho_ph, dtype=complex)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {data.shape}")
    m = data.shape[0]
    if x_axis is None or p_axis is None:
        ext = extent if extent is not None else default_wigner_extent(data)
        axis = np.linspace(-ext, ext, n_points)
        x_axis = axis if x_axis is None else x_axis
        p_axis = axis if p_axis is None else p_axis
    x_axis = np.asarray(x_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    xx, pp = np.meshgrid(x_axis, p_axis, indexing="ij")
    # β = -2α, |β|² = 2(x² + p²)
    beta = -np.sqrt(2.0) * (xx + 1j * pp)
    r2 = np.abs(beta) ** 2
    phase = np.exp(1j * np.angle(beta))
    with np.errstate(divide="ignore"):
        log_r2 = np.log(r2)
    total = np.zeros_like(r2)
    for d in range(m):
        diag = np.diagonal(data, offset=d)  # ρ_{k, k+d}
        if not np.any(diag):
            continue
        # g_k = ⟨k+d|D(β)|k⟩ / (phase^d), with the prefactor in g_0
        if d == 0:
            g0 = np.exp(-0.5 * r2)
        else:
            g0 = np.exp(0.5 * d * log_r2 - 0.5 * r2 - 0.5 * math.lgamma(d + 1))
        g_prev, g = np.zeros_like(r2), g0
        acc = np.zeros_like(r2, dtype=complex if d else float)
        for k in range(m - d):
            if k > 0:
                c1 = (2 * k - 1 + d - r2) / math.sqrt(k * (k + d))
                c2 = math.sqrt((k - 1) * (k - 1 + d) / (k * (k + d)))
                g_prev, g = g, c1 * g - c2 * g_prev
            sign = -1.0 if (k + d) % 2 else 1.0
            acc = acc + (sign * diag[k]) * g if d else acc + sign * diag[k].real * g
        if d == 0:
            total += acc
        else:
            total += 2.0 * np.real(acc * phase**d)
    values = total / np.pi
    edge = np.concatenate([values[0], values[-1], values[:, 0], values[:, -1]])
    boundary = float(np.max(np.abs(edge)))
    if boundary > boundary_tol:
        warnings.warn(
            f"Wigner function is {boundary:.2e} on the grid boundary; widen the grid", GridTooNarrowWarning, stacklevel=2
        )
    return WignerGrid(x_axis, p_axis, values, WIGNER_CONVENTION, boundary)


def z4_asymmetry(w: WignerGrid) -> float:
    """``max|W - R W| / max|W|`` with ``R`` the 90° phase-space rotation.

    ``(R W)(x, p) = W(-p, x)`` is resampled bilinearly; points whose
    rotated image leaves the grid are ignored.
    """
    x, p = w.x_axis, w.p_axis
    if w.values.shape[0] != w.values.shape[1] or x.size != p.size or not np.allclose(x, p):
        raise InvalidDimensionError("z4_asymmetry needs a square grid with identical axes")
    if not np.isclose(x[0], -x[-1], atol=1e-12 * max(1.0, abs(x[-1]))):
        raise InvalidDimensionError("z4_asymmetry needs a grid centred at the origin")
    interp = RegularGridInterpolator((x, p), w.values, method="linear", bounds_error=False, fill_value=np.nan)
    xx, pp = np.meshgrid(x, p, indexing="ij")
    rotated = interp(np.stack([-pp, xx], axis=-1))
    diff = np.abs(w.values - rotated)
    scale = np.max(np.abs(w.values))
    if scale == 0:
        return 0.0
    return float(np.nanmax(diff) / scale)


def off_origin_maxima(w: WignerGrid, min_radius: float = 1.0, rel_height: float = 0.02) -> np.ndarray:
    """Local maxima away from the origin, sorted by decreasing height.

    Returns rows ``(x, p, W, angle_deg)``. Maxima lower than
    ``rel_height * max W`` or closer than ``min_radius`` are skipped.
    """
    v = w.values
    peak = maximum_filter(v, size=3, mode="nearest") == v
    interior = np.zeros_like(peak)
    interior[1:-1, 1:-1] = True
    xx, pp = np.meshgrid(w.x_axis, w.p_axis, indexing="ij")
    mask = peak & interior & (np.hypot(xx, pp) >= min_radius) & (v >= rel_height * v.max())
    rows = np.column_stack([xx[mask], pp[mask], v[mask], np.degrees(np.arctan2(pp[mask], xx[mask]))])
    return rows[np.argsort(-rows[:, 2])] if rows.size else rows.reshape(0, 4)


def lobe_spacing(maxima: np.ndarray, count: int = 4) -> np.ndarray:
    """Angular gaps (degrees) between the ``count`` highest maxima."""
    if maxima.shape[0] < count:
        raise ValueError(f"need {count} maxima, found {maxima.shape[0]}")
    angles = np.sort(np.mod(maxima[:count, 3], 360.0))
    return np.diff(np.append(angles, angles[0] + 360.0))


def x_quadrature_distribution(rho_ph: DensityMatrix | np.ndarray, x: np.ndarray) -> np.ndarray:
    """``⟨x|ρ|x⟩`` for the quadrature ``x = (a + a†)/√2`` via Hermite functions."""
    data = rho_ph.data if isinstance(rho_ph, DensityMatrix) else np.asarray(rho_ph, dtype=complex)
    m = data.shape[0]
    x = np.asarray(x, dtype=float)
    psi = np.zeros((m, x.size))
    psi[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if m > 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(2, m):
        psi[n] = np.sqrt(2.0 / n) * x * psi[n - 1] - np.sqrt((n - 1) / n) * psi[n - 2]
    return np.real(np.einsum("mx,mn,nx->x", psi, data, psi))
