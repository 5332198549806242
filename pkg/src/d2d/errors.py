"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes, so every engine failure that a
caller is expected to handle derives from :class:`D2DError`.
"""

from __future__ import annotations


class D2DError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(D2DError, ValueError):
    """A Hilbert-space dimension or operator shape is invalid."""


class ConfigError(D2DError, ValueError):
    """Missing, malformed or inconsistent run configuration."""


class ConvergenceError(D2DError, RuntimeError):
    """A numerical solver did not reach its tolerance.

    Parameters
    ----------
    message : str
        Human-readable description.
    residual : float, optional
        Last residual reached by the solver, when available.
    """

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class DegenerateKernelError(ConvergenceError):
    """The Liouvillian has more than one zero mode; use ``kernel_basis``."""

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class KernelLimitError(D2DError, RuntimeError):
    """More zero modes were found than the caller allowed."""

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class BudgetExceededError(D2DError, MemoryError):
    """The requested system is larger than the configured ED budget."""


class TrajectoryError(D2DError, RuntimeError):
    """A quantum trajectory failed; ``index`` identifies it in the ensemble."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"trajectory {index}: {message}"
        super().__init__(message)
        self.index = index


class NoLobeDetected(D2DError, ValueError):
    """P(n) has no side lobe after the vacuum peak (normal phase only)."""
