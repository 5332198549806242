"""Simulator for the driven-dissipative two-photon Dicke model.

Modules: ``hilbert`` (operators), ``liouvillian`` (exact steady states),
``trajectories`` (quantum trajectories), ``semiclassical`` (mean-field and
cumulant equations), ``analysis`` (P(n), lobe fits, Wigner functions) and
``cli``.
"""

__version__ = "0.1.0"
