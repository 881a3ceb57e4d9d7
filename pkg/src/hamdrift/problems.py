"""The built-in test problems and the oscillator's exact moments.

Four systems, all with closed-form averaged-force integrals:

* ``oscillator``   H = p^2/2 + q^2/2, scalar noise
* ``pendulum``     H = p^2/2 - c cos(q), scalar noise, nonlinearity scale c
* ``double-well``  H = p^2/2 + q^4/4 - q^2/2, scalar noise
* ``henon-heiles`` two degrees of freedom with cubic coupling alpha and
                   diagonal two-dimensional noise
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import HamiltonianProblem, PhaseState

PROBLEM_NAMES = ("oscillator", "pendulum", "double-well", "henon-heiles")

# Switch to the series branch of the pendulum's averaged force below this
# |h psi|; the closed form loses ~|u|^-1 digits to cancellation there while
# the 3-term series is accurate to ~u^3/24.
_PENDULUM_SERIES_CUTOFF = 1e-4


def _oscillator_avf(q, psi, h):
    return q + (0.5 * h) * psi


def _make_oscillator(sigma=1.0, p0=0.0, q0=1.0):
    return HamiltonianProblem(
        dim_q=1,
        dim_w=1,
        grad_V=lambda q: q,
        potential_V=lambda q: 0.5 * np.sum(q * q, axis=-1),
        hess_V=lambda q: np.ones(q.shape[:-1] + (1, 1)),
        sigma=np.array([[float(sigma)]]),
        initial=PhaseState(q=np.array([q0]), p=np.array([p0])),
        poly_degree=1,
        closed_form_avf=_oscillator_avf,
        label="oscillator",
    )


def _pendulum_avf_factory(scale):
    def avf(q, psi, h):
        u = h * np.asarray(psi, dtype=float)
        q = np.asarray(q, dtype=float)
        small = np.abs(u) < _PENDULUM_SERIES_CUTOFF
        safe_u = np.where(small, 1.0, u)
        exact = (np.cos(q) - np.cos(q + u)) / safe_u
        series = np.sin(q) + (u / 2.0) * np.cos(q) - (u * u / 6.0) * np.sin(q)
        return scale * np.where(small, series, exact)

    return avf


def _make_pendulum(sigma=0.25, scale=1.0, p0=1.0, q0=np.sqrt(2.0)):
    c = float(scale)
    return HamiltonianProblem(
        dim_q=1,
        dim_w=1,
        grad_V=lambda q: c * np.sin(q),
        potential_V=lambda q: -c * np.sum(np.cos(q), axis=-1),
        hess_V=lambda q: (c * np.cos(q))[..., None],
        sigma=np.array([[float(sigma)]]),
        initial=PhaseState(q=np.array([q0]), p=np.array([p0])),
        closed_form_avf=_pendulum_avf_factory(c),
        label="pendulum",
    )


def _double_well_avf(q, psi, h):
    u = h * np.asarray(psi, dtype=float)
    q = np.asarray(q, dtype=float)
    return q**3 - q - 0.5 * u + 1.5 * q * q * u + q * u * u + 0.25 * u**3


def _make_double_well(sigma=0.5, p0=np.sqrt(2.0), q0=np.sqrt(2.0)):
    return HamiltonianProblem(
        dim_q=1,
        dim_w=1,
        grad_V=lambda q: q**3 - q,
        potential_V=lambda q: np.sum(0.25 * q**4 - 0.5 * q * q, axis=-1),
        hess_V=lambda q: (3.0 * q * q - 1.0)[..., None],
        sigma=np.array([[float(sigma)]]),
        initial=PhaseState(q=np.array([q0]), p=np.array([p0])),
        poly_degree=3,
        closed_form_avf=_double_well_avf,
        label="double-well",
    )


def _henon_heiles_avf_factory(alpha):
    a = float(alpha)

    def avf(q, psi, h):
        q1, q2 = q[..., 0], q[..., 1]
        u1, u2 = h * psi[..., 0], h * psi[..., 1]
        comp1 = (
            q1 + 0.5 * u1
            + a * (q2 * q2 + q2 * u2 + u2 * u2 / 3.0)
            - a * (q1 * q1 + q1 * u1 + u1 * u1 / 3.0)
        )
        comp2 = (
            q2 + 0.5 * u2
            + 2.0 * a * (q1 * q2 + 0.5 * (q1 * u2 + q2 * u1) + u1 * u2 / 3.0)
        )
        return np.stack([comp1, comp2], axis=-1)

    return avf


def _make_henon_heiles(sigma1=0.2, sigma2=0.2, alpha=1.0 / 16.0,
                       p0=(1.0, 1.0), q0=(np.sqrt(3.0), 1.0)):
    a = float(alpha)

    def grad(q):
        q1, q2 = q[..., 0], q[..., 1]
        return np.stack([q1 + a * (q2 * q2 - q1 * q1), q2 + 2.0 * a * q1 * q2],
                        axis=-1)

    def potential(q):
        q1, q2 = q[..., 0], q[..., 1]
        return 0.5 * (q1 * q1 + q2 * q2) + a * (q1 * q2 * q2 - q1**3 / 3.0)

    def hess(q):
        q1, q2 = q[..., 0], q[..., 1]
        h11 = 1.0 - 2.0 * a * q1
        h12 = 2.0 * a * q2
        h22 = 1.0 + 2.0 * a * q1
        row1 = np.stack([h11, h12], axis=-1)
        row2 = np.stack([h12, h22], axis=-1)
        return np.stack([row1, row2], axis=-2)

    return HamiltonianProblem(
        dim_q=2,
        dim_w=2,
        grad_V=grad,
        potential_V=potential,
        hess_V=hess,
        sigma=np.diag([float(sigma1), float(sigma2)]),
        initial=PhaseState(q=np.asarray(q0, float), p=np.asarray(p0, float)),
        poly_degree=2,
        closed_form_avf=_henon_heiles_avf_factory(a),
        label="henon-heiles",
    )


def make_problem(name: str, sigma=None, alpha=None, scale=None,
                 p0=None, q0=None) -> HamiltonianProblem:
    """Build one of the named problems, with optional parameter overrides.

    ``sigma`` is the scalar noise amplitude (applied to both channels of the
    two-dimensional problem), ``alpha`` the cubic coupling of henon-heiles,
    and ``scale`` the pendulum nonlinearity factor.
    """
    key = str(name).lower().replace("_", "-")
    if key == "oscillator":
        kw = {}
        if sigma is not None:
            kw["sigma"] = sigma
        if p0 is not None:
            kw["p0"] = p0
        if q0 is not None:
            kw["q0"] = q0
        return _make_oscillator(**kw)
    if key == "pendulum":
        kw = {}
        if sigma is not None:
            kw["sigma"] = sigma
        if scale is not None:
            kw["scale"] = scale
        if p0 is not None:
            kw["p0"] = p0
        if q0 is not None:
            kw["q0"] = q0
        return _make_pendulum(**kw)
    if key == "double-well":
        kw = {}
        if sigma is not None:
            kw["sigma"] = sigma
        if p0 is not None:
            kw["p0"] = p0
        if q0 is not None:
            kw["q0"] = q0
        return _make_double_well(**kw)
    if key == "henon-heiles":
        kw = {}
        if sigma is not None:
            kw["sigma1"] = sigma
            kw["sigma2"] = sigma
        if alpha is not None:
            kw["alpha"] = alpha
        if p0 is not None:
            kw["p0"] = p0
        if q0 is not None:
            kw["q0"] = q0
        return _make_henon_heiles(**kw)
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")


@dataclass(frozen=True)
class OscillatorMoments:
    """First and second moments of the linear oscillator at time t."""

    mean_q: float
    mean_p: float
    var_q: float
    var_p: float
    cov_qp: float
    t: float


def oscillator_exact_moments(p0: float, q0: float, sigma: float,
                             t: float) -> OscillatorMoments:
    """Exact moments of dq = p dt, dp = -q dt + sigma dW.

    Variation of constants gives the rotated means; the noise convolution
    integrals evaluate to

        var_q = sigma^2 (t/2 - sin(2t)/4)
        var_p = sigma^2 (t/2 + sin(2t)/4)
        cov   = sigma^2 sin(t)^2 / 2

    which together reproduce the linear energy drift
    E[H(t)] = H(0) + sigma^2 t / 2 for every t.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    s2 = float(sigma) ** 2
    return OscillatorMoments(
        mean_q=q0 * np.cos(t) + p0 * np.sin(t),
        mean_p=p0 * np.cos(t) - q0 * np.sin(t),
        var_q=s2 * (0.5 * t - 0.25 * np.sin(2.0 * t)),
        var_p=s2 * (0.5 * t + 0.25 * np.sin(2.0 * t)),
        cov_qp=s2 * 0.5 * np.sin(t) ** 2,
        t=float(t),
    )


def moments_energy(m: OscillatorMoments) -> float:
    """E[H] reconstructed from first and second moments."""
    return 0.5 * (m.mean_p**2 + m.var_p) + 0.5 * (m.mean_q**2 + m.var_q)
