"""Independent oracles for the scheme properties.

Three tools turn the statistical claims into deterministic checks:

* Gauss-Hermite quadrature over the noise increment evaluates the one-step
  conditional expectation of the energy to machine precision, so the
  linear-drift identity E[H(step)] - H = tr(Sigma^T Sigma) h / 2 can be
  asserted without Monte Carlo.
* For the linear oscillator every scheme is affine in (state, noise); the
  extracted (A, b, B) matrices drive exact mean/covariance recursions,
  giving noise-free weak-error curves.
* A log-log least-squares fit estimates observed convergence orders.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .integrators import SchemeId, SolverConfig, step_batch
from .model import HamiltonianProblem, PhaseState, energy


@lru_cache(maxsize=None)
def _gauss_hermite_prob(n: int):
    """Nodes/weights for E[f(Z)], Z ~ N(0, 1) (probabilists' normalization)."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def _tensor_grid(dims: int, nodes: int):
    """Tensorized standard-normal quadrature grid: (nodes**dims, dims)."""
    x, w = _gauss_hermite_prob(nodes)
    grids = np.meshgrid(*([x] * dims), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(points.shape[0])
    for axis in range(dims):
        weights *= w[
            np.unravel_index(np.arange(points.shape[0]), (nodes,) * dims)[axis]
        ]
    return points, weights


def conditional_energy_drift(problem: HamiltonianProblem, scheme, state: PhaseState,
                             h: float, nodes: int = 30,
                             solver: Optional[SolverConfig] = None) -> float:
    """E over the noise increment of H(step(state, dW)) minus H(state).

    Computed by tensorized Gauss-Hermite quadrature over dW ~ N(0, h I_d)
    (d <= 2), solving any implicit stage at every node.  For the splitting
    scheme the quadrature runs jointly over (dW, dZ) using the exact
    conditional law dZ | dW ~ N(h dW / 2, h^3/12).
    """
    scheme = SchemeId.from_name(scheme)
    d = problem.dim_w
    if d > 2:
        raise ValueError("quadrature drift check supports at most 2 noise dimensions")
    if nodes < 10:
        raise ValueError("need at least 10 quadrature nodes per dimension")

    if scheme is SchemeId.SPLIT:
        if d != 1:
            raise ValueError("splitting drift check supports scalar noise only")
        xi, weights = _tensor_grid(2, nodes)
        dw = np.sqrt(h) * xi[:, :1]
        dz = 0.5 * h * dw + np.sqrt(h**3 / 12.0) * xi[:, 1:]
    else:
        xi, weights = _tensor_grid(d, nodes)
        dw = np.sqrt(h) * xi
        dz = None

    k = dw.shape[0]
    q = np.broadcast_to(state.q, (k, problem.dim_q))
    p = np.broadcast_to(state.p, (k, problem.dim_q))
    q1, p1, _ = step_batch(problem, scheme, q, p, dw, h, solver=solver, dz=dz)
    energies = 0.5 * np.sum(p1 * p1, axis=-1) + problem.potential_V(q1)
    return float(weights @ energies) - energy(problem, state)


@dataclass(frozen=True)
class AffineSchemeMatrices:
    """One-step map X -> A X + b + B dW of a scheme affine in (state, noise).

    The state is ordered X = (q, p).  ``h`` is the step size the matrices
    were built for; the per-step noise covariance is h B B^T.
    """

    A: np.ndarray
    b: np.ndarray
    B: np.ndarray
    h: float
    scheme: SchemeId

    def apply(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b + self.B @ np.atleast_1d(w)


def extract_affine(scheme, problem: HamiltonianProblem, h: float) -> AffineSchemeMatrices:
    """Closed-form affine matrices of a scheme on the unit-frequency oscillator.

    Only the linear oscillator is supported (the implicit stages then have
    closed-form solutions; backward Euler reduces to a 2x2 inverse).  The
    splitting scheme is excluded since its update also involves dZ.
    """
    scheme = SchemeId.from_name(scheme)
    if problem.label != "oscillator" or problem.dim_q != 1 or problem.dim_w != 1:
        raise ValueError("affine extraction is only supported for the "
                         "unit-frequency linear oscillator")
    sig = float(problem.sigma[0, 0])
    if scheme is SchemeId.DP:
        denom = 1.0 + h * h / 4.0
        shrink = 1.0 - h * h / (2.0 * denom)
        a = np.array([[shrink, h / denom],
                      [-h + h**3 / (4.0 * denom), shrink]])
        noise = sig * np.array([[h / denom], [shrink]])
    elif scheme is SchemeId.EM:
        a = np.array([[1.0, h], [-h, 1.0]])
        noise = sig * np.array([[0.0], [1.0]])
    elif scheme is SchemeId.BEM:
        r = 1.0 / (1.0 + h * h)
        a = np.array([[1.0 - h * h * r, h * r], [-h * r, r]])
        noise = sig * np.array([[h * r], [r]])
    elif scheme is SchemeId.STM:
        c, s = np.cos(h), np.sin(h)
        a = np.array([[c, s], [-s, c]])
        noise = sig * np.array([[s], [c]])
    elif scheme is SchemeId.SYMP:
        a = np.array([[1.0 - h * h, h], [-h, 1.0]])
        noise = sig * np.array([[0.0], [1.0]])
    else:
        raise ValueError(f"scheme {scheme.value} has no affine form here")
    return AffineSchemeMatrices(A=a, b=np.zeros(2), B=noise, h=h, scheme=scheme)


def affine_moment_recursion(mats: AffineSchemeMatrices, mean0, cov0, n: int):
    """Iterate mean_{k+1} = A mean_k + b, cov_{k+1} = A cov_k A^T + h B B^T."""
    mean, cov = _moment_history(mats, mean0, cov0, n, keep=False)
    return mean, cov


def affine_moment_history(mats: AffineSchemeMatrices, mean0, cov0, n: int):
    """All intermediate moments: arrays of shape (n+1, 2) and (n+1, 2, 2)."""
    return _moment_history(mats, mean0, cov0, n, keep=True)


def _moment_history(mats, mean0, cov0, n, keep):
    mean = np.asarray(mean0, dtype=float).copy()
    cov = np.asarray(cov0, dtype=float).copy()
    if mean.shape != (2,) or cov.shape != (2, 2):
        raise ValueError("mean0 must have shape (2,) and cov0 shape (2, 2)")
    if not np.allclose(cov, cov.T):
        raise ValueError("cov0 must be symmetric")
    step_cov = mats.h * (mats.B @ mats.B.T)
    means = [mean.copy()] if keep else None
    covs = [cov.copy()] if keep else None
    for _ in range(n):
        mean = mats.A @ mean + mats.b
        cov = mats.A @ cov @ mats.A.T + step_cov
        if keep:
            means.append(mean.copy())
            covs.append(cov.copy())
    if keep:
        return np.array(means), np.array(covs)
    return mean, cov


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line through (log h, log error)."""

    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]


def fit_order(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Estimate the convergence order from (h, error) pairs.

    Non-positive errors cannot be placed on the log-log plot and are dropped
    with a warning; at least three usable points are required.
    """
    usable = [(float(h), float(e)) for h, e in points if e > 0.0]
    dropped = len(points) - len(usable)
    if dropped:
        warnings.warn(f"fit_order: dropped {dropped} non-positive error value(s)",
                      stacklevel=2)
    if len(usable) < 3:
        raise ValueError("need at least 3 points with positive errors to fit a slope")
    x = np.log([h for h, _ in usable])
    y = np.log([e for _, e in usable])
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res < 1e-28 else 0.0
    return SlopeFit(slope=float(slope), intercept=float(intercept),
                    r_squared=float(r2), points=tuple(usable))
