"""One-step maps and the trajectory driver.

The central scheme is the drift-preserving integrator

    psi   = p_n + Sigma dW_n - (h/2) * I(q_n, psi)
    q_n+1 = q_n + h psi
    p_n+1 = p_n + Sigma dW_n - h * I(q_n, psi)

with the averaged force I(q, psi) = \\int_0^1 grad_V(q + s h psi) ds computed
exactly (closed form, or Gauss-Legendre with enough nodes to be exact for
polynomial gradients).  Its expected energy then drifts linearly in time at
the exact rate tr(Sigma^T Sigma)/2.  Comparator schemes: Euler-Maruyama,
backward (drift-implicit) Euler-Maruyama, the trigonometric rotation method
for the unit oscillator, symplectic Euler with appended noise, and a
Lie splitting that integrates the kinetic/noise flow exactly.

All one-step maps broadcast over leading batch axes: states are arrays of
shape (..., m) and increments arrays of shape (..., d).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .model import BrownianPath, HamiltonianProblem, PhaseState, TimeGrid


class SolverDiverged(RuntimeError):
    """Implicit solve failed to reach tolerance within max_iter; h is too large."""


class SchemeId(str, Enum):
    DP = "dp"
    EM = "em"
    BEM = "bem"
    STM = "stm"
    SYMP = "symp"
    SPLIT = "split"

    @classmethod
    def from_name(cls, name) -> "SchemeId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}; choose from "
                             f"{[s.value for s in cls]}") from None


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the implicit stage solves.

    ``tol`` is the sup-norm tolerance on successive iterates, ``method`` is
    either ``fixed_point`` or ``newton``; Newton needs the problem to expose
    a Hessian of V.
    """

    tol: float = 1e-12
    max_iter: int = 100
    method: str = "fixed_point"

    def __post_init__(self):
        if not (self.tol > 0.0):
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.method not in ("fixed_point", "newton"):
            raise ValueError("method must be 'fixed_point' or 'newton'")


@dataclass(frozen=True)
class StepRecord:
    """State after one step, with time stamp and solver/quadrature accounting."""

    state: PhaseState
    t: float
    solver_iters: int = 0
    quadrature_nodes_used: int = 0
    psi: Optional[np.ndarray] = None


@lru_cache(maxsize=None)
def _gl01(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]; exact for degree <= 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def avf_node_count(problem: HamiltonianProblem) -> int:
    """Quadrature nodes used per averaged-force evaluation (0 = closed form)."""
    if problem.closed_form_avf is not None:
        return 0
    if problem.poly_degree is not None:
        return max(1, -(-(problem.poly_degree + 1) // 2))
    return 16


def avf_integral(problem, q, psi, h):
    """Averaged force \\int_0^1 grad_V(q + s h psi) ds, broadcast over batches.

    Uses the problem's closed form when available, otherwise Gauss-Legendre
    on [0, 1]: ceil((poly_degree+1)/2) nodes when the gradient is polynomial
    (making the quadrature exact), 16 nodes otherwise.
    """
    q = np.asarray(q, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if problem.closed_form_avf is not None:
        return problem.closed_form_avf(q, psi, h)
    n = avf_node_count(problem)
    s, w = _gl01(n)
    shape = (n,) + (1,) * q.ndim
    points = q[None, ...] + (s.reshape(shape) * h) * psi[None, ...]
    return np.einsum("k,k...->...", w, problem.grad_V(points))


def _weighted_hessian_integral(problem, q, psi, h):
    """\\int_0^1 s hess_V(q + s h psi) ds, the stage Jacobian's curvature part."""
    n = max(avf_node_count(problem), 2)
    s, w = _gl01(n)
    shape = (n,) + (1,) * q.ndim
    points = q[None, ...] + (s.reshape(shape) * h) * psi[None, ...]
    hess = problem.hess_V(points)  # (n, ..., m, m)
    return np.einsum("k,k...->...", w * s, hess)


def _sigma_dw(problem, dw):
    dw = np.asarray(dw, dtype=float)
    return np.einsum("ij,...j->...i", problem.sigma, dw)


def _solve_stage(problem, q, b, h, solver):
    """Solve psi = b - (h/2) I(q, psi) for the averaged-velocity stage.

    Returns (psi, integral, iterations) where ``integral`` is the averaged
    force evaluated consistently with the returned psi, so callers can reuse
    the single evaluation for both the q- and p-updates.
    """
    psi = np.array(b, dtype=float, copy=True)
    if solver.method == "fixed_point":
        for it in range(1, solver.max_iter + 1):
            integral = avf_integral(problem, q, psi, h)
            new = b - (0.5 * h) * integral
            delta = float(np.max(np.abs(new - psi)))
            psi = new
            if delta <= solver.tol:
                return psi, integral, it
        raise SolverDiverged(
            f"fixed-point stage solve did not reach tol={solver.tol} within "
            f"{solver.max_iter} iterations (last update {delta:.3e}); "
            "the step size is likely above the contraction threshold"
        )
    # Newton on G(psi) = psi - b + (h/2) I(q, psi)
    if problem.hess_V is None:
        raise ValueError("newton solves require the problem to provide hess_V")
    m = q.shape[-1]
    eye = np.eye(m)
    for it in range(1, solver.max_iter + 1):
        integral = avf_integral(problem, q, psi, h)
        residual = psi - b + (0.5 * h) * integral
        jac = eye + (0.5 * h * h) * _weighted_hessian_integral(problem, q, psi, h)
        step = np.linalg.solve(jac, residual[..., None])[..., 0]
        psi = psi - step
        delta = float(np.max(np.abs(step)))
        if delta <= solver.tol:
            # One trailing averaged-force evaluation keeps psi and the
            # integral consistent, exactly as in the fixed-point branch.
            integral = avf_integral(problem, q, psi, h)
            psi = b - (0.5 * h) * integral
            return psi, integral, it
    raise SolverDiverged(
        f"newton stage solve did not reach tol={solver.tol} within "
        f"{solver.max_iter} iterations"
    )


def _dp_core(problem, q, p, dw, h, solver):
    b = p + _sigma_dw(problem, dw)
    psi, integral, iters = _solve_stage(problem, q, b, h, solver)
    q1 = q + h * psi
    p1 = b - h * integral
    return q1, p1, psi, iters


def _em_core(problem, q, p, dw, h):
    q1 = q + h * p
    p1 = p - h * problem.grad_V(q) + _sigma_dw(problem, dw)
    return q1, p1


def _bem_core(problem, q, p, dw, h, solver):
    """Drift-implicit, noise-explicit backward Euler:
    q1 = q + h p1,  p1 = p - h grad_V(q1) + Sigma dW."""
    forced = p + _sigma_dw(problem, dw)
    c = q + h * forced
    q1 = np.array(c, dtype=float, copy=True)
    if solver.method == "fixed_point":
        for it in range(1, solver.max_iter + 1):
            new = c - h * h * problem.grad_V(q1)
            delta = float(np.max(np.abs(new - q1)))
            q1 = new
            if delta <= solver.tol:
                break
        else:
            raise SolverDiverged(
                f"backward Euler fixed-point solve did not converge within "
                f"{solver.max_iter} iterations (last update {delta:.3e})"
            )
    else:
        if problem.hess_V is None:
            raise ValueError("newton solves require the problem to provide hess_V")
        m = q.shape[-1]
        eye = np.eye(m)
        for it in range(1, solver.max_iter + 1):
            residual = q1 - c + h * h * problem.grad_V(q1)
            jac = eye + h * h * problem.hess_V(q1)
            step = np.linalg.solve(jac, residual[..., None])[..., 0]
            q1 = q1 - step
            if float(np.max(np.abs(step))) <= solver.tol:
                break
        else:
            raise SolverDiverged(
                f"backward Euler newton solve did not converge within "
                f"{solver.max_iter} iterations"
            )
    p1 = forced - h * problem.grad_V(q1)
    q1 = q + h * p1  # re-impose the position equation exactly
    return q1, p1, it


def _stm_core(q, p, dw, h, sigma_scalar):
    c, s = np.cos(h), np.sin(h)
    noise = sigma_scalar * dw
    q1 = c * q + s * p + s * noise
    p1 = -s * q + c * p + c * noise
    return q1, p1


def _symp_core(problem, q, p, dw, h):
    p_star = p - h * problem.grad_V(q)
    q1 = q + h * p_star
    p1 = p_star + _sigma_dw(problem, dw)
    return q1, p1


def _split_core(problem, q, p, dw, dz, h):
    """Exact kinetic/noise flow, then a potential kick at the new position."""
    p_mid = p + _sigma_dw(problem, dw)
    q1 = q + h * p + _sigma_dw(problem, dz)
    p1 = p_mid - h * problem.grad_V(q1)
    return q1, p1


def _require_unit_oscillator(problem):
    if problem.label != "oscillator" or problem.dim_q != 1 or problem.dim_w != 1:
        raise ValueError(
            "the trigonometric method is only valid for the unit-frequency "
            "linear oscillator (m = d = 1)"
        )
    return float(problem.sigma[0, 0])


def dp_step(problem, state, dW, h, solver=None) -> StepRecord:
    """One step of the drift-preserving scheme.

    The averaged-force integral converged by the stage solve is reused for
    both the position and momentum updates, so the internal identity
    ``p1 - p - Sigma dW = 2 (psi - p - Sigma dW)`` holds at the converged
    solution.
    """
    solver = solver or SolverConfig()
    q1, p1, psi, iters = _dp_core(problem, state.q, state.p, np.asarray(dW, float), h, solver)
    return StepRecord(
        state=PhaseState(q=q1, p=p1),
        t=h,
        solver_iters=iters,
        quadrature_nodes_used=avf_node_count(problem),
        psi=psi,
    )


def em_step(problem, state, dW, h) -> StepRecord:
    """One Euler-Maruyama step: q1 = q + h p, p1 = p - h grad_V(q) + Sigma dW."""
    q1, p1 = _em_core(problem, state.q, state.p, np.asarray(dW, float), h)
    return StepRecord(state=PhaseState(q=q1, p=p1), t=h)


def bem_step(problem, state, dW, h, solver=None) -> StepRecord:
    """One backward Euler-Maruyama step (drift-implicit, noise-explicit)."""
    solver = solver or SolverConfig()
    q1, p1, iters = _bem_core(problem, state.q, state.p, np.asarray(dW, float), h, solver)
    return StepRecord(state=PhaseState(q=q1, p=p1), t=h, solver_iters=iters)


def stm_step(state, dW, h, sigma_scalar) -> StepRecord:
    """One step of the trigonometric rotation method for the unit oscillator."""
    q1, p1 = _stm_core(state.q, state.p, np.asarray(dW, float), h, sigma_scalar)
    return StepRecord(state=PhaseState(q=q1, p=p1), t=h)


def symp_step(problem, state, dW, h) -> StepRecord:
    """Symplectic Euler (momentum first) with the noise appended afterwards."""
    q1, p1 = _symp_core(problem, state.q, state.p, np.asarray(dW, float), h)
    return StepRecord(state=PhaseState(q=q1, p=p1), t=h)


def split_step(problem, state, dW, dZ, h) -> StepRecord:
    """Lie splitting: exact (q, noise) flow using the time-integrated
    increments dZ, followed by the exact potential kick dp = -grad_V(q) dt."""
    if dZ is None:
        raise ValueError("the splitting scheme requires area increments dZ")
    q1, p1 = _split_core(problem, state.q, state.p, np.asarray(dW, float),
                         np.asarray(dZ, float), h)
    return StepRecord(state=PhaseState(q=q1, p=p1), t=h)


def _check_compat(problem, scheme, path=None):
    scheme = SchemeId.from_name(scheme)
    if scheme is SchemeId.STM:
        _require_unit_oscillator(problem)
    if scheme is SchemeId.SPLIT and path is not None and path.area_increments is None:
        raise ValueError("the splitting scheme needs a path sampled with area "
                         "increments (with_area=True)")
    return scheme


def step_batch(problem, scheme, q, p, dw, h, solver=None, dz=None):
    """Advance a batch of states by one step of the chosen scheme.

    ``q``/``p`` have shape (..., m) and ``dw``/``dz`` shape (..., d); the
    batch axes broadcast through.  Returns (q1, p1, solver_iters).
    """
    scheme = SchemeId.from_name(scheme)
    if scheme is SchemeId.DP:
        q1, p1, _, iters = _dp_core(problem, q, p, dw, h, solver or SolverConfig())
        return q1, p1, iters
    if scheme is SchemeId.EM:
        return (*_em_core(problem, q, p, dw, h), 0)
    if scheme is SchemeId.BEM:
        q1, p1, iters = _bem_core(problem, q, p, dw, h, solver or SolverConfig())
        return q1, p1, iters
    if scheme is SchemeId.STM:
        sig = _require_unit_oscillator(problem)
        return (*_stm_core(q, p, dw, h, sig), 0)
    if scheme is SchemeId.SYMP:
        return (*_symp_core(problem, q, p, dw, h), 0)
    if scheme is SchemeId.SPLIT:
        if dz is None:
            raise ValueError("the splitting scheme requires area increments dZ")
        return (*_split_core(problem, q, p, dw, dz, h), 0)
    raise ValueError(f"unhandled scheme {scheme}")


def evolve(problem, scheme, q0, p0, increments, h, solver=None,
           area=None, record_energy=False):
    """Drive a batch of trajectories through all increments.

    ``increments`` has shape (..., N, d) with arbitrary batch axes matching
    ``q0``/``p0`` of shape (..., m).  Returns (q, p) at the final time, plus
    an energy history of shape (..., N+1) when ``record_energy`` is set.
    """
    scheme = _check_compat(problem, scheme)
    q = np.array(q0, dtype=float, copy=True)
    p = np.array(p0, dtype=float, copy=True)
    n = increments.shape[-2]
    energies = None
    if record_energy:
        energies = np.empty(q.shape[:-1] + (n + 1,))
        energies[..., 0] = 0.5 * np.sum(p * p, axis=-1) + problem.potential_V(q)
    for k in range(n):
        dz = area[..., k, :] if area is not None else None
        try:
            q, p, _ = step_batch(problem, scheme, q, p, increments[..., k, :], h,
                                 solver=solver, dz=dz)
        except SolverDiverged as exc:
            raise SolverDiverged(f"{exc} (at step {k})") from None
        if record_energy:
            energies[..., k + 1] = 0.5 * np.sum(p * p, axis=-1) + problem.potential_V(q)
    if record_energy:
        return q, p, energies
    return q, p


def integrate(problem, scheme, grid: TimeGrid, path: BrownianPath,
              solver=None) -> list[StepRecord]:
    """Apply the chosen one-step map along the path, from problem.initial.

    The path must carry at least ``grid.n_steps`` increments whose step size
    matches the grid.  Returns the full list of step records, including the
    initial state at t = 0.
    """
    scheme = _check_compat(problem, scheme, path)
    n = grid.n_steps
    if path.n_steps < n:
        raise ValueError(f"path has {path.n_steps} increments, need {n}")
    if not np.isclose(path.h, grid.h, rtol=1e-12, atol=0.0):
        raise ValueError(f"path step {path.h} does not match grid step {grid.h}")
    solver = solver or SolverConfig()
    sig = problem.sigma[0, 0] if scheme is SchemeId.STM else None
    records = [StepRecord(state=problem.initial, t=0.0)]
    state = problem.initial
    h = grid.h
    for k in range(n):
        dw = path.increments[k]
        try:
            if scheme is SchemeId.DP:
                rec = dp_step(problem, state, dw, h, solver)
            elif scheme is SchemeId.EM:
                rec = em_step(problem, state, dw, h)
            elif scheme is SchemeId.BEM:
                rec = bem_step(problem, state, dw, h, solver)
            elif scheme is SchemeId.STM:
                rec = stm_step(state, dw, h, sig)
            elif scheme is SchemeId.SYMP:
                rec = symp_step(problem, state, dw, h)
            else:
                rec = split_step(problem, state, dw, path.area_increments[k], h)
        except SolverDiverged as exc:
            raise SolverDiverged(f"{exc} (at step {k})") from None
        state = rec.state
        records.append(StepRecord(state=state, t=(k + 1) * h,
                                  solver_iters=rec.solver_iters,
                                  quadrature_nodes_used=rec.quadrature_nodes_used,
                                  psi=rec.psi))
    return records


def trajectory_energies(problem, records) -> np.ndarray:
    """Energies along a trajectory produced by :func:`integrate`."""
    from .model import energy

    return np.array([energy(problem, r.state) for r in records])
