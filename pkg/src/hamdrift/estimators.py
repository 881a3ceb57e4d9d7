"""Monte Carlo and multilevel Monte Carlo estimation of terminal functionals.

The multilevel estimator telescopes over the nested dyadic grids
h_l = T 2^-l: level 0 runs a single step per unit interval, and every
level-l correction drives the fine (2^l steps) and coarse (2^(l-1) steps)
integrators with the *same* Brownian path, the coarse increments being the
pairwise sums of the fine ones.  Sample sizes follow the fixed schedule

    M_0 = ceil(2^(2L)),   M_l = ceil(2^(2(L - l/2)) l^(2(1+eps))).

One work unit is one invocation of a one-step map for one sample, so the
level-l correction costs M_l (2^l + 2^(l-1)) units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .integrators import SchemeId, SolverConfig, evolve
from .model import HamiltonianProblem, TimeGrid, coarsen, sample_path

# Stream ids compose a level tag with the sample index, so each Monte Carlo
# sample owns an independent stream regardless of batching or scheduling.
_LEVEL_SHIFT = 48


def stream_id_for(level: int, index: int) -> int:
    if index >= (1 << _LEVEL_SHIFT):
        raise ValueError("sample index too large for the stream layout")
    return (int(level) << _LEVEL_SHIFT) | int(index)


def _functional_from_name(name: str) -> Callable:
    """Resolve a functional name: energy, q, p, q2, p2, optionally with a
    coordinate index suffix such as ``q_1`` or ``p2_0``."""
    base, _, idx = str(name).partition("_")
    j = int(idx) if idx else 0
    if base == "energy":
        return lambda problem, q, p: (
            0.5 * np.sum(p * p, axis=-1) + problem.potential_V(q)
        )
    if base == "q":
        return lambda problem, q, p: q[..., j]
    if base == "p":
        return lambda problem, q, p: p[..., j]
    if base == "q2":
        return lambda problem, q, p: q[..., j] ** 2
    if base == "p2":
        return lambda problem, q, p: p[..., j] ** 2
    raise ValueError(f"unknown functional {name!r}")


def resolve_functional(functional: Union[str, Callable]) -> Callable:
    if callable(functional):
        return functional
    return _functional_from_name(functional)


@dataclass(frozen=True)
class McConfig:
    samples: int
    seed: int
    functional: Union[str, Callable] = "energy"

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be at least 1")


@dataclass(frozen=True)
class MlmcConfig:
    levels: int
    epsilon: float
    seed: int
    t_end: float
    functional: Union[str, Callable] = "energy"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if not (self.t_end > 0):
            raise ValueError("t_end must be positive")


@dataclass(frozen=True)
class LevelStats:
    level: int
    samples: int
    mean: float
    variance: float
    work: float


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    std_error: float
    per_level: tuple[LevelStats, ...]
    total_work: float
    degenerate: bool = False


def _gather_paths(problem, scheme, seed, level, sample_count, grid,
                  path_level=0):
    """Stack per-sample Brownian paths into (M, N, d) increment arrays."""
    need_area = SchemeId.from_name(scheme) is SchemeId.SPLIT
    dw = None
    dz = None
    for i in range(sample_count):
        path = sample_path(seed, stream_id_for(level, i), grid, problem.dim_w,
                           with_area=need_area, level=path_level)
        if dw is None:
            dw = np.empty((sample_count,) + path.increments.shape)
            if need_area:
                dz = np.empty_like(dw)
        dw[i] = path.increments
        if need_area:
            dz[i] = path.area_increments
    return dw, dz


def _sample_stats(values: np.ndarray):
    m = values.size
    mean = float(np.mean(values))
    var = float(np.var(values, ddof=1)) if m > 1 else 0.0
    return mean, var


def mc_estimate(problem: HamiltonianProblem, scheme, grid: TimeGrid,
                cfg: McConfig, solver: Optional[SolverConfig] = None
                ) -> EstimatorReport:
    """Plain Monte Carlo over independent paths on the given grid.

    Returns the sample mean of the functional at the final time and its
    standard error (sample standard deviation / sqrt(M)); a single-sample
    run is flagged as degenerate with a zero standard error.
    """
    f = resolve_functional(cfg.functional)
    m = cfg.samples
    dw, dz = _gather_paths(problem, scheme, cfg.seed, 0, m, grid)
    q0 = np.broadcast_to(problem.initial.q, (m, problem.dim_q))
    p0 = np.broadcast_to(problem.initial.p, (m, problem.dim_q))
    q, p = evolve(problem, scheme, q0, p0, dw, grid.h, solver=solver, area=dz)
    values = np.asarray(f(problem, q, p), dtype=float)
    mean, var = _sample_stats(values)
    work = float(m * grid.n_steps)
    stats = LevelStats(level=0, samples=m, mean=mean, variance=var, work=work)
    return EstimatorReport(
        estimate=mean,
        std_error=math.sqrt(var / m),
        per_level=(stats,),
        total_work=work,
        degenerate=(m == 1),
    )


def mlmc_sample_sizes(levels: int, epsilon: float) -> list[int]:
    """The fixed multilevel sample schedule M_0 .. M_L."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive")
    sizes = [math.ceil(2.0 ** (2 * levels))]
    for level in range(1, levels + 1):
        sizes.append(
            math.ceil(2.0 ** (2 * (levels - level / 2.0))
                      * level ** (2.0 * (1.0 + epsilon)))
        )
    return sizes


def mlmc_estimate(problem: HamiltonianProblem, scheme, cfg: MlmcConfig,
                  solver: Optional[SolverConfig] = None) -> EstimatorReport:
    """Multilevel Monte Carlo estimate of a terminal functional at t_end.

    Each level-l correction sample integrates one Brownian path at both the
    fine and the pairwise-coarsened resolution and averages the difference
    of functionals; level 0 uses single-step-resolution paths.
    """
    f = resolve_functional(cfg.functional)
    sizes = mlmc_sample_sizes(cfg.levels, cfg.epsilon)
    base = TimeGrid(t_end=cfg.t_end, n_steps=1)
    need_area = SchemeId.from_name(scheme) is SchemeId.SPLIT

    per_level = []
    estimate = 0.0
    se_sq = 0.0
    total_work = 0.0

    for level, m in enumerate(sizes):
        diffs = np.empty(m)
        fine_dw = None
        fine_dz = None
        for i in range(m):
            path = sample_path(cfg.seed, stream_id_for(level, i), base,
                               problem.dim_w, with_area=need_area, level=level)
            if fine_dw is None:
                fine_dw = np.empty((m,) + path.increments.shape)
                fine_dz = np.empty_like(fine_dw) if need_area else None
            fine_dw[i] = path.increments
            if need_area:
                fine_dz[i] = path.area_increments

        n_fine = 1 << level
        h_fine = cfg.t_end / n_fine
        q0 = np.broadcast_to(problem.initial.q, (m, problem.dim_q))
        p0 = np.broadcast_to(problem.initial.p, (m, problem.dim_q))
        qf, pf = evolve(problem, scheme, q0, p0, fine_dw, h_fine,
                        solver=solver, area=fine_dz)
        values = np.asarray(f(problem, qf, pf), dtype=float)

        if level == 0:
            diffs = values
            work = float(m)
        else:
            coarse_dw = fine_dw[:, 0::2, :] + fine_dw[:, 1::2, :]
            coarse_dz = None
            if need_area:
                coarse_dz = (fine_dz[:, 0::2, :] + fine_dz[:, 1::2, :]
                             + h_fine * fine_dw[:, 0::2, :])
            qc, pc = evolve(problem, scheme, q0, p0, coarse_dw, 2.0 * h_fine,
                            solver=solver, area=coarse_dz)
            diffs = values - np.asarray(f(problem, qc, pc), dtype=float)
            work = float(m * (n_fine + n_fine // 2))

        mean, var = _sample_stats(diffs)
        per_level.append(LevelStats(level=level, samples=m, mean=mean,
                                    variance=var, work=work))
        estimate += mean
        se_sq += var / m
        total_work += work

    return EstimatorReport(
        estimate=estimate,
        std_error=math.sqrt(se_sq),
        per_level=tuple(per_level),
        total_work=total_work,
    )
