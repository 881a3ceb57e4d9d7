"""Shared domain types: phase states, problems, time grids, Brownian paths.

All state is immutable after construction (or treated as such), and every
source of randomness is keyed by ``(seed, stream_id)`` through a counter-based
generator, so results are reproducible and independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags keeping the draws of different operations on disjoint streams.
_TAG_PATH = 0
_TAG_REFINE = 1


def stream_generator(seed: int, stream_id: int, *tags: int) -> np.random.Generator:
    """Return a Generator keyed by ``(seed, stream_id, *tags)``.

    Uses the Philox counter-based bit generator seeded through a
    ``SeedSequence`` so that distinct keys give statistically independent
    streams and identical keys reproduce identical draws, regardless of how
    many other streams were consumed in between.
    """
    entropy = (int(seed) & _MASK64, int(stream_id) & _MASK64) + tuple(
        int(t) & _MASK64 for t in tags
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class RandomSource:
    """A named random stream; ``stream_id`` is typically a sample index."""

    seed: int
    stream_id: int = 0

    def generator(self, *tags: int) -> np.random.Generator:
        return stream_generator(self.seed, self.stream_id, *tags)


@dataclass(frozen=True)
class PhaseState:
    """Position/momentum pair (q, p), both vectors of equal length m >= 1."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ValueError(
                f"q and p must be equal-length vectors, got {q.shape} and {p.shape}"
            )
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def m(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class HamiltonianProblem:
    """A separable Hamiltonian H(p, q) = |p|^2/2 + V(q) driven by additive noise.

    Parameters
    ----------
    dim_q, dim_w:
        State dimension m and noise dimension d.
    grad_V:
        Gradient of the potential.  Must be vectorized: it maps arrays of
        shape ``(..., m)`` to arrays of shape ``(..., m)`` elementwise over
        any leading batch axes.
    potential_V:
        The potential itself, mapping ``(..., m)`` to ``(...,)``.
    sigma:
        Constant noise matrix of shape ``(m, d)``.
    initial:
        Deterministic initial state.
    poly_degree:
        If ``grad_V`` is polynomial in each coordinate, its degree.  Lets the
        averaged-force quadrature pick an exact node count.
    closed_form_avf:
        Optional exact evaluation ``(q, psi, h) -> (..., m)`` of the averaged
        force ``\\int_0^1 grad_V(q + s h psi) ds``.
    hess_V:
        Optional Hessian of V, mapping ``(..., m)`` to ``(..., m, m)``.
        Required only by Newton solves of the implicit schemes.
    label:
        Short name used by the CLI and by scheme/problem compatibility checks.
    """

    dim_q: int
    dim_w: int
    grad_V: Callable[[np.ndarray], np.ndarray]
    potential_V: Callable[[np.ndarray], np.ndarray]
    sigma: np.ndarray
    initial: PhaseState
    poly_degree: Optional[int] = None
    closed_form_avf: Optional[Callable] = None
    hess_V: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (self.dim_q, self.dim_w):
            raise ValueError(
                f"sigma must have shape ({self.dim_q}, {self.dim_w}), got {sigma.shape}"
            )
        if self.initial.m != self.dim_q:
            raise ValueError("initial state dimension does not match dim_q")
        object.__setattr__(self, "sigma", sigma)

    @property
    def noise_trace(self) -> float:
        """tr(sigma^T sigma); the expected energy grows by half this per unit time."""
        return float(np.sum(self.sigma * self.sigma))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps of size h = t_end / n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > 0.0):
            raise ValueError("t_end must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    @property
    def h(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h


def energy(problem: HamiltonianProblem, state: PhaseState) -> float:
    """Total energy H(p, q) = |p|^2/2 + V(q) of a single state."""
    if state.m != problem.dim_q:
        raise ValueError(
            f"state dimension {state.m} does not match problem dimension {problem.dim_q}"
        )
    return 0.5 * float(np.dot(state.p, state.p)) + float(problem.potential_V(state.q))


def energy_batch(problem: HamiltonianProblem, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Vectorized energy for arrays of shape (..., m)."""
    return 0.5 * np.sum(p * p, axis=-1) + problem.potential_V(q)


@dataclass(frozen=True)
class BrownianPath:
    """Wiener increments on a dyadic refinement of a base grid.

    ``increments[n, j]`` is the j-th component of ``W(t_{n+1}) - W(t_n)`` for
    steps of size ``h``; a path at level ``level`` carries ``2**level``
    increments per base-grid step.  ``area_increments``, when present, holds
    the matching time-integrated increments ``\\int (W(s) - W(t_n)) ds`` used
    by the splitting scheme.
    """

    level: int
    d: int
    increments: np.ndarray
    seed: int
    stream_id: int
    h: float
    area_increments: Optional[np.ndarray] = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.d:
            raise ValueError(f"increments must have shape (n, {self.d})")
        if self.level < 0:
            raise ValueError("level must be non-negative")
        object.__setattr__(self, "increments", inc)
        if self.area_increments is not None:
            area = np.asarray(self.area_increments, dtype=float)
            if area.shape != inc.shape:
                raise ValueError("area_increments must match increments in shape")
            object.__setattr__(self, "area_increments", area)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def sample_path(
    seed: int,
    stream_id: int,
    grid: TimeGrid,
    d: int,
    with_area: bool = False,
    level: int = 0,
) -> BrownianPath:
    """Draw a Brownian path on ``grid`` refined ``level`` times.

    The path has ``grid.n_steps * 2**level`` increments of step
    ``grid.h / 2**level``, each ~ N(0, h I_d).  With ``with_area`` the
    time-integrated increments are drawn jointly from the exact law,
    via ``Z | W ~ N(h W / 2, h^3/12)`` per component.  The draw order is
    fixed (all Wiener increments first, then the area residuals), so a given
    ``(seed, stream_id)`` always reproduces the same arrays.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    n = grid.n_steps * (1 << level)
    h = grid.h / (1 << level)
    rng = stream_generator(seed, stream_id, _TAG_PATH)
    dw = rng.normal(0.0, np.sqrt(h), size=(n, d))
    area = None
    if with_area:
        area = 0.5 * h * dw + rng.normal(0.0, np.sqrt(h**3 / 12.0), size=(n, d))
    return BrownianPath(
        level=level,
        d=d,
        increments=dw,
        seed=seed,
        stream_id=stream_id,
        h=h,
        area_increments=area,
    )


def _exact_pair_split(w: np.ndarray, xi: np.ndarray):
    """Split each increment w into (w/2 + xi, w/2 - xi) with a bitwise-exact sum.

    Floating-point rounding can make ``(w/2 + xi) + (w/2 - xi)`` differ from
    ``w`` in the last ulp, so the second half is nudged until the pair sums
    back to ``w`` exactly.
    """
    first = 0.5 * w + xi
    second = w - first
    total = first + second
    for _ in range(16):
        bad = total != w
        if not np.any(bad):
            return first, second
        second = np.where(bad, second + (w - total), second)
        total = first + second
    raise RuntimeError("could not build an exactly summable increment pair")


def refine(path: BrownianPath) -> BrownianPath:
    """Refine a path one dyadic level by Brownian-bridge splitting.

    Conditioned on the coarse path, each coarse increment w splits into
    ``(w/2 + xi, w/2 - xi)`` with ``xi ~ N(0, h_coarse/4 I_d)``; the pair sums
    back to the coarse increment bit-exactly.  The refinement noise is keyed
    by ``(seed, stream_id, level)`` so refining the same path twice yields the
    same child.  Area increments are not propagated.
    """
    child_level = path.level + 1
    rng = stream_generator(path.seed, path.stream_id, _TAG_REFINE, child_level)
    xi = rng.normal(0.0, np.sqrt(path.h / 4.0), size=path.increments.shape)
    first, second = _exact_pair_split(path.increments, xi)
    fine = np.empty((2 * path.n_steps, path.d))
    fine[0::2] = first
    fine[1::2] = second
    return BrownianPath(
        level=child_level,
        d=path.d,
        increments=fine,
        seed=path.seed,
        stream_id=path.stream_id,
        h=path.h / 2.0,
    )


def coarsen(path: BrownianPath) -> BrownianPath:
    """Merge increments pairwise, halving the resolution.

    The coarse Wiener increments are the exact pairwise sums of the fine
    ones.  Area increments transform as ``Z_c = Z_1 + Z_2 + h Z-shift``,
    i.e. ``Z_{2n} + Z_{2n+1} + h W_{2n}`` with h the fine step, which is the
    pathwise-exact merge of the time-integrated increments.
    """
    if path.level < 1:
        raise ValueError("cannot coarsen below the base grid (level 0)")
    if path.n_steps % 2 != 0:
        raise ValueError("need an even number of increments to coarsen")
    w = path.increments
    coarse = w[0::2] + w[1::2]
    area = None
    if path.area_increments is not None:
        z = path.area_increments
        area = z[0::2] + z[1::2] + path.h * w[0::2]
    return BrownianPath(
        level=path.level - 1,
        d=path.d,
        increments=coarse,
        seed=path.seed,
        stream_id=path.stream_id,
        h=path.h * 2.0,
        area_increments=area,
    )
