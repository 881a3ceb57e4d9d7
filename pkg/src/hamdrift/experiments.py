"""Experiment drivers and their CSV output.

Every driver emits an RFC-4180 style CSV with ``#``-prefixed metadata lines
recording the full configuration, the seed and the code version, so any
output file can be reproduced from its own header
(:func:`config_from_csv_header` + :func:`run_experiment`).  Identical
configurations produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from ._version import __version__
from .estimators import (McConfig, mc_estimate, mlmc_estimate, MlmcConfig,
                         stream_id_for)
from .integrators import (SchemeId, SolverConfig, dp_step, em_step, bem_step,
                          stm_step, symp_step, split_step, evolve)
from .model import TimeGrid, energy, sample_path
from .problems import make_problem, oscillator_exact_moments
from .verification import affine_moment_recursion, extract_affine, fit_order

EXPERIMENTS = ("trace", "strong", "weak", "mlmc", "step")

# Seed offset keeping the matched single-level comparison run on streams
# disjoint from the multilevel estimator's.
_SINGLE_LEVEL_SEED_OFFSET = 0x9E3779B9


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat description of one experiment run; all fields serialize to the
    CSV header and to the key-value config file format."""

    experiment: str
    problem: str = "oscillator"
    schemes: tuple = ("dp",)
    t_end: float = 1.0
    n_steps: Optional[int] = None
    h_list: Optional[tuple] = None
    samples: int = 1000
    seed: int = 12345
    levels: int = 4
    epsilon: float = 0.5
    mode: str = "mc"
    reference_scheme: str = "stm"
    h_ref: Optional[float] = None
    functional: str = "energy"
    solver_method: str = "fixed_point"
    solver_tol: float = 1e-12
    dw: Optional[tuple] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"choose from {EXPERIMENTS}")
        schemes = tuple(SchemeId.from_name(s).value for s in self.schemes)
        object.__setattr__(self, "schemes", schemes)
        if self.h_list is not None:
            h_list = tuple(float(h) for h in self.h_list)
            if any(b >= a for a, b in zip(h_list, h_list[1:])):
                raise ValueError("h values must be strictly decreasing")
            object.__setattr__(self, "h_list", h_list)
        if "stm" in schemes and self.problem != "oscillator":
            raise ValueError("the trigonometric method is only valid for the "
                             "oscillator problem")
        if self.experiment == "weak" and self.mode not in ("exact", "mc"):
            raise ValueError("weak mode must be 'exact' or 'mc'")
        if self.dw is not None:
            object.__setattr__(self, "dw", tuple(float(x) for x in self.dw))

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.solver_tol, method=self.solver_method)


def build_problem(cfg: ExperimentConfig):
    return make_problem(cfg.problem, sigma=cfg.sigma, alpha=cfg.alpha,
                        scale=cfg.scale)


# --- configuration serialization -------------------------------------------

def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_key_values(cfg: ExperimentConfig) -> list:
    pairs = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        pairs.append((f.name, _format_value(value)))
    return pairs


_TUPLE_FLOAT_KEYS = {"h_list", "dw"}
_TUPLE_STR_KEYS = {"schemes"}
_INT_KEYS = {"n_steps", "samples", "seed", "levels"}
_FLOAT_KEYS = {"t_end", "epsilon", "h_ref", "solver_tol", "sigma", "alpha", "scale"}


def config_from_key_values(pairs: dict) -> ExperimentConfig:
    """Build a configuration from string key-value pairs.

    Accepts the CLI spelling of the keys too (``t-end``, ``scheme``, ``h``).
    """
    kwargs = {}
    for raw_key, raw in pairs.items():
        key = raw_key.strip().lower().replace("-", "_")
        if key == "scheme":
            key = "schemes"
        if key == "h":
            key = "h_list"
        if key == "solver":
            key = "solver_method"
        raw = raw.strip()
        if key in _TUPLE_FLOAT_KEYS:
            kwargs[key] = tuple(float(x) for x in raw.split(","))
        elif key in _TUPLE_STR_KEYS:
            kwargs[key] = tuple(s.strip() for s in raw.split(","))
        elif key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return ExperimentConfig(**kwargs)


def parse_config_text(text: str) -> dict:
    """Parse the flat ``key = value`` config format; '#' starts a comment."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', "
                             f"got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def config_from_csv_header(path) -> ExperimentConfig:
    """Rebuild the configuration recorded in a CSV output's header block."""
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" not in body:
                continue
            key, _, value = body.partition("=")
            key = key.strip()
            if key == "version":
                continue
            pairs[key] = value.strip()
    return config_from_key_values(pairs)


# --- shared plumbing ---------------------------------------------------------

def _resolve_grid(cfg: ExperimentConfig) -> TimeGrid:
    if cfg.n_steps is not None:
        return TimeGrid(t_end=cfg.t_end, n_steps=cfg.n_steps)
    if cfg.h_list is not None and len(cfg.h_list) == 1:
        h = cfg.h_list[0]
        n = round(cfg.t_end / h)
        if n < 1 or abs(n * h - cfg.t_end) > 1e-9 * cfg.t_end:
            raise ValueError(f"step size {h} does not divide t_end {cfg.t_end}")
        return TimeGrid(t_end=cfg.t_end, n_steps=n)
    raise ValueError("this experiment needs n_steps or a single h")


def _gather_increments(problem, seed, count, grid, level=0, with_area=False):
    dw = np.empty((count, grid.n_steps * (1 << level), problem.dim_w))
    dz = np.empty_like(dw) if with_area else None
    for i in range(count):
        path = sample_path(seed, stream_id_for(0, i), grid, problem.dim_w,
                           with_area=with_area, level=level)
        dw[i] = path.increments
        if with_area:
            dz[i] = path.area_increments
    return dw, dz


def _coarsen_arrays(dw, dz, folds, h):
    """Pairwise-sum increment arrays ``folds`` times (axis -2)."""
    for _ in range(folds):
        if dz is not None:
            dz = dz[..., 0::2, :] + dz[..., 1::2, :] + h * dw[..., 0::2, :]
        dw = dw[..., 0::2, :] + dw[..., 1::2, :]
        h = 2.0 * h
    return dw, dz, h


def _scheme_label(name) -> str:
    return SchemeId.from_name(name).value.upper()


# --- the drivers -------------------------------------------------------------

def run_trace(cfg: ExperimentConfig):
    """Expected energy along the numerical solution versus the exact line.

    Columns: t, exact_line, then one mean and one standard-error column per
    scheme.  All schemes share the same sampled paths.
    """
    problem = build_problem(cfg)
    grid = _resolve_grid(cfg)
    solver = cfg.solver()
    h0 = energy(problem, problem.initial)
    slope = 0.5 * problem.noise_trace
    need_area = "split" in cfg.schemes
    dw, dz = _gather_increments(problem, cfg.seed, cfg.samples, grid,
                                with_area=need_area)
    m = cfg.samples
    q0 = np.broadcast_to(problem.initial.q, (m, problem.dim_q))
    p0 = np.broadcast_to(problem.initial.p, (m, problem.dim_q))

    columns = ["t", "exact_line"]
    series = []
    for name in cfg.schemes:
        _, _, energies = evolve(problem, name, q0, p0, dw, grid.h,
                                solver=solver,
                                area=dz if name == "split" else None,
                                record_energy=True)
        mean = energies.mean(axis=0)
        if m > 1:
            stderr = energies.std(axis=0, ddof=1) / math.sqrt(m)
        else:
            stderr = np.zeros(grid.n_steps + 1)
        label = _scheme_label(name)
        columns += [f"{label}_mean", f"{label}_stderr"]
        series.append((mean, stderr))

    rows = []
    times = grid.times()
    for n, t in enumerate(times):
        row = [t, h0 + slope * t]
        for mean, stderr in series:
            row += [mean[n], stderr[n]]
        rows.append(row)
    return columns, rows


def run_strong(cfg: ExperimentConfig):
    """Root-mean-square errors at t_end against a fine reference trajectory.

    Every scheme at every step size is driven by the same Brownian path as
    the reference run (coarse increments are pairwise sums of the reference
    increments), so the observed decay is the pathwise convergence order.
    Footer rows carry the fitted slope and r^2 per scheme, for the q-error,
    the p-error and their sum.
    """
    problem = build_problem(cfg)
    if not cfg.h_list or len(cfg.h_list) < 2:
        raise ValueError("strong experiment needs a decreasing list of h values")
    if cfg.h_ref is None:
        raise ValueError("strong experiment needs h_ref for the reference run")
    solver = cfg.solver()
    h_coarsest = cfg.h_list[0]
    n_base = round(cfg.t_end / h_coarsest)
    if abs(n_base * h_coarsest - cfg.t_end) > 1e-9 * cfg.t_end:
        raise ValueError("coarsest h must divide t_end")
    ratio = h_coarsest / cfg.h_ref
    level_ref = round(math.log2(ratio))
    if not math.isclose(2.0**level_ref, ratio, rel_tol=1e-12) or level_ref < 0:
        raise ValueError("h_ref must be h_max / 2^k for an integer k")
    for h in cfg.h_list:
        k = math.log2(h / cfg.h_ref)
        if not math.isclose(k, round(k), abs_tol=1e-9) or k < 0:
            raise ValueError(f"h={h} is not dyadically compatible with h_ref")

    base = TimeGrid(t_end=cfg.t_end, n_steps=n_base)
    need_area = "split" in cfg.schemes
    dw_ref, dz_ref = _gather_increments(problem, cfg.seed, cfg.samples, base,
                                        level=level_ref, with_area=need_area)
    m = cfg.samples
    q0 = np.broadcast_to(problem.initial.q, (m, problem.dim_q))
    p0 = np.broadcast_to(problem.initial.p, (m, problem.dim_q))
    q_ref, p_ref = evolve(problem, cfg.reference_scheme, q0, p0, dw_ref,
                          cfg.h_ref, solver=solver, area=dz_ref)

    columns = ["h", "scheme", "rms_error_q", "rms_error_p", "rms_error_sum"]
    rows = []
    per_scheme_points = {name: ([], [], []) for name in cfg.schemes}
    for h in cfg.h_list:
        folds = round(math.log2(h / cfg.h_ref))
        dw, dz, h_eff = _coarsen_arrays(dw_ref, dz_ref, folds, cfg.h_ref)
        for name in cfg.schemes:
            if name == cfg.reference_scheme and folds == 0:
                q, p = q_ref, p_ref
            else:
                q, p = evolve(problem, name, q0, p0, dw, h_eff, solver=solver,
                              area=dz if name == "split" else None)
            rms_q = math.sqrt(float(np.mean(np.sum((q - q_ref) ** 2, axis=-1))))
            rms_p = math.sqrt(float(np.mean(np.sum((p - p_ref) ** 2, axis=-1))))
            rows.append([h, name.upper(), rms_q, rms_p, rms_q + rms_p])
            pts = per_scheme_points[name]
            pts[0].append((h, rms_q))
            pts[1].append((h, rms_p))
            pts[2].append((h, rms_q + rms_p))

    for name in cfg.schemes:
        slopes, r2s = [], []
        for pts in per_scheme_points[name]:
            try:
                fit = fit_order(pts)
                slopes.append(fit.slope)
                r2s.append(fit.r_squared)
            except ValueError:
                slopes.append(float("nan"))
                r2s.append(float("nan"))
        rows.append(["slope", name.upper()] + slopes)
        rows.append(["r_squared", name.upper()] + r2s)
    return columns, rows


def run_weak(cfg: ExperimentConfig):
    """Weak errors in the first and second moments at t_end.

    In ``exact`` mode (oscillator only) the scheme moments come from the
    affine mean/covariance recursion and the reference from the closed-form
    moments, so the curves carry no Monte Carlo noise.  The second-moment
    columns compare centered second moments (variances).  In ``mc`` mode the
    moments are estimated by Monte Carlo against a fine-step reference run
    driven by the same paths.
    """
    problem = build_problem(cfg)
    if not cfg.h_list or len(cfg.h_list) < 2:
        raise ValueError("weak experiment needs a decreasing list of h values")

    columns = ["h", "scheme", "err_mean_q", "err_mean_p",
               "err_second_q", "err_second_p"]
    rows = []
    per_scheme_points = {name: ([], [], [], []) for name in cfg.schemes}

    if cfg.mode == "exact":
        if cfg.problem != "oscillator":
            raise ValueError("exact weak mode requires the oscillator problem")
        if "split" in cfg.schemes:
            raise ValueError("the splitting scheme has no affine form; "
                             "use mc mode")
        sigma = cfg.sigma if cfg.sigma is not None else 1.0
        p0 = float(problem.initial.p[0])
        q0 = float(problem.initial.q[0])
        exact = oscillator_exact_moments(p0, q0, sigma, cfg.t_end)
        mean0 = np.array([q0, p0])
        cov0 = np.zeros((2, 2))
        for h in cfg.h_list:
            n = round(cfg.t_end / h)
            if abs(n * h - cfg.t_end) > 1e-9 * cfg.t_end:
                raise ValueError(f"h={h} does not divide t_end")
            for name in cfg.schemes:
                mats = extract_affine(name, problem, h)
                mean, cov = affine_moment_recursion(mats, mean0, cov0, n)
                errs = [abs(mean[0] - exact.mean_q), abs(mean[1] - exact.mean_p),
                        abs(cov[0, 0] - exact.var_q), abs(cov[1, 1] - exact.var_p)]
                rows.append([h, name.upper()] + errs)
                for pts, e in zip(per_scheme_points[name], errs):
                    pts.append((h, e))
    else:
        h_ref = cfg.h_ref if cfg.h_ref is not None else cfg.h_list[-1] / 4.0
        strong_like = replace(cfg, h_ref=h_ref)
        moments = _mc_moments(strong_like, problem)
        ref = moments.pop("__reference__")
        for h in cfg.h_list:
            for name in cfg.schemes:
                mq, mp, vq, vp = moments[(h, name)]
                errs = [abs(mq - ref[0]), abs(mp - ref[1]),
                        abs(vq - ref[2]), abs(vp - ref[3])]
                rows.append([h, name.upper()] + errs)
                for pts, e in zip(per_scheme_points[name], errs):
                    pts.append((h, e))

    for name in cfg.schemes:
        slopes, r2s = [], []
        for pts in per_scheme_points[name]:
            try:
                fit = fit_order(pts)
                slopes.append(fit.slope)
                r2s.append(fit.r_squared)
            except ValueError:
                slopes.append(float("nan"))
                r2s.append(float("nan"))
        rows.append(["slope", name.upper()] + slopes)
        rows.append(["r_squared", name.upper()] + r2s)
    return columns, rows


def _mc_moments(cfg: ExperimentConfig, problem):
    """Monte Carlo moment estimates per (h, scheme), plus a fine reference."""
    solver = cfg.solver()
    h_coarsest = cfg.h_list[0]
    n_base = round(cfg.t_end / h_coarsest)
    level_ref = round(math.log2(h_coarsest / cfg.h_ref))
    base = TimeGrid(t_end=cfg.t_end, n_steps=n_base)
    need_area = "split" in cfg.schemes
    dw_ref, dz_ref = _gather_increments(problem, cfg.seed, cfg.samples, base,
                                        level=level_ref, with_area=need_area)
    m = cfg.samples
    q0 = np.broadcast_to(problem.initial.q, (m, problem.dim_q))
    p0 = np.broadcast_to(problem.initial.p, (m, problem.dim_q))

    def moments(q, p):
        return (float(np.mean(q[:, 0])), float(np.mean(p[:, 0])),
                float(np.var(q[:, 0], ddof=1)), float(np.var(p[:, 0], ddof=1)))

    q, p = evolve(problem, cfg.reference_scheme, q0, p0, dw_ref, cfg.h_ref,
                  solver=solver, area=dz_ref)
    out = {"__reference__": moments(q, p)}
    for h in cfg.h_list:
        folds = round(math.log2(h / cfg.h_ref))
        dw, dz, h_eff = _coarsen_arrays(dw_ref, dz_ref, folds, cfg.h_ref)
        for name in cfg.schemes:
            q, p = evolve(problem, name, q0, p0, dw, h_eff, solver=solver,
                          area=dz if name == "split" else None)
            out[(h, name)] = moments(q, p)
    return out


def run_mlmc(cfg: ExperimentConfig):
    """Multilevel estimate with per-level statistics and a matched
    single-level comparison run.

    The single-level run uses the finest grid and a sample count chosen
    (from a pilot variance estimate) to match the multilevel standard error;
    its work is reported alongside for the cost comparison.
    """
    problem = build_problem(cfg)
    solver = cfg.solver()
    scheme = cfg.schemes[0]
    mlmc_cfg = MlmcConfig(levels=cfg.levels, epsilon=cfg.epsilon,
                          seed=cfg.seed, t_end=cfg.t_end,
                          functional=cfg.functional)
    report = mlmc_estimate(problem, scheme, mlmc_cfg, solver=solver)

    fine_grid = TimeGrid(t_end=cfg.t_end, n_steps=1 << cfg.levels)
    single_seed = cfg.seed + _SINGLE_LEVEL_SEED_OFFSET
    pilot = mc_estimate(problem, scheme, fine_grid,
                        McConfig(samples=256, seed=single_seed,
                                 functional=cfg.functional), solver=solver)
    pilot_var = pilot.per_level[0].variance
    target_se = report.std_error
    matched = max(2, math.ceil(pilot_var / target_se**2)) if target_se > 0 else 2
    single = mc_estimate(problem, scheme, fine_grid,
                         McConfig(samples=matched, seed=single_seed,
                                  functional=cfg.functional), solver=solver)

    columns = ["level", "samples", "mean", "variance", "work"]
    rows = []
    for stats in report.per_level:
        rows.append([stats.level, stats.samples, stats.mean, stats.variance,
                     stats.work])
    ratio = (report.total_work / single.total_work
             if single.total_work > 0 else float("inf"))
    for label, value in [("estimate", report.estimate),
                         ("std_error", report.std_error),
                         ("total_work", report.total_work),
                         ("single_estimate", single.estimate),
                         ("single_std_error", single.std_error),
                         ("single_samples", matched),
                         ("single_work", single.total_work),
                         ("work_ratio", ratio)]:
        rows.append([label, value, "", "", ""])
    return columns, rows


def run_step(cfg: ExperimentConfig):
    """One inspected step of a single scheme: state before/after, the
    implicit stage value (drift-preserving scheme only), solver iterations
    and the energy change.  Vector entries are ';'-joined."""
    problem = build_problem(cfg)
    if len(cfg.schemes) != 1:
        raise ValueError("step experiment takes exactly one scheme")
    name = cfg.schemes[0]
    if cfg.h_list is None or len(cfg.h_list) != 1:
        raise ValueError("step experiment needs exactly one h")
    h = cfg.h_list[0]
    solver = cfg.solver()
    state = problem.initial
    if cfg.dw is not None:
        dw = np.asarray(cfg.dw, dtype=float)
        if dw.shape != (problem.dim_w,):
            raise ValueError(f"dw must have {problem.dim_w} component(s)")
    else:
        grid = TimeGrid(t_end=h, n_steps=1)
        dw = sample_path(cfg.seed, 0, grid, problem.dim_w).increments[0]

    if name == "dp":
        rec = dp_step(problem, state, dw, h, solver)
    elif name == "em":
        rec = em_step(problem, state, dw, h)
    elif name == "bem":
        rec = bem_step(problem, state, dw, h, solver)
    elif name == "stm":
        if problem.label != "oscillator":
            raise ValueError("the trigonometric method requires the oscillator")
        rec = stm_step(state, dw, h, float(problem.sigma[0, 0]))
    elif name == "symp":
        rec = symp_step(problem, state, dw, h)
    else:
        grid = TimeGrid(t_end=h, n_steps=1)
        path = sample_path(cfg.seed, 0, grid, problem.dim_w, with_area=True)
        rec = split_step(problem, state, dw, path.area_increments[0], h)

    def joined(vec):
        return ";".join(repr(float(x)) for x in np.atleast_1d(vec))

    delta_h = energy(problem, rec.state) - energy(problem, state)
    columns = ["scheme", "h", "q_before", "p_before", "dw", "q_after",
               "p_after", "psi", "solver_iters", "energy_delta"]
    rows = [[name.upper(), h, joined(state.q), joined(state.p), joined(dw),
             joined(rec.state.q), joined(rec.state.p),
             joined(rec.psi) if rec.psi is not None else "",
             rec.solver_iters, delta_h]]
    return columns, rows


_DRIVERS = {
    "trace": run_trace,
    "strong": run_strong,
    "weak": run_weak,
    "mlmc": run_mlmc,
    "step": run_step,
}


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def render_csv(cfg: ExperimentConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write("# hamdrift experiment output\n")
    buf.write(f"# version = {__version__}\n")
    for key, value in config_to_key_values(cfg):
        buf.write(f"# {key} = {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, output=None) -> str:
    """Run the configured experiment; return the CSV text and optionally
    write it to ``output`` (a path, or '-' for stdout)."""
    columns, rows = _DRIVERS[cfg.experiment](cfg)
    text = render_csv(cfg, columns, rows)
    if output is not None and output != "-":
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif output == "-":
        print(text, end="")
    return text
