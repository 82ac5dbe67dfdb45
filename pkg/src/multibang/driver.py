"""Semismooth Newton iteration with backtracking and continuation.

The outer loop halves the regularization parameter, warm-starting each
level from the previous solution; the inner loop is a damped Newton
method on the reduced optimality system.  Step lengths are halved until
the residual decreases; once the step would drop below the minimal one,
the minimal step is accepted even if the residual grows (flagged as
non-monotone).  The Newton budget is cumulative over all levels, with a
per-level cap as a safety net against stagnating levels.
"""

import time
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import diffusion as _diffusion
from . import potential as _potential
from .grid import ScalarField, SingularSystem, sparse_solve
from .potential import NewtonIterate


class NonFiniteResidual(RuntimeError):
    """Every trial step produced a NaN or infinite residual."""


@dataclass
class ContinuationSettings:
    """Protocol constants; defaults encode the reference experiments."""

    gamma0: float = 1.0
    gamma_factor: float = 0.5
    gamma_min: float = 1e-12
    max_total_newton: int = 300
    inner_tol_rel: float = 1e-10
    inner_tol_abs: float = None
    min_step: float = 1e-6
    max_backtracks: int = 25
    max_level_newton: int = 50

    def __post_init__(self):
        if not 0.0 < self.gamma_factor < 1.0:
            raise ValueError("gamma_factor must lie in (0, 1)")
        if not self.gamma_min <= self.gamma0:
            raise ValueError("gamma_min must not exceed gamma0")
        if not 0.0 < self.min_step <= 1.0:
            raise ValueError("min_step must lie in (0, 1]")
        if not self.inner_tol_rel > 0.0:
            raise ValueError("inner_tol_rel must be positive")
        if self.inner_tol_abs is not None and not self.inner_tol_abs > 0.0:
            raise ValueError("inner_tol_abs must be positive")

    def abs_tol(self, grid):
        # default scales with the number of stacked unknowns
        if self.inner_tol_abs is not None:
            return self.inner_tol_abs
        return 1e-11 * np.sqrt(2.0 * grid.size)


StepRecord = namedtuple(
    "StepRecord", "gamma iteration residual step_length monotone")

LineSearchResult = namedtuple(
    "LineSearchResult", "iterate sigma monotone residual")


@dataclass
class LevelRecord:
    """Diagnostics of one fixed-gamma solve."""

    gamma: float
    iterations: int = 0
    initial_residual: float = np.nan
    final_residual: float = np.nan
    converged: bool = False
    trigger: str = ""
    steps: list = field(default_factory=list)

    def residual_ratios(self):
        norms = [self.initial_residual] + [s.residual for s in self.steps]
        return [b / a for a, b in zip(norms, norms[1:])]


@dataclass
class RunReport:
    """Full continuation history plus the last fully converged iterate."""

    levels: list
    reason: str
    newton_total: int
    final_gamma: float
    wall_time: float
    iterate: object


def _ops(problem):
    if isinstance(problem, _potential.PotentialProblem):
        return _potential
    if isinstance(problem, _diffusion.DiffusionProblem):
        return _diffusion
    raise TypeError("unsupported problem type %r" % type(problem).__name__)


def newton_step(problem, it):
    """Solve the linearized system for the update pair (dy, dw)."""
    ops = _ops(problem)
    r1, r2 = ops.residual(problem, it)
    rhs = -np.concatenate([r1.data, r2.data])
    system = ops.newton_system(problem, it)
    delta = sparse_solve(system.matrix, rhs)
    m = it.y.grid.size
    grid = it.y.grid
    return ScalarField(grid, delta[:m]), ScalarField(grid, delta[m:])


def _trial(problem, it, dy, dw, sigma):
    # overflow in a trial residual is handled by backtracking, not reported
    ops = _ops(problem)
    cand = NewtonIterate(
        ScalarField(it.y.grid, it.y.data + sigma * dy.data),
        ScalarField(it.w.grid, it.w.data + sigma * dw.data),
        it.gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        r1, r2 = ops.residual(problem, cand)
        return cand, ops.residual_norm(r1, r2)


def line_search(problem, it, delta, settings, current_residual=None):
    """Backtracking from a full step; the minimal step is accepted without
    decrease and flagged as non-monotone."""
    ops = _ops(problem)
    dy, dw = delta
    if current_residual is None:
        r1, r2 = ops.residual(problem, it)
        current_residual = ops.residual_norm(r1, r2)
    sigma = 1.0
    fallback = None
    for _ in range(settings.max_backtracks + 1):
        cand, norm = _trial(problem, it, dy, dw, sigma)
        if np.isfinite(norm):
            if norm < current_residual:
                return LineSearchResult(cand, sigma, True, norm)
            if fallback is None or norm < fallback.residual:
                fallback = LineSearchResult(cand, sigma, False, norm)
        if sigma / 2.0 < settings.min_step:
            break
        sigma /= 2.0
    cand, norm = _trial(problem, it, dy, dw, settings.min_step)
    if np.isfinite(norm):
        return LineSearchResult(cand, settings.min_step, False, norm)
    if fallback is not None:
        return fallback
    raise NonFiniteResidual(
        "residual non-finite for every step length down to %g"
        % settings.min_step)


def solve_fixed_gamma(problem, it0, settings, budget_used=0):
    """Newton iteration at fixed gamma until the inner tolerance or a
    budget boundary; returns the last iterate and the level record."""
    ops = _ops(problem)
    record = LevelRecord(gamma=it0.gamma)
    r1, r2 = ops.residual(problem, it0)
    norm = ops.residual_norm(r1, r2)
    record.initial_residual = norm
    tol = max(settings.abs_tol(it0.y.grid), settings.inner_tol_rel * norm)
    it = it0
    while norm > tol:
        if budget_used + record.iterations >= settings.max_total_newton:
            record.trigger = "budget"
            break
        if record.iterations >= settings.max_level_newton:
            record.trigger = "level_cap"
            break
        try:
            delta = newton_step(problem, it)
            result = line_search(
                problem, it, delta, settings, current_residual=norm)
        except (SingularSystem, NonFiniteResidual) as err:
            record.trigger = "aborted"
            record.final_residual = norm
            err.level_record = record
            raise
        record.iterations += 1
        it, norm = result.iterate, result.residual
        record.steps.append(StepRecord(
            it.gamma, record.iterations, norm, result.sigma, result.monotone))
    record.final_residual = norm
    record.converged = norm <= tol
    return it, record


def continuation(problem, settings=None):
    """Run the full gamma-halving protocol from the zero start."""
    if settings is None:
        settings = ContinuationSettings()
    start = time.perf_counter()
    grid = problem.grid
    it = NewtonIterate(
        ScalarField.zeros(grid), ScalarField.zeros(grid), settings.gamma0)
    levels = []
    total = 0
    reason = None
    best = it
    best_gamma = None
    gamma = settings.gamma0
    while gamma >= settings.gamma_min:
        if total >= settings.max_total_newton:
            reason = "max_newton"
            break
        it = NewtonIterate(it.y, it.w, gamma)
        try:
            it, record = solve_fixed_gamma(
                problem, it, settings, budget_used=total)
        except (SingularSystem, NonFiniteResidual) as err:
            levels.append(err.level_record)
            reason = "aborted"
            break
        levels.append(record)
        total += record.iterations
        if not record.converged:
            reason = "max_newton"
            break
        best = it
        best_gamma = gamma
        gamma *= settings.gamma_factor
    if reason is None:
        reason = "gamma_min"
    wall = time.perf_counter() - start
    return RunReport(levels, reason, total, best_gamma, wall, best)


def report_to_text(report):
    """Structured plain-text rendering: one line per Newton step."""
    lines = ["step records (gamma, iteration, residual, step, flags)"]
    for level in report.levels:
        lines.append("level gamma=%.6e initial_residual=%.6e"
                     % (level.gamma, level.initial_residual))
        for s in level.steps:
            flag = "monotone" if s.monotone else "non-monotone"
            lines.append("  gamma=%.6e it=%2d residual=%.6e step=%.3e %s"
                         % (s.gamma, s.iteration, s.residual,
                            s.step_length, flag))
        tail = "converged" if level.converged else ("stopped:%s" % level.trigger)
        lines.append("  level end: iterations=%d final_residual=%.6e %s"
                     % (level.iterations, level.final_residual, tail))
    lines.append("termination reason: %s" % report.reason)
    lines.append("newton iterations total: %d" % report.newton_total)
    lines.append("final converged gamma: %s"
                 % ("none" if report.final_gamma is None
                    else "%.6e" % report.final_gamma))
    lines.append("wall time seconds: %.3f" % report.wall_time)
    return "\n".join(lines) + "\n"
