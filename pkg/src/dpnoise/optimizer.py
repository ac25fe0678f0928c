"""Variance-constrained minimization of the worst-shift Renyi objective.

The decision variable is the mass vector of a TailedNoiseFamily with fixed
tail rate, tail start and bin width.  Two linear equalities pin the total
mass to one and the variance to the budget.  Each step projects a
diagonally preconditioned gradient of log g onto the constraint null space
and backtracks over a halving ladder of step sizes; the Renyi order is
re-tuned periodically by a safeguarded Newton update on the accountant
bound.  Using log g instead of g changes neither the direction nor the
candidate set (the ladder top is renormalized by the same factor), but
keeps every intermediate finite at large orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import (
    BisectionFailure,
    RangeViolation,
    SingularProjection,
    StrictFeasibilityViolation,
)
from .family import (
    DomainKind,
    TailedNoiseFamily,
    normalization_sum,
    tail_second_moment,
)
from .rdp import check_order, g_max, grad_log_g, shift_count


@dataclass(frozen=True)
class OptimizationProblem:
    """What to optimize: variance budget, sensitivity, privacy target, shape.

    The variance budget must exceed the smallest variance any family of
    this shape can have (bin_width^2/12 for continuous, 0 for discrete);
    initialization fails with BisectionFailure otherwise.
    """

    sigma: float
    sensitivity: float
    target_delta: float
    compositions: int
    kind: DomainKind
    tail_start: int
    tail_rate: float
    bin_width: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise RangeViolation(f"sigma must be positive, got {self.sigma}")
        if not (0.0 < self.target_delta < 1.0):
            raise RangeViolation(f"target_delta must lie in (0, 1), got {self.target_delta}")
        if int(self.compositions) != self.compositions or self.compositions < 1:
            raise RangeViolation(f"compositions must be a positive integer, got {self.compositions}")
        if int(self.tail_start) != self.tail_start or self.tail_start < 1:
            raise RangeViolation(f"tail_start must be a positive integer, got {self.tail_start}")
        if not (0.0 < self.tail_rate < 1.0):
            raise RangeViolation(f"tail_rate must lie in (0, 1), got {self.tail_rate}")
        if not (self.bin_width > 0.0 and math.isfinite(self.bin_width)):
            raise RangeViolation(f"bin_width must be positive, got {self.bin_width}")
        if self.kind is DomainKind.DISCRETE and self.bin_width != 1.0:
            raise RangeViolation("discrete problems require bin_width == 1")
        shift_count(self.sensitivity, self.bin_width)
        object.__setattr__(self, "compositions", int(self.compositions))
        object.__setattr__(self, "tail_start", int(self.tail_start))


@dataclass
class SolverSettings:
    """Iteration budget and numeric knobs; defaults match the reference runs."""

    iterations: int = 500
    alpha_update_period: int = 25
    backtracking_depth: int = 10
    bisection_rel_tol: float = 1e-9
    bisection_max_iter: int = 200
    alpha_floor: float = 1.001
    #: Relative step for the Newton finite differences: h = fd_step_alpha * alpha.
    fd_step_alpha: float = 1e-4


@dataclass(frozen=True)
class ConstraintSystem:
    """Rows: expected quadratic cost (head part) and total mass."""

    coeffs: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True)
class StepReport:
    accepted: bool
    converged: bool
    t_star: int
    log_g: float
    g_value: float
    step_size: Optional[float]
    residual: float


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    g_value: float
    log_g: float
    gamma: float
    alpha: float
    t_star: int
    step_size: Optional[float]
    residual: float
    accepted: bool


@dataclass(frozen=True)
class OptimizedNoise:
    family: TailedNoiseFamily
    final_alpha: float
    trace: tuple


def alpha_init(sigma: float, sensitivity: float, target_delta: float, compositions: int) -> float:
    """Starting Renyi order: the moments-optimal order of the matching Gaussian."""
    return math.sqrt(2.0 * math.log(1.0 / target_delta) / compositions) * (sigma / sensitivity) + 1.0


def build_constraints(problem: OptimizationProblem) -> ConstraintSystem:
    """Equality system A p = b for the quadratic-cost budget and unit mass."""
    n, r, w = problem.tail_start, problem.tail_rate, problem.bin_width
    i = np.arange(n + 1, dtype=float)
    cost = 2.0 * w * w * i * i
    cost[0] = 0.0
    cost[n] = 2.0 * w * w * tail_second_moment(n, r)
    mass = np.full(n + 1, 2.0)
    mass[0] = 1.0
    mass[n] = 2.0 / (1.0 - r)
    budget = problem.sigma**2
    if problem.kind is DomainKind.CONTINUOUS:
        budget -= w * w / 12.0
    return ConstraintSystem(coeffs=np.vstack([cost, mass]), rhs=np.array([budget, 1.0]))


def _head_variance(probs: np.ndarray, tail_rate: float, bin_width: float, kind: DomainKind) -> float:
    n = probs.size - 1
    i = np.arange(1, n, dtype=float)
    out = 2.0 * float(probs[1:-1] @ (i * i)) + 2.0 * probs[-1] * tail_second_moment(n, tail_rate)
    out *= bin_width * bin_width
    if kind is DomainKind.CONTINUOUS:
        out += bin_width * bin_width / 12.0
    return out


def _gaussian_shape(chat: float, problem: OptimizationProblem) -> np.ndarray:
    """Bin masses of an N(0, chat) profile with the geometric tail anchored at N."""
    sd = math.sqrt(chat)
    edges = (np.arange(problem.tail_start + 1) - 0.5) * problem.bin_width / sd
    upper = ndtr(-edges)
    vec = np.empty(problem.tail_start + 1)
    vec[:-1] = upper[:-1] - upper[1:]
    vec[-1] = (1.0 - problem.tail_rate) * upper[-1]
    return vec / normalization_sum(vec, problem.tail_rate)


def _project_exact(probs: np.ndarray, constraints: ConstraintSystem) -> np.ndarray:
    """Multiplicative-metric correction onto {A p = b}; preserves positivity
    for small residuals."""
    p = probs
    for _ in range(3):
        resid = constraints.rhs - constraints.coeffs @ p
        if np.max(np.abs(resid)) <= 1e-14 * max(1.0, float(np.abs(constraints.rhs).max())):
            break
        scaled = constraints.coeffs * p[None, :]
        gram = scaled @ scaled.T
        p = p + p * (scaled.T @ np.linalg.solve(gram, resid))
    return p


def init_distribution(
    problem: OptimizationProblem, settings: SolverSettings | None = None
) -> TailedNoiseFamily:
    """Gaussian-shaped start meeting both equalities.

    Bisects the profile variance parameter until the family variance matches
    the budget, then applies an exact constraint correction so the iterate
    feasibility bound holds from the first step.
    """
    settings = settings or SolverSettings()
    target = problem.sigma**2
    floor = problem.bin_width**2 / 12.0 if problem.kind is DomainKind.CONTINUOUS else 0.0
    if target <= floor:
        raise BisectionFailure(
            f"variance budget {target} does not exceed the attainable floor {floor}"
        )
    lo, hi = 0.0, 2.0 * target
    vec = _gaussian_shape(hi, problem)
    if _head_variance(vec, problem.tail_rate, problem.bin_width, problem.kind) < target:
        raise BisectionFailure(
            "bracket [0, 2 sigma^2] does not straddle the budget; "
            "tail_start * bin_width is too small relative to sigma"
        )
    for _ in range(settings.bisection_max_iter):
        mid = 0.5 * (lo + hi)
        vec = _gaussian_shape(mid, problem)
        var = _head_variance(vec, problem.tail_rate, problem.bin_width, problem.kind)
        if abs(var - target) <= settings.bisection_rel_tol * target:
            break
        if var < target:
            lo = mid
        else:
            hi = mid
    vec = _project_exact(vec, build_constraints(problem))
    if vec.min() <= 0.0:
        raise StrictFeasibilityViolation(
            "initial masses underflow to zero; tail_start is too large relative to sigma/bin_width"
        )
    return TailedNoiseFamily(
        probs=vec, tail_rate=problem.tail_rate, bin_width=problem.bin_width, kind=problem.kind
    )


def descent_step(
    family: TailedNoiseFamily,
    alpha: float,
    sensitivity: float,
    constraints: ConstraintSystem,
    settings: SolverSettings | None = None,
) -> tuple[TailedNoiseFamily, StepReport]:
    """One projected, preconditioned, backtracked descent step.

    The candidate with the largest decrease of the worst-shift objective is
    accepted; candidates that touch zero mass are rejected outright.  With
    no strictly improving candidate the family is returned unchanged.
    """
    settings = settings or SolverSettings()
    report = g_max(family, sensitivity, alpha)
    direction = family.probs * grad_log_g(family, report.t_star, alpha)
    scaled = constraints.coeffs * family.probs[None, :]
    gram = scaled @ scaled.T
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e12:
        raise SingularProjection(
            f"constraint Gram matrix condition {np.linalg.cond(gram):.3e} exceeds 1e12"
        )
    projected = direction - scaled.T @ np.linalg.solve(gram, scaled @ direction)

    def _residual(fam: TailedNoiseFamily) -> float:
        return float(np.max(np.abs(constraints.coeffs @ fam.probs - constraints.rhs)))

    positive = projected > 0.0
    if not positive.any():
        return family, StepReport(
            accepted=False,
            converged=True,
            t_star=report.t_star,
            log_g=report.log_g,
            g_value=report.g_value,
            step_size=None,
            residual=_residual(family),
        )
    mu_ub = 1.0 / float(projected[positive].max())
    best = None
    for k in range(settings.backtracking_depth + 1):
        mu = mu_ub * 0.5**k
        cand = family.probs * (1.0 - mu * projected)
        if cand.min() <= 0.0:
            continue
        cand_fam = TailedNoiseFamily(
            probs=cand, tail_rate=family.tail_rate, bin_width=family.bin_width, kind=family.kind
        )
        cand_rep = g_max(cand_fam, sensitivity, alpha)
        if not math.isfinite(cand_rep.log_g):
            continue
        if cand_rep.log_g < (best[1].log_g if best else report.log_g):
            best = (cand_fam, cand_rep, mu)
    if best is None:
        return family, StepReport(
            accepted=False,
            converged=False,
            t_star=report.t_star,
            log_g=report.log_g,
            g_value=report.g_value,
            step_size=None,
            residual=_residual(family),
        )
    cand_fam, cand_rep, mu = best
    return cand_fam, StepReport(
        accepted=True,
        converged=False,
        t_star=cand_rep.t_star,
        log_g=cand_rep.log_g,
        g_value=cand_rep.g_value,
        step_size=mu,
        residual=_residual(cand_fam),
    )


def moments_gamma(
    family: TailedNoiseFamily,
    sensitivity: float,
    alpha: float,
    compositions: int,
    target_delta: float,
) -> float:
    """Accountant bound at a fixed order: (N_c log g + log(1/delta)) / (alpha - 1)."""
    report = g_max(family, sensitivity, alpha)
    return (compositions * report.log_g + math.log(1.0 / target_delta)) / (alpha - 1.0)


def newton_alpha(
    family: TailedNoiseFamily,
    sensitivity: float,
    alpha: float,
    compositions: int,
    target_delta: float,
    settings: SolverSettings | None = None,
) -> float:
    """Safeguarded Newton update of the order on the accountant bound.

    Derivatives are central finite differences; the update is kept only if
    it does not increase the bound and stays above the order floor.
    """
    settings = settings or SolverSettings()
    alpha = check_order(alpha)

    def gamma(a: float) -> float:
        return moments_gamma(family, sensitivity, a, compositions, target_delta)

    h = min(settings.fd_step_alpha * alpha, 0.49 * (alpha - 1.0))
    if h <= 0.0:
        return alpha
    g_mid, g_hi, g_lo = gamma(alpha), gamma(alpha + h), gamma(alpha - h)
    if not all(map(math.isfinite, (g_mid, g_hi, g_lo))):
        return alpha
    second = (g_hi - 2.0 * g_mid + g_lo) / (h * h)
    if not math.isfinite(second) or second <= 0.0:
        return alpha
    candidate = alpha - (g_hi - g_lo) / (2.0 * h) / second
    if not math.isfinite(candidate) or candidate <= settings.alpha_floor:
        return alpha
    if gamma(candidate) <= g_mid:
        return candidate
    return alpha


def optimize(problem: OptimizationProblem, settings: SolverSettings | None = None) -> OptimizedNoise:
    """Full pipeline: initialize, iterate descent steps, retune the order.

    Runs exactly ``settings.iterations`` steps; the trace records the
    worst-shift objective, the accountant bound, and feasibility residual
    at every iteration.  Deterministic: no randomness anywhere.
    """
    settings = settings or SolverSettings()
    alpha = max(
        alpha_init(problem.sigma, problem.sensitivity, problem.target_delta, problem.compositions),
        settings.alpha_floor + 1e-9,
    )
    fam = init_distribution(problem, settings)
    constraints = build_constraints(problem)
    log_penalty = math.log(1.0 / problem.target_delta)
    trace = []
    for iteration in range(1, settings.iterations + 1):
        fam, step = descent_step(fam, alpha, problem.sensitivity, constraints, settings)
        gamma = (problem.compositions * step.log_g + log_penalty) / (alpha - 1.0)
        trace.append(
            TraceRecord(
                iteration=iteration,
                g_value=step.g_value,
                log_g=step.log_g,
                gamma=gamma,
                alpha=alpha,
                t_star=step.t_star,
                step_size=step.step_size,
                residual=step.residual,
                accepted=step.accepted,
            )
        )
        if iteration % settings.alpha_update_period == 0:
            alpha = newton_alpha(
                fam, problem.sensitivity, alpha, problem.compositions, problem.target_delta, settings
            )
    return OptimizedNoise(family=fam, final_alpha=alpha, trace=tuple(trace))
