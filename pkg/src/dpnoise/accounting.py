"""Conversion from noise families to (epsilon, delta) guarantees.

Two accountants are provided.  The moments route turns a Renyi divergence
evaluator into an epsilon bound by optimizing the order.  The privacy-loss
route bins the per-outcome loss log(P(i)/P(i-t)) onto a uniform grid with
ceiling rounding (every mass moves to a loss at least as large, so the
reported epsilon is an upper bound), composes by convolution, and reads
delta off the composed distribution.  Tail regions, where the loss is
exactly constant at +-t*log(1/r), contribute closed-form masses rather
than truncation error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import fftconvolve

from .errors import GridOverflow, RangeViolation, SearchFailure, Unattainable
from .family import SCHEMA_VERSION, TailedNoiseFamily
from .rdp import check_order, g_max, shift_count

logger = logging.getLogger(__name__)

#: Above this product of operand lengths, convolution switches to FFT.
_DIRECT_CONV_LIMIT = 4_000_000
#: Hard cap on composed grid length.
MAX_GRID_LEN = 1 << 24


@dataclass(frozen=True)
class PrivacyLossDistribution:
    """Distribution of the privacy loss on a uniform grid.

    Loss values are ``(origin + j) * grid_step`` for the j-th mass.
    ``inf_mass`` collects outcomes with infinite loss.  ``pessimistic``
    records the rounding direction used when the grid was built.
    """

    grid_step: float
    origin: int
    masses: np.ndarray
    inf_mass: float = 0.0
    pessimistic: bool = True

    def __post_init__(self):
        if not (self.grid_step > 0.0 and math.isfinite(self.grid_step)):
            raise RangeViolation(f"grid_step must be positive, got {self.grid_step}")
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or masses.size == 0:
            raise RangeViolation("masses must be a nonempty 1-D array")
        if masses.min() < -1e-12:
            raise RangeViolation(f"negative loss mass {masses.min()}")
        masses = np.maximum(masses, 0.0)
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        if not (0.0 <= self.inf_mass <= 1.0):
            raise RangeViolation(f"inf_mass must lie in [0, 1], got {self.inf_mass}")
        total = float(masses.sum()) + self.inf_mass
        if abs(total - 1.0) > 1e-8:
            raise RangeViolation(f"loss masses plus inf_mass sum to {total}, expected 1")

    @property
    def losses(self) -> np.ndarray:
        return (self.origin + np.arange(self.masses.size)) * self.grid_step

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum()) + self.inf_mass


def pld_from_family(
    family: TailedNoiseFamily,
    shift: int,
    grid_step: float = 5e-3,
    tail_cutoff: float = 1e-15,
    pessimistic: bool = True,
) -> PrivacyLossDistribution:
    """Loss distribution of one query at integer shift t.

    Head outcomes are enumerated at least through |i| <= N + t; beyond the
    enumerated range the loss is constant (+-t log(1/r)) and the remaining
    geometric mass is placed there in closed form, so nothing is dropped.
    ``tail_cutoff`` extends the enumeration until the residual mass falls
    below it.  Ceiling rounding onto the grid gives the pessimistic
    distribution; floor rounding the optimistic one.
    """
    shift = int(shift)
    if shift < 0:
        raise RangeViolation(f"shift must be nonnegative, got {shift}")
    if not (grid_step > 0.0 and math.isfinite(grid_step)):
        raise RangeViolation(f"grid_step must be positive, got {grid_step}")
    n, r = family.tail_start, family.tail_rate
    p_n = float(family.probs[-1])
    cut = n + shift
    if tail_cutoff > 0.0 and p_n > 0.0:
        # Residual beyond |i| <= K is 2 p_N r^(K+1-N) / (1-r).
        need = math.log(tail_cutoff * (1.0 - r) / (2.0 * p_n)) / math.log(r) + n - 1.0
        if need > cut:
            cut = int(min(need, cut + 2_000_000)) + 1
    idx = np.arange(-cut, cut + 1)
    prob = family.mass_at(idx)
    loss = family.log_mass_at(idx) - family.log_mass_at(idx - shift)
    grid_idx = np.ceil(loss / grid_step) if pessimistic else np.floor(loss / grid_step)
    grid_idx = grid_idx.astype(np.int64)
    # Exact geometric residuals land at the constant tail losses.
    residual = p_n * r ** (cut + 1 - n) / (1.0 - r)
    tail_loss = shift * math.log(1.0 / r)
    rounder = math.ceil if pessimistic else math.floor
    extra_idx = np.array(
        [rounder(-tail_loss / grid_step), rounder(tail_loss / grid_step)], dtype=np.int64
    )
    grid_idx = np.concatenate([grid_idx, extra_idx])
    prob = np.concatenate([prob, [residual, residual]])
    lo, hi = int(grid_idx.min()), int(grid_idx.max())
    if hi - lo + 1 > MAX_GRID_LEN:
        raise GridOverflow(
            f"single-query loss grid needs {hi - lo + 1} points (cap {MAX_GRID_LEN})"
        )
    masses = np.bincount(grid_idx - lo, weights=prob, minlength=hi - lo + 1)
    return PrivacyLossDistribution(
        grid_step=grid_step, origin=lo, masses=masses, inf_mass=0.0, pessimistic=pessimistic
    )


def _convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size * b.size <= _DIRECT_CONV_LIMIT:
        return np.convolve(a, b)
    out = fftconvolve(a, b)
    return np.maximum(out, 0.0)


def pld_self_compose(
    pld: PrivacyLossDistribution, compositions: int, max_len: int = MAX_GRID_LEN
) -> PrivacyLossDistribution:
    """Distribution of the summed loss over independent repetitions.

    Exponentiation by squaring keeps the convolution count logarithmic in
    the composition count.  Grid length is capped; exceeding the cap raises
    GridOverflow rather than silently truncating.
    """
    compositions = int(compositions)
    if compositions < 1:
        raise RangeViolation(f"compositions must be >= 1, got {compositions}")
    if compositions == 1:
        return pld

    def guarded(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.size + b.size - 1 > max_len:
            raise GridOverflow(
                f"composed loss grid needs {a.size + b.size - 1} points (cap {max_len})"
            )
        return _convolve(a, b)

    result: Optional[np.ndarray] = None
    result_origin = 0
    base, base_origin = pld.masses, pld.origin
    remaining = compositions
    while remaining:
        if remaining & 1:
            if result is None:
                result, result_origin = base, base_origin
            else:
                result = guarded(result, base)
                result_origin += base_origin
        remaining >>= 1
        if remaining:
            base = guarded(base, base)
            base_origin *= 2
    inf_mass = 1.0 - (1.0 - pld.inf_mass) ** compositions
    # Composition convolves conditional masses; renormalization drift from
    # repeated FFTs stays within the constructor tolerance.
    return PrivacyLossDistribution(
        grid_step=pld.grid_step,
        origin=result_origin,
        masses=result,
        inf_mass=inf_mass,
        pessimistic=pld.pessimistic,
    )


def delta_for_epsilon(pld: PrivacyLossDistribution, epsilon: float) -> float:
    """Smallest delta compatible with the loss distribution at this epsilon."""
    if not math.isfinite(epsilon):
        raise RangeViolation(f"epsilon must be finite, got {epsilon}")
    losses = pld.losses
    mask = losses > epsilon
    # 1 - e^(eps - l) via expm1 keeps precision when l is barely above eps.
    hockey = -np.expm1(epsilon - losses[mask])
    return min(1.0, pld.inf_mass + float(pld.masses[mask] @ hockey))


def epsilon_for_delta(pld: PrivacyLossDistribution, target_delta: float) -> float:
    """Smallest epsilon whose delta does not exceed the target."""
    if not (0.0 < target_delta < 1.0):
        raise RangeViolation(f"target delta must lie in (0, 1), got {target_delta}")
    if target_delta < pld.inf_mass:
        raise Unattainable(
            f"target delta {target_delta} is below the infinite-loss mass {pld.inf_mass}"
        )
    hi = float(pld.losses[-1])
    if delta_for_epsilon(pld, hi) > target_delta:
        # Only inf_mass remains above the top of the grid; equality edge.
        return hi
    lo = min(0.0, float(pld.losses[0]) - pld.grid_step)
    span = max(1.0, float(pld.losses[-1] - pld.losses[0]))
    for _ in range(200):
        if delta_for_epsilon(pld, lo) >= target_delta:
            break
        lo -= span
        span *= 2.0
    else:
        return lo
    if lo >= hi:
        return hi
    return float(brentq(lambda e: delta_for_epsilon(pld, e) - target_delta, lo, hi, xtol=1e-12))


def exact_single_delta(family: TailedNoiseFamily, shift: int, epsilon: float) -> float:
    """Exact single-query delta, no grid: sum of (P(i) - e^eps P(i - t))+.

    Both geometric tails have constant loss, so their contributions reduce
    to closed-form sums with a fixed sign of the integrand.
    """
    shift = int(shift)
    if shift < 0:
        raise RangeViolation(f"shift must be nonnegative, got {shift}")
    if shift == 0:
        return 0.0
    n, r = family.tail_start, family.tail_rate
    p_n = float(family.probs[-1])
    scale = math.exp(epsilon)
    idx = np.arange(-(n + shift), n + shift + 1)
    gap = family.mass_at(idx) - scale * family.mass_at(idx - shift)
    total = float(np.maximum(gap, 0.0).sum())
    geom = p_n * r ** (shift + 1) / (1.0 - r)
    # Right tail: ratio P(i)/P(i-t) = r^t < 1, loss negative, never positive.
    right = max(1.0 - scale * r ** (-shift), 0.0) * geom
    # Left tail: ratio r^(-t) > 1.
    left = max(1.0 - scale * r**shift, 0.0) * geom
    return min(1.0, total + left + right)


def moments_epsilon(
    rdp_eval: Callable[[float], float],
    target_delta: float,
    compositions: int,
    bracket: tuple[float, float] = (1.0 + 1e-4, 1e6),
    grid_points: int = 160,
) -> tuple[float, float]:
    """Optimize N_c * rdp(alpha) + log(1/delta)/(alpha - 1) over the order.

    A log-spaced coarse grid over alpha - 1 locates the basin; golden
    section refines it.  Returns (epsilon, argmin order).  An argmin on the
    bracket edge means the bracket does not contain the minimum.
    """
    if not (0.0 < target_delta < 1.0):
        raise RangeViolation(f"target delta must lie in (0, 1), got {target_delta}")
    compositions = int(compositions)
    if compositions < 1:
        raise RangeViolation(f"compositions must be >= 1, got {compositions}")
    lo, hi = bracket
    if not (1.0 < lo < hi):
        raise RangeViolation(f"bracket must satisfy 1 < lo < hi, got {bracket}")
    penalty = math.log(1.0 / target_delta)

    def objective(alpha: float) -> float:
        try:
            value = compositions * rdp_eval(alpha) + penalty / (alpha - 1.0)
        except (OverflowError, FloatingPointError):
            return math.inf
        return value if math.isfinite(value) else math.inf

    alphas = 1.0 + np.logspace(math.log10(lo - 1.0), math.log10(hi - 1.0), grid_points)
    values = np.array([objective(a) for a in alphas])
    if not np.isfinite(values).any():
        raise SearchFailure("order objective is infinite over the whole bracket")
    best = int(np.argmin(values))
    if best == 0 or best == alphas.size - 1:
        raise SearchFailure(
            f"order optimum at bracket edge alpha={alphas[best]:.6g}; widen the bracket"
        )
    try:
        refined = minimize_scalar(
            objective,
            bracket=(alphas[best - 1], alphas[best], alphas[best + 1]),
            method="golden",
            options={"xtol": 1e-10},
        )
        if math.isfinite(refined.fun) and refined.fun <= values[best]:
            return float(refined.fun), float(refined.x)
    except ValueError:
        pass
    return float(values[best]), float(alphas[best])


@dataclass(frozen=True)
class PrivacyCurve:
    """Monotone (epsilon, delta) trade-off points with provenance."""

    points: tuple
    provenance: dict = field(default_factory=dict)
    per_shift: Optional[dict] = None

    def __post_init__(self):
        pts = tuple((float(e), float(d)) for e, d in self.points)
        object.__setattr__(self, "points", pts)
        for _, d in pts:
            if not (0.0 <= d <= 1.0):
                raise RangeViolation(f"delta {d} outside [0, 1]")
        for (e0, d0), (e1, d1) in zip(pts, pts[1:]):
            if e1 < e0:
                raise RangeViolation("curve points must be sorted by epsilon")
            if d1 > d0 + 1e-12:
                raise RangeViolation("delta must be non-increasing along the curve")

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([e for e, _ in self.points])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([d for _, d in self.points])


CURVE_CSV_HEADER = "epsilon,delta,mechanism,accountant,compositions,sigma,sensitivity"


def curve_to_csv(curve: PrivacyCurve, preamble: Sequence[str] = ()) -> str:
    """Render a curve in the pinned CSV layout; rows ordered by epsilon."""
    prov = curve.provenance
    fields = (
        str(prov.get("mechanism", "custom")),
        str(prov.get("accountant", "pld")),
        str(prov.get("compositions", 1)),
        format(prov["sigma"], ".12g") if prov.get("sigma") is not None else "",
        format(prov["sensitivity"], ".12g") if prov.get("sensitivity") is not None else "",
    )
    lines = [*preamble, CURVE_CSV_HEADER]
    for eps, delta in curve.points:
        lines.append(",".join((format(eps, ".12g"), format(delta, ".12g"), *fields)))
    return "\n".join(lines) + "\n"


def _shift_plds(
    family: TailedNoiseFamily,
    max_shift: int,
    compositions: int,
    grid_step: float,
    tail_cutoff: float,
    max_grid_len: int,
    pessimistic: bool = True,
) -> dict[int, PrivacyLossDistribution]:
    out = {}
    for t in range(1, max_shift + 1):
        single = pld_from_family(
            family, t, grid_step=grid_step, tail_cutoff=tail_cutoff, pessimistic=pessimistic
        )
        out[t] = pld_self_compose(single, compositions, max_len=max_grid_len)
    return out


def account_family(
    family: TailedNoiseFamily,
    sensitivity: float,
    compositions: int,
    target_deltas: Sequence[float],
    grid_step: float = 5e-3,
    refine_tol: float = 1e-3,
    max_refinements: int = 12,
    tail_cutoff: float = 1e-15,
    max_grid_len: int = MAX_GRID_LEN,
    mechanism: str = "custom",
    sigma: Optional[float] = None,
    keep_per_shift: bool = False,
) -> PrivacyCurve:
    """Pessimistic (epsilon, delta) curve over all shifts up to the sensitivity.

    For each target delta the reported epsilon is the worst over shifts
    t = 1 .. sensitivity/bin_width.  The loss grid is halved until the
    epsilon estimates move by less than ``refine_tol`` (or the composed
    grid hits its cap, in which case the last completed level is kept).
    When INFO logging is enabled, an optimistic (floor-rounded) pass at the
    final grid reports the rounding bracket width.
    """
    max_shift = shift_count(sensitivity, family.bin_width)
    deltas = [float(d) for d in target_deltas]
    if not deltas:
        raise RangeViolation("at least one target delta is required")

    def envelope(step: float, pessimistic: bool = True):
        plds = _shift_plds(
            family, max_shift, compositions, step, tail_cutoff, max_grid_len, pessimistic
        )
        eps = np.full(len(deltas), -math.inf)
        for pld in plds.values():
            eps = np.maximum(eps, [epsilon_for_delta(pld, d) for d in deltas])
        return eps, plds

    step = grid_step
    current, plds = envelope(step)
    for _ in range(max_refinements):
        try:
            refined, refined_plds = envelope(step / 2.0)
        except GridOverflow:
            logger.info("loss grid cap reached at step %.3e; refinement stopped", step)
            break
        moved = float(np.max(np.abs(refined - current)))
        step /= 2.0
        current, plds = refined, refined_plds
        if moved < refine_tol:
            break
    if logger.isEnabledFor(logging.INFO):
        optimistic, _ = envelope(step, pessimistic=False)
        logger.info(
            "rounding bracket at grid %.3e: max width %.3e", step, float(np.max(current - optimistic))
        )
    order = np.argsort(current)
    points = tuple((float(current[i]), deltas[i]) for i in order)
    provenance = {
        "schema_version": SCHEMA_VERSION,
        "mechanism": mechanism,
        "accountant": "pld",
        "compositions": int(compositions),
        "sigma": sigma,
        "sensitivity": float(sensitivity),
        "grid_step": step,
        "pessimistic": True,
    }
    return PrivacyCurve(
        points=points,
        provenance=provenance,
        per_shift={t: p for t, p in plds.items()} if keep_per_shift else None,
    )


def family_rdp_eval(family: TailedNoiseFamily, sensitivity: float) -> Callable[[float], float]:
    """Adapter: order -> worst-shift Renyi divergence, for moments_epsilon."""

    def rdp(alpha: float) -> float:
        return g_max(family, sensitivity, check_order(alpha)).rdp

    return rdp
