"""Renyi objective for shifted noise families.

For a family P and an integer shift t, the quantity

    g(t, alpha) = sum_i P(i)^alpha * P(i - t)^(1 - alpha)

determines the order-alpha Renyi divergence between the mechanism's output
on adjacent inputs: divergence = log(g) / (alpha - 1).  The closed form
used here splits the doubly infinite sum into a head window and geometric
tail pieces, so evaluation is O(N + t) instead of an open-ended scan.

All internal arithmetic is carried in log space; `g` itself can exceed
float range at large alpha while log(g) stays representable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergentTail, RangeViolation, StrictFeasibilityViolation
from .family import TailedNoiseFamily


def _lse(values: np.ndarray) -> float:
    """log-sum-exp of a small 1-D array; tolerates -inf entries."""
    m = float(np.max(values))
    if m == -math.inf:
        return m
    return m + math.log(float(np.exp(values - m).sum()))

#: Exponent bounds for the product-splitting fast path (see _ShiftObjective).
_EXP_LO = -740.0
_EXP_HI = 700.0


def check_order(alpha: float) -> float:
    """Validate a Renyi order; alpha must be a finite real > 1."""
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise RangeViolation(f"order must be finite, got {alpha}")
    if alpha == 1.0:
        raise RangeViolation("order exactly 1 (the KL limit) is not supported; use alpha > 1")
    if alpha < 1.0:
        raise RangeViolation(f"order must exceed 1, got {alpha}")
    return alpha


def shift_count(sensitivity: float, bin_width: float) -> int:
    """Number of worst-case shifts: sensitivity / bin_width, which must be integral."""
    if not (sensitivity > 0.0 and math.isfinite(sensitivity)):
        raise RangeViolation(f"sensitivity must be positive and finite, got {sensitivity}")
    ratio = sensitivity / bin_width
    count = round(ratio)
    if count < 1 or abs(ratio - count) > 1e-9 * max(1.0, ratio):
        raise RangeViolation(
            f"sensitivity / bin_width = {ratio!r} must be a positive integer"
        )
    return int(count)


@dataclass(frozen=True)
class ObjectiveReport:
    """Worst-case objective over a shift set.

    ``g_value`` may overflow to inf at very large orders; ``log_g`` and the
    divergence ``rdp`` stay finite and are what downstream code consumes.
    """

    g_value: float
    t_star: int
    rdp: float
    log_g: float


def _strict_log_probs(family: TailedNoiseFamily) -> np.ndarray:
    probs = family.probs
    if probs.min() <= 0.0:
        raise StrictFeasibilityViolation(
            "objective evaluation requires strictly positive bin masses"
        )
    return np.log(probs)


class _ShiftObjective:
    """Evaluator of log g(t) for one (family, alpha) pair across shifts.

    The head window sum pairs p_{|t+j|}^alpha with p_{|j|}^(1-alpha).  When
    both exponent arrays fit inside float range after a common rebalancing
    shift (the shift cancels in each product), the window reduces to one
    dot product per t.  Otherwise a per-shift log-sum-exp is used.
    """

    def __init__(self, family: TailedNoiseFamily, alpha: float):
        self.family = family
        self.alpha = check_order(alpha)
        self.logp = _strict_log_probs(family)
        self.n = family.tail_start
        self.logr = math.log(family.tail_rate)
        ext = np.concatenate([self.logp[::-1], self.logp[1:]])
        self.la = alpha * ext
        self.lb = (1.0 - alpha) * ext
        c_lo = max(_EXP_LO - self.la.min(), self.lb.max() - _EXP_HI)
        c_hi = min(_EXP_HI - self.la.max(), self.lb.min() - _EXP_LO)
        self._fast = c_lo < c_hi
        if self._fast:
            c = 0.5 * (c_lo + c_hi)
            self._av = np.exp(self.la + c)
            self._bv = np.exp(self.lb - c)

    def _log_head(self, t: int) -> float:
        size = self.la.size - t
        if size <= 0:
            return -math.inf
        if self._fast:
            dot = float(self._av[t:] @ self._bv[:size])
            if 0.0 < dot < math.inf:
                return math.log(dot)
        v = self.la[t:] + self.lb[:size]
        m = float(v.max())
        if m == -math.inf:
            return -math.inf
        return m + math.log(float(np.exp(v - m).sum()))

    def _log_cross(self, t: int) -> tuple[float, float, float]:
        alpha, n, logr = self.alpha, self.n, self.logr
        lpn = self.logp[-1]
        # Both-tails piece: constant-loss regions on either side of the head.
        t1 = lpn + logr - math.log1p(-self.family.tail_rate)
        t1 += np.logaddexp((1.0 - alpha) * t * logr, alpha * t * logr)
        if t == 0:
            return t1, -math.inf, -math.inf
        # Shifted index in the right tail, reference index still in the head
        # (|js| <= n holds for every t <= 2n, so logp indexes directly).
        js = np.arange(n - t + 1, n + 1)
        e3 = alpha * (lpn + (t - n + js) * logr) + (1.0 - alpha) * self.logp[np.abs(js)]
        # Reference index in the left tail, shifted index in the head.
        js = np.arange(-t - n, -n)
        e4 = (1.0 - alpha) * lpn + (alpha - 1.0) * (n + js) * logr
        e4 += alpha * self.logp[np.abs(t + js)]
        return t1, _lse(e3), _lse(e4)

    def log_g(self, t: int) -> float:
        if t < 0:
            raise RangeViolation(f"shift must be nonnegative, got {t}")
        if t > 2 * self.n:
            return self._log_g_enumerated(t)
        t1, t3, t4 = self._log_cross(t)
        return _lse(np.array([self._log_head(t), t1, t3, t4]))

    def _log_g_enumerated(self, t: int) -> float:
        # Shifts beyond the head window (t > 2N) fall outside the four-term
        # split; enumerate directly with the exact geometric remainders.
        fam, alpha = self.family, self.alpha
        lo, hi = -(self.n + t + 1), self.n + t + 1
        idx = np.arange(lo, hi + 1)
        v = alpha * fam.log_mass_at(idx) + (1.0 - alpha) * fam.log_mass_at(idx - t)
        # Beyond the enumerated range both factors are in pure tails and each
        # further step multiplies the term by exactly r.
        geom = self.logr - math.log1p(-fam.tail_rate)
        return _lse(np.concatenate([v, [v[0] + geom, v[-1] + geom]]))


def log_g_shift(family: TailedNoiseFamily, shift: int, alpha: float) -> float:
    """log of the shifted objective g(shift, alpha)."""
    return _ShiftObjective(family, alpha).log_g(int(shift))


def g_shift(family: TailedNoiseFamily, shift: int, alpha: float) -> float:
    """Shifted objective; >= 1 for every shift in the sensitivity set."""
    return math.exp(log_g_shift(family, shift, alpha))


def g_max(family: TailedNoiseFamily, sensitivity: float, alpha: float) -> ObjectiveReport:
    """Worst case over shifts 1 .. sensitivity/bin_width.

    Every shift is evaluated (no unimodality assumption); ties resolve to
    the smallest shift index.
    """
    count = shift_count(sensitivity, family.bin_width)
    ev = _ShiftObjective(family, alpha)
    logs = np.array([ev.log_g(t) for t in range(1, count + 1)])
    pos = int(np.argmax(logs))
    lg = float(logs[pos])
    with np.errstate(over="ignore"):
        g_value = float(np.exp(lg))
    return ObjectiveReport(g_value=g_value, t_star=pos + 1, rdp=lg / (alpha - 1.0), log_g=lg)


def grad_log_g(family: TailedNoiseFamily, shift: int, alpha: float) -> np.ndarray:
    """Gradient of log g(shift, alpha) with respect to the mass vector.

    Tail bins beyond N contribute to the component of p_N since their mass
    is proportional to it.
    """
    t = int(shift)
    ev = _ShiftObjective(family, alpha)
    if t > 2 * ev.n:
        raise RangeViolation(f"gradient supports shifts up to 2N, got {t} with N={ev.n}")
    lg = ev.log_g(t)
    n = ev.n
    probs = family.probs
    grad = np.zeros(n + 1)

    def scatter(indices: np.ndarray, coeff: float, log_terms: np.ndarray) -> None:
        fold = np.minimum(np.abs(indices), n)
        w = np.exp(log_terms - lg)
        np.add.at(grad, fold, coeff * w / probs[fold])

    size = ev.la.size - t
    if size > 0:
        ks = np.arange(size)
        v = ev.la[t:] + ev.lb[:size]
        scatter(ks + t - n, alpha, v)
        scatter(ks - n, 1.0 - alpha, v)

    t1, _, _ = ev._log_cross(t)
    grad[n] += math.exp(t1 - lg) / probs[n]
    if t > 0:
        lpn, logr = ev.logp[-1], ev.logr
        js = np.arange(n - t + 1, n + 1)
        e3 = alpha * (lpn + (t - n + js) * logr) + (1.0 - alpha) * family.log_mass_at(js)
        grad[n] += alpha * float(np.exp(e3 - lg).sum()) / probs[n]
        scatter(js, 1.0 - alpha, e3)
        js = np.arange(-t - n, -n)
        e4 = (1.0 - alpha) * lpn + (alpha - 1.0) * (n + js) * logr
        e4 += alpha * family.log_mass_at(t + js)
        grad[n] += (1.0 - alpha) * float(np.exp(e4 - lg).sum()) / probs[n]
        scatter(t + js, alpha, e4)
    return grad


def grad_g(family: TailedNoiseFamily, shift: int, alpha: float) -> np.ndarray:
    """Gradient of g itself; finite whenever g is within float range."""
    return math.exp(log_g_shift(family, shift, alpha)) * grad_log_g(family, shift, alpha)


def g_brute(
    family: TailedNoiseFamily,
    shift: int,
    alpha: float,
    tail_terms: int | None = None,
    remainder_tol: float = 1e-12,
) -> float:
    """Reference evaluation by direct summation over an enumerated support.

    Independent of the closed form: every term is mass_at(i)^alpha *
    mass_at(i - shift)^(1 - alpha).  Beyond the enumerated range each
    further term shrinks by exactly the tail rate, giving a geometric
    remainder bound that must fall below ``remainder_tol``.
    """
    alpha = check_order(alpha)
    _strict_log_probs(family)
    t = int(shift)
    if t < 0:
        raise RangeViolation(f"shift must be nonnegative, got {t}")
    r = family.tail_rate
    log_geom = math.log(r / (1.0 - r))
    sizes = [1 << k for k in range(8, 22)] if tail_terms is None else [int(tail_terms)]
    remainder = math.inf
    for extra in sizes:
        m = family.tail_start + t + extra
        idx = np.arange(-m, m + 1)
        logs = alpha * family.log_mass_at(idx) + (1.0 - alpha) * family.log_mass_at(idx - t)
        remainder = np.logaddexp(logs[0], logs[-1]) + log_geom
        if remainder <= math.log(remainder_tol):
            peak = float(logs.max())
            total = peak + math.log(math.fsum(np.exp(logs - peak).tolist()))
            return math.exp(total) if total < 709.0 else math.inf
    raise DivergentTail(
        f"geometric remainder bound exp({remainder:.3e}) above {remainder_tol:.0e} "
        f"after {m} enumerated bins per side"
    )
