"""Reference mechanisms: Gaussian and Laplace, continuous and discrete.

Continuous densities are embedded into the binned-family representation so
every mechanism runs through the same objective and accountants.  Bin
masses come from survival-function differences when a tail function is
available (differences of upper tails stay accurate far out, where CDF
differences cancel), and from adaptive quadrature otherwise.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from .errors import DomainViolation, QuadratureFailure, RangeViolation
from .family import DomainKind, TailedNoiseFamily, normalization_sum
from .rdp import check_order, g_max

MECHANISMS = ("rdp", "gaussian", "laplace", "dgauss", "dlaplace")


def gaussian_rdp(sigma: float, sensitivity: float, alpha: float) -> float:
    """Renyi divergence of the Gaussian mechanism: s^2 alpha / (2 sigma^2)."""
    check_order(alpha)
    if not (sigma > 0.0):
        raise RangeViolation(f"sigma must be positive, got {sigma}")
    return sensitivity * sensitivity * alpha / (2.0 * sigma * sigma)


def gaussian_delta(epsilon: float, sigma: float, sensitivity: float) -> float:
    """Exact delta of a single Gaussian query at this epsilon.

    Compositions fold in exactly through sensitivity * sqrt(N_c).  The
    second term is evaluated in log space so large epsilon cannot overflow.
    """
    if not (sigma > 0.0 and sensitivity > 0.0):
        raise RangeViolation("sigma and sensitivity must be positive")
    ratio = sensitivity / sigma
    a = ndtr(0.5 * ratio - epsilon / ratio)
    b = math.exp(epsilon + log_ndtr(-0.5 * ratio - epsilon / ratio))
    return float(min(1.0, max(0.0, a - b)))


def _check_symmetry(pdf: Callable[[float], float], probe: float) -> None:
    for x in (probe, 2.7 * probe):
        lhs, rhs = pdf(x), pdf(-x)
        if abs(lhs - rhs) > 1e-9 * max(abs(lhs), abs(rhs), 1e-300):
            raise DomainViolation(f"density is not symmetric at x={x}: {lhs} vs {rhs}")


def embed_density(
    pdf: Callable[[float], float],
    bin_width: float,
    tail_start: int,
    tail_rate: float,
    upper_tail: Optional[Callable[[float], float]] = None,
    quad_tol: float = 1e-12,
) -> TailedNoiseFamily:
    """Project a symmetric density onto the binned family shape.

    Head masses are bin integrals; all mass beyond the last head edge is
    folded into the geometric tail anchor so nothing is truncated.  The
    result is renormalized, which also absorbs the (small) mismatch between
    the true tail and the geometric surrogate.
    """
    if not (bin_width > 0.0 and math.isfinite(bin_width)):
        raise RangeViolation(f"bin_width must be positive, got {bin_width}")
    if tail_start < 1 or int(tail_start) != tail_start:
        raise RangeViolation(f"tail_start must be a positive integer, got {tail_start}")
    if not (0.0 < tail_rate < 1.0):
        raise RangeViolation(f"tail_rate must lie in (0, 1), got {tail_rate}")
    n = int(tail_start)
    _check_symmetry(pdf, 0.4 * bin_width)
    edges = (np.arange(n + 1) - 0.5) * bin_width
    vec = np.empty(n + 1)
    if upper_tail is not None:
        upper = np.array([upper_tail(float(e)) for e in edges])
        vec[0] = 1.0 - 2.0 * upper[1]
        vec[1:-1] = upper[1:-1] - upper[2:]
        residual = float(upper[-1])
    else:
        for i in range(n):
            lo = -edges[1] if i == 0 else edges[i]
            value, err = quad(pdf, lo, edges[i + 1], epsabs=quad_tol, limit=200)
            if err > quad_tol:
                raise QuadratureFailure(
                    f"bin {i} integral error estimate {err:.3e} exceeds {quad_tol:.3e}"
                )
            vec[i] = value
        residual, err = quad(pdf, edges[-1], np.inf, epsabs=quad_tol, limit=200)
        if err > quad_tol:
            raise QuadratureFailure(
                f"tail integral error estimate {err:.3e} exceeds {quad_tol:.3e}"
            )
    vec[-1] = (1.0 - tail_rate) * residual
    vec /= normalization_sum(vec, tail_rate)
    return TailedNoiseFamily(
        probs=vec, tail_rate=tail_rate, bin_width=bin_width, kind=DomainKind.CONTINUOUS
    )


def gaussian_family(
    sigma: float, bin_width: float, tail_start: int, tail_rate: float
) -> TailedNoiseFamily:
    """Binned zero-mean Gaussian with a geometric tail anchor."""
    if not (sigma > 0.0):
        raise RangeViolation(f"sigma must be positive, got {sigma}")
    inv = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    return embed_density(
        pdf=lambda x: inv * math.exp(-0.5 * (x / sigma) ** 2),
        bin_width=bin_width,
        tail_start=tail_start,
        tail_rate=tail_rate,
        upper_tail=lambda x: float(ndtr(-x / sigma)),
    )


def laplace_scale_for_variance(sigma: float) -> float:
    """Laplace scale with variance sigma^2."""
    return sigma / math.sqrt(2.0)


def laplace_family(
    scale: float, bin_width: float, tail_start: int, tail_rate: Optional[float] = None
) -> TailedNoiseFamily:
    """Binned Laplace(scale).  Its bin masses are exactly geometric, so the
    default tail rate exp(-bin_width/scale) makes the tail representation
    exact rather than a surrogate."""
    if not (scale > 0.0):
        raise RangeViolation(f"scale must be positive, got {scale}")
    if tail_rate is None:
        tail_rate = math.exp(-bin_width / scale)
    return embed_density(
        pdf=lambda x: math.exp(-abs(x) / scale) / (2.0 * scale),
        bin_width=bin_width,
        tail_start=tail_start,
        tail_rate=tail_rate,
        upper_tail=lambda x: 0.5 * math.exp(-x / scale) if x >= 0 else 1.0 - 0.5 * math.exp(x / scale),
    )


def discrete_gaussian_family(sigma: float, tail_start: int, tail_rate: float) -> TailedNoiseFamily:
    """Integer-supported Gaussian weights exp(-i^2 / (2 sigma^2)), binned shape."""
    if not (sigma > 0.0):
        raise RangeViolation(f"sigma must be positive, got {sigma}")
    if tail_start < 1 or int(tail_start) != tail_start:
        raise RangeViolation(f"tail_start must be a positive integer, got {tail_start}")
    if not (0.0 < tail_rate < 1.0):
        raise RangeViolation(f"tail_rate must lie in (0, 1), got {tail_rate}")
    n = int(tail_start)
    # Weights underflow to exact zero past ~38.6 sigma, so this cut loses nothing.
    top = max(n, int(math.ceil(38.7 * sigma))) + 2
    i = np.arange(top + 1, dtype=float)
    weights = np.exp(-0.5 * (i / sigma) ** 2)
    vec = np.empty(n + 1)
    vec[:-1] = weights[:n]
    vec[-1] = (1.0 - tail_rate) * float(weights[n:].sum())
    vec /= normalization_sum(vec, tail_rate)
    return TailedNoiseFamily(
        probs=vec, tail_rate=tail_rate, bin_width=1.0, kind=DomainKind.DISCRETE
    )


def discrete_laplace_variance(scale: float) -> float:
    """Variance of the two-sided geometric distribution with this scale."""
    # 2 e^u / (e^u - 1)^2 == 1 / (2 sinh(u/2)^2) with u = 1/scale; the sinh
    # form cannot overflow prematurely and cleanly underflows to 0.
    try:
        s = math.sinh(0.5 / scale)
    except OverflowError:
        return 0.0
    return 0.5 / (s * s)


def discrete_laplace_scale_for_variance(sigma: float) -> float:
    """Invert the discrete Laplace variance; monotone, so bisection is safe."""
    if not (sigma > 0.0):
        raise RangeViolation(f"sigma must be positive, got {sigma}")
    target = sigma * sigma
    lo, hi = 1e-3, max(10.0, 2.0 * sigma)
    if discrete_laplace_variance(lo) > target:
        lo = 1e-6
    return float(brentq(lambda t: discrete_laplace_variance(t) - target, lo, hi, xtol=1e-12))


def discrete_laplace_family(
    scale: float, tail_start: int, tail_rate: Optional[float] = None
) -> TailedNoiseFamily:
    """Integer Laplace P(i) proportional to exp(-|i|/scale).

    With the default tail rate exp(-1/scale) the geometric tail reproduces
    the distribution exactly.
    """
    if not (scale > 0.0):
        raise RangeViolation(f"scale must be positive, got {scale}")
    if tail_start < 1 or int(tail_start) != tail_start:
        raise RangeViolation(f"tail_start must be a positive integer, got {tail_start}")
    if tail_rate is None:
        tail_rate = math.exp(-1.0 / scale)
    if not (0.0 < tail_rate < 1.0):
        raise RangeViolation(f"tail_rate must lie in (0, 1), got {tail_rate}")
    n = int(tail_start)
    u = math.exp(1.0 / scale)
    const = (u - 1.0) / (u + 1.0)
    i = np.arange(n, dtype=float)
    vec = np.empty(n + 1)
    vec[:-1] = const * np.exp(-i / scale)
    # Residual mass at and beyond the anchor: const * e^(-n/scale) / (1 - e^(-1/scale)).
    vec[-1] = (1.0 - tail_rate) * const * math.exp(-n / scale) / (1.0 - math.exp(-1.0 / scale))
    vec /= normalization_sum(vec, tail_rate)
    return TailedNoiseFamily(
        probs=vec, tail_rate=tail_rate, bin_width=1.0, kind=DomainKind.DISCRETE
    )


def laplace_rdp_numeric(
    scale: float,
    sensitivity: float,
    alpha: float,
    bin_width: Optional[float] = None,
    tail_start: Optional[int] = None,
) -> float:
    """Worst-shift Renyi divergence of binned Laplace noise.

    Default resolution: bins at sensitivity/100 with the head extending
    past ten scales, which keeps the discretization bias well under 1%.
    """
    check_order(alpha)
    if bin_width is None:
        bin_width = sensitivity / 100.0
    if tail_start is None:
        tail_start = int(math.ceil((10.0 * scale + 2.0 * sensitivity) / bin_width))
    family = laplace_family(scale, bin_width, tail_start)
    return g_max(family, sensitivity, alpha).rdp


def build_mechanism_family(
    mechanism: str,
    sigma: float,
    bin_width: float,
    tail_start: int,
    tail_rate: float,
    kind: DomainKind = DomainKind.CONTINUOUS,
) -> TailedNoiseFamily:
    """Baseline family at variance parameter sigma, by mechanism id.

    The optimized mechanism ("rdp") is produced by the solver, not here.
    Laplace variants calibrate their scale so the variance matches sigma^2;
    the discrete Gaussian keeps sigma as its weight parameter.
    """
    if mechanism == "gaussian":
        return gaussian_family(sigma, bin_width, tail_start, tail_rate)
    if mechanism == "laplace":
        return laplace_family(laplace_scale_for_variance(sigma), bin_width, tail_start)
    if mechanism == "dgauss":
        return discrete_gaussian_family(sigma, tail_start, tail_rate)
    if mechanism == "dlaplace":
        return discrete_laplace_family(discrete_laplace_scale_for_variance(sigma), tail_start)
    raise RangeViolation(f"unknown baseline mechanism {mechanism!r}; expected one of {MECHANISMS[1:]}")
