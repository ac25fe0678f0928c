"""Reference mechanisms against closed forms and exactness properties."""

import math

import numpy as np
import pytest
from scipy.special import ndtr

from dpnoise.baselines import (
    MECHANISMS,
    build_mechanism_family,
    discrete_gaussian_family,
    discrete_laplace_family,
    discrete_laplace_scale_for_variance,
    discrete_laplace_variance,
    embed_density,
    gaussian_delta,
    gaussian_family,
    gaussian_rdp,
    laplace_family,
    laplace_rdp_numeric,
    laplace_scale_for_variance,
)
from dpnoise.errors import DomainViolation, QuadratureFailure, RangeViolation
from dpnoise.family import DomainKind


def laplace_rdp_closed(scale: float, sensitivity: float, alpha: float) -> float:
    u = sensitivity / scale
    inner = (alpha / (2.0 * alpha - 1.0)) * math.exp((alpha - 1.0) * u) + (
        (alpha - 1.0) / (2.0 * alpha - 1.0)
    ) * math.exp(-alpha * u)
    return math.log(inner) / (alpha - 1.0)


def test_gaussian_rdp_closed_form():
    assert gaussian_rdp(8.0, 1.0, 14.298) == pytest.approx(14.298 / 128.0, rel=1e-15)
    assert gaussian_rdp(2.0, 3.0, 2.0) == pytest.approx(9.0 * 2.0 / 8.0, rel=1e-15)
    with pytest.raises(RangeViolation):
        gaussian_rdp(0.0, 1.0, 2.0)


def test_gaussian_delta_values_and_shape():
    # epsilon = 0 collapses to the central mass between +-s/(2 sigma)
    assert gaussian_delta(0.0, 1.0, 1.0) == pytest.approx(2.0 * ndtr(0.5) - 1.0, rel=1e-12)
    eps = np.linspace(0.0, 6.0, 40)
    vals = [gaussian_delta(float(e), 2.0, 1.0) for e in eps]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
    assert gaussian_delta(80.0, 1.0, 1.0) == 0.0  # log-space arm, no overflow


def test_gaussian_family_variance_and_mass():
    fam = gaussian_family(4.0, 0.05, 800, 0.99)
    assert fam.kind is DomainKind.CONTINUOUS
    # binning shifts mass to centers (+w^2/12) and spreads within bins (+w^2/12)
    assert fam.variance() == pytest.approx(16.0 + 0.05**2 / 6.0, rel=1e-9)
    # head masses match survival-function differences
    assert fam.mass_at(np.array([0]))[0] == pytest.approx(2.0 * ndtr(0.025 / 4.0) - 1.0, rel=1e-9)


def test_laplace_family_is_exactly_geometric():
    scale = 2.0
    fam = laplace_family(scale, 0.1, 60)
    assert fam.tail_rate == pytest.approx(math.exp(-0.1 / scale), rel=1e-15)
    p = np.asarray(fam.probs)
    ratios = p[2:-1] / p[1:-2]
    assert np.allclose(ratios, fam.tail_rate, rtol=1e-12)
    # the geometric tail continues the density exactly
    assert fam.mass_at(np.array([75]))[0] == pytest.approx(
        p[1] * fam.tail_rate**74, rel=1e-12
    )


def test_laplace_variance_calibration():
    sigma = 3.0
    scale = laplace_scale_for_variance(sigma)
    assert 2.0 * scale * scale == pytest.approx(sigma * sigma, rel=1e-15)
    fam = laplace_family(scale, 0.02, 4000)
    assert fam.variance() == pytest.approx(sigma * sigma + 0.02**2 / 6.0, rel=1e-7)


def test_laplace_rdp_matches_closed_form():
    for scale, alpha in ((2.0, 2.0), (2.0, 4.0), (4.0, 8.0)):
        numeric = laplace_rdp_numeric(scale, 1.0, alpha)
        assert numeric == pytest.approx(laplace_rdp_closed(scale, 1.0, alpha), rel=2e-2)


def test_discrete_gaussian_weights():
    sigma = 3.0
    fam = discrete_gaussian_family(sigma, 40, 0.9)
    p = np.asarray(fam.probs)
    i = np.arange(39)
    assert np.allclose(p[:39] / p[0], np.exp(-0.5 * (i / sigma) ** 2), rtol=1e-12)
    assert fam.kind is DomainKind.DISCRETE
    assert fam.variance() == pytest.approx(sigma * sigma, rel=1e-3)


def test_discrete_laplace_exact_tail_and_variance():
    scale = 1.7
    fam = discrete_laplace_family(scale, 30)
    u = math.exp(1.0 / scale)
    const = (u - 1.0) / (u + 1.0)
    # default tail rate continues exp(-|i|/scale) exactly past the anchor
    assert fam.mass_at(np.array([45]))[0] == pytest.approx(
        const * math.exp(-45.0 / scale), rel=1e-12
    )
    assert fam.variance() == pytest.approx(discrete_laplace_variance(scale), rel=1e-12)


def test_discrete_laplace_scale_inversion():
    for sigma in (0.5, 2.0, 11.0):
        scale = discrete_laplace_scale_for_variance(sigma)
        assert discrete_laplace_variance(scale) == pytest.approx(sigma * sigma, rel=1e-9)
    assert discrete_laplace_variance(1e-4) == 0.0  # deep underflow arm


def test_build_mechanism_family_dispatch():
    assert MECHANISMS == ("rdp", "gaussian", "laplace", "dgauss", "dlaplace")
    for mech, kind in (
        ("gaussian", DomainKind.CONTINUOUS),
        ("laplace", DomainKind.CONTINUOUS),
        ("dgauss", DomainKind.DISCRETE),
        ("dlaplace", DomainKind.DISCRETE),
    ):
        fam = build_mechanism_family(mech, 4.0, 0.05, 2000, 0.999)
        assert fam.kind is kind
    lap = build_mechanism_family("laplace", 4.0, 0.05, 2000, 0.999)
    assert lap.variance() == pytest.approx(16.0, rel=1e-3)
    dlap = build_mechanism_family("dlaplace", 4.0, 0.05, 2000, 0.999)
    assert dlap.variance() == pytest.approx(16.0, rel=1e-6)
    with pytest.raises(RangeViolation):
        build_mechanism_family("exponential", 4.0, 0.05, 2000, 0.999)


def test_embed_rejects_asymmetric_density():
    with pytest.raises(DomainViolation):
        embed_density(
            pdf=lambda x: math.exp(-abs(x - 0.3)) / 2.0,
            bin_width=0.1,
            tail_start=30,
            tail_rate=0.9,
        )


def test_embed_quadrature_error_budget_enforced():
    inv = 1.0 / math.sqrt(2.0 * math.pi)
    with pytest.raises(QuadratureFailure):
        embed_density(
            pdf=lambda x: inv * math.exp(-0.5 * x * x),
            bin_width=0.5,
            tail_start=10,
            tail_rate=0.5,
            quad_tol=1e-300,
        )


def test_embed_quadrature_path_matches_tail_path():
    inv = 1.0 / math.sqrt(2.0 * math.pi)
    by_quad = embed_density(
        pdf=lambda x: inv * math.exp(-0.5 * x * x),
        bin_width=0.25,
        tail_start=20,
        tail_rate=0.5,
        quad_tol=1e-10,
    )
    by_tail = gaussian_family(1.0, 0.25, 20, 0.5)
    assert np.allclose(by_quad.probs, by_tail.probs, rtol=1e-9)


def test_embed_validation():
    pdf = lambda x: 0.5 * math.exp(-abs(x))
    with pytest.raises(RangeViolation):
        embed_density(pdf, bin_width=0.0, tail_start=10, tail_rate=0.9)
    with pytest.raises(RangeViolation):
        embed_density(pdf, bin_width=0.1, tail_start=0, tail_rate=0.9)
    with pytest.raises(RangeViolation):
        embed_density(pdf, bin_width=0.1, tail_start=10, tail_rate=1.0)
