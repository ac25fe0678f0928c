"""Shared hypothesis strategies: random feasible noise families."""

import numpy as np
from hypothesis import strategies as st

from dpnoise.family import DomainKind, TailedNoiseFamily, normalization_sum


@st.composite
def families(draw, min_bins=2, max_bins=40, kind=None, bin_width=None):
    """A validated family with strictly positive head masses.

    Raw weights are renormalized through the exact total-mass formula, so
    construction never trips the normalization tolerance.
    """
    n = draw(st.integers(min_value=min_bins, max_value=max_bins))
    r = draw(st.floats(min_value=0.05, max_value=0.95))
    weights = draw(
        st.lists(
            st.floats(min_value=1e-4, max_value=1.0),
            min_size=n + 1,
            max_size=n + 1,
        )
    )
    w = np.asarray(weights)
    p = w / normalization_sum(w, r)
    if kind is None:
        kind = draw(st.sampled_from([DomainKind.CONTINUOUS, DomainKind.DISCRETE]))
    if kind is DomainKind.DISCRETE:
        width = 1.0
    elif bin_width is None:
        width = draw(st.floats(min_value=0.01, max_value=2.0))
    else:
        width = bin_width
    return TailedNoiseFamily(probs=p, tail_rate=r, bin_width=width, kind=kind)


def random_family(rng, n, r, kind=DomainKind.DISCRETE, bin_width=1.0, decay=0.9):
    """Plain-numpy analogue of families() for seeded loops in tests."""
    w = rng.uniform(0.2, 1.0, size=n + 1) * decay ** np.arange(n + 1)
    p = w / normalization_sum(w, r)
    width = 1.0 if kind is DomainKind.DISCRETE else bin_width
    return TailedNoiseFamily(probs=p, tail_rate=r, bin_width=width, kind=kind)
