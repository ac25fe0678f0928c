"""Symmetric binned noise distributions with geometric tails.

A family is described by masses ``p_0 .. p_N`` on bins ``0 .. N`` plus a
geometric continuation ``p_N * r^(i-N)`` for bins beyond ``N``.  Negative
bins mirror positive ones.  Continuous families place the mass of bin ``i``
uniformly on the interval ``((i-1/2)*w, (i+1/2)*w)`` of width ``w``;
discrete families sit on the integers with ``w = 1``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import (
    DivergentTail,
    DomainViolation,
    NormalizationViolation,
    ParseError,
    QuadratureFailure,
    RangeViolation,
)

#: Largest allowed |total mass - 1| at construction time.
NORMALIZATION_TOL = 1e-10

SCHEMA_VERSION = 1


class DomainKind(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


def normalization_sum(probs: np.ndarray, tail_rate: float) -> float:
    """Total mass of the two-sided family: p_0 + 2*sum(p_1..p_{N-1}) + 2*p_N/(1-r)."""
    probs = np.asarray(probs, dtype=float)
    return float(probs[0] + 2.0 * probs[1:-1].sum() + 2.0 * probs[-1] / (1.0 - tail_rate))


def tail_second_moment(tail_start: int, tail_rate: float) -> float:
    """Closed form of sum_{i>=N} r^(i-N) * i^2."""
    n, r = tail_start, tail_rate
    num = r * r * (n - 1) ** 2 + n * n * (1.0 - 2.0 * r) + r * (2.0 * n + 1.0)
    return num / (1.0 - r) ** 3


def tail_first_moment(tail_start: int, tail_rate: float) -> float:
    """Closed form of sum_{i>=N} r^(i-N) * i."""
    n, r = tail_start, tail_rate
    return (n + r * (1.0 - n)) / (1.0 - r) ** 2


@dataclass(frozen=True)
class CostSpec:
    """Per-sample cost function with a budget.

    ``cost_fn`` must be symmetric, nonnegative and locally integrable.  The
    ``quadratic`` flag marks the default cost c(z) = z^2, whose tail series
    has a closed form.
    """

    cost_fn: Callable[[float], float]
    budget: float
    quadratic: bool = False

    def __post_init__(self):
        if not (self.budget > 0.0 and math.isfinite(self.budget)):
            raise RangeViolation(f"cost budget must be positive and finite, got {self.budget}")

    @classmethod
    def quadratic_budget(cls, budget: float) -> "CostSpec":
        return cls(cost_fn=lambda z: z * z, budget=budget, quadratic=True)


@dataclass(frozen=True)
class TailedNoiseFamily:
    """Immutable symmetric noise distribution with a geometric tail.

    Attributes:
        probs: masses of bins 0..N (one-sided; bins 1..N are counted twice).
        tail_rate: geometric decay ratio r in (0, 1) beyond bin N.
        bin_width: width of each bin; 1 for discrete families.
        kind: CONTINUOUS (piecewise-constant density) or DISCRETE (integer support).
    """

    probs: np.ndarray
    tail_rate: float
    bin_width: float
    kind: DomainKind

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).copy()
        if probs.ndim != 1 or probs.size < 2:
            raise RangeViolation("probs must be a 1-d vector of length N+1 with N >= 1")
        if not np.all(np.isfinite(probs)):
            raise RangeViolation("probs must be finite")
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise RangeViolation("each bin mass must lie in [0, 1]")
        if not (0.0 < self.tail_rate < 1.0):
            raise RangeViolation(f"tail_rate must lie in (0, 1), got {self.tail_rate}")
        if not (self.bin_width > 0.0 and math.isfinite(self.bin_width)):
            raise RangeViolation(f"bin_width must be positive, got {self.bin_width}")
        if self.kind is DomainKind.DISCRETE and self.bin_width != 1.0:
            raise DomainViolation("discrete families require bin_width == 1")
        total = normalization_sum(probs, self.tail_rate)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise NormalizationViolation(
                f"total mass {total!r} deviates from 1 by {abs(total - 1.0):.3e} "
                f"(tolerance {NORMALIZATION_TOL:.0e})"
            )
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail_rate", float(self.tail_rate))
        object.__setattr__(self, "bin_width", float(self.bin_width))

    @property
    def tail_start(self) -> int:
        return self.probs.size - 1

    @property
    def tail_mass(self) -> float:
        """Total mass carried by the two geometric tails (bins with |i| >= N)."""
        return float(2.0 * self.probs[-1] / (1.0 - self.tail_rate))

    # -- pointwise access ------------------------------------------------

    def mass_at(self, index) -> np.ndarray | float:
        """Mass of bin ``index`` (absolute value taken; tail continued geometrically)."""
        idx = np.abs(np.asarray(index, dtype=np.int64))
        n = self.tail_start
        head = self.probs[np.minimum(idx, n)]
        out = np.where(idx <= n, head, self.probs[-1] * self.tail_rate ** np.maximum(idx - n, 0))
        return float(out) if np.isscalar(index) else out

    def log_mass_at(self, index) -> np.ndarray | float:
        """log of mass_at; -inf where the mass is zero."""
        idx = np.abs(np.asarray(index, dtype=np.int64))
        n = self.tail_start
        with np.errstate(divide="ignore"):
            logp = np.log(self.probs)
        out = logp[np.minimum(idx, n)] + np.maximum(idx - n, 0) * math.log(self.tail_rate)
        return float(out) if np.isscalar(index) else out

    def density_at(self, z: float) -> float:
        """Density at point z of a continuous family.

        Bin breakpoints ((i+1/2)*w) belong to the bin on their left.
        """
        if self.kind is not DomainKind.CONTINUOUS:
            raise DomainViolation("density_at is defined for continuous families only")
        index = math.ceil(z / self.bin_width - 0.5)
        return self.mass_at(index) / self.bin_width

    # -- moments ---------------------------------------------------------

    def variance(self) -> float:
        """Exact variance; the mean is zero by symmetry."""
        n = self.tail_start
        w2 = self.bin_width * self.bin_width
        i = np.arange(1, n, dtype=float)
        head = 2.0 * float(self.probs[1:-1] @ (i * i))
        tail = 2.0 * self.probs[-1] * tail_second_moment(n, self.tail_rate)
        var = w2 * (head + tail)
        if self.kind is DomainKind.CONTINUOUS:
            var += w2 / 12.0
        return var

    def expected_cost(
        self,
        cost: CostSpec,
        *,
        max_terms: int = 500_000,
        tail_tol: float = 1e-12,
        quad_tol: float = 1e-12,
    ) -> float:
        """E[c(Z)] via per-bin averages and the geometric tail series.

        The tail series is summed in closed form for quadratic cost and
        truncated otherwise, with the remainder bounded below ``tail_tol``
        by a geometric envelope on the observed terms.
        """
        n = self.tail_start
        w = self.bin_width

        def bin_avg(i: int) -> float:
            if cost.quadratic:
                if self.kind is DomainKind.CONTINUOUS:
                    return w * w * (i * i + 1.0 / 12.0)
                return float(i * i)
            if self.kind is DomainKind.DISCRETE:
                return float(cost.cost_fn(i))
            lo, hi = (i - 0.5) * w, (i + 0.5) * w
            val, err = integrate.quad(cost.cost_fn, lo, hi, epsabs=quad_tol, limit=200)
            if err > max(quad_tol, 1e-10 * abs(val)):
                raise QuadratureFailure(f"bin [{lo}, {hi}] quadrature error {err:.3e}")
            return val / w

        head = self.probs[0] * bin_avg(0)
        for i in range(1, n):
            head += 2.0 * self.probs[i] * bin_avg(i)

        r = self.tail_rate
        if cost.quadratic:
            tail = w * w * tail_second_moment(n, r)
            if self.kind is DomainKind.CONTINUOUS:
                tail += w * w / (12.0 * (1.0 - r))
        else:
            tail = 0.0
            bound_ok = 0
            term = None
            for k in range(max_terms):
                prev = term
                term = r**k * bin_avg(n + k)
                tail += term
                # Envelope on the remainder from the observed decay.
                growth = abs(term) / abs(prev) if prev else r
                if growth < 1.0 and abs(term) * growth / (1.0 - growth) < tail_tol:
                    bound_ok += 1
                    if bound_ok >= 3:
                        break
                else:
                    bound_ok = 0
            else:
                raise DivergentTail(
                    f"tail cost series not below {tail_tol:.0e} after {max_terms} terms"
                )
        return float(head + 2.0 * self.probs[-1] * tail)

    # -- sampling ----------------------------------------------------------

    def sample(self, size: int, seed: int) -> np.ndarray:
        """Draw ``size`` values; deterministic for a fixed seed.

        Bin indices are drawn from the head masses plus two aggregated tail
        categories; tail offsets are geometric.  Continuous samples add a
        uniform position within the bin.
        """
        rng = np.random.default_rng(seed)
        n = self.tail_start
        r = self.tail_rate
        tail_total = self.probs[-1] / (1.0 - r)
        # Categories: 0 .. n-1 head bin |i|, n = right tail, n+1 = left tail.
        cat_probs = np.concatenate([self.probs[:1], 2.0 * self.probs[1:-1], [tail_total, tail_total]])
        cat_probs = cat_probs / cat_probs.sum()
        cats = rng.choice(cat_probs.size, size=size, p=cat_probs)

        idx = np.zeros(size, dtype=np.int64)
        head_mask = cats < n
        idx[head_mask] = cats[head_mask]
        # Head bins split evenly between the two signs.
        signs = rng.integers(0, 2, size=size) * 2 - 1
        idx[head_mask] *= signs[head_mask]
        for cat, sign in ((n, 1), (n + 1, -1)):
            mask = cats == cat
            count = int(mask.sum())
            offs = rng.geometric(1.0 - r, size=count) - 1
            idx[mask] = sign * (n + offs)
        if self.kind is DomainKind.DISCRETE:
            return idx.astype(float)
        jitter = rng.uniform(-0.5, 0.5, size=size)
        return (idx + jitter) * self.bin_width


def make_family(
    probs: Sequence[float] | np.ndarray,
    tail_rate: float,
    bin_width: float | None = None,
    kind: DomainKind = DomainKind.DISCRETE,
) -> TailedNoiseFamily:
    """Validated constructor.  ``bin_width`` defaults to 1 for discrete families."""
    if bin_width is None:
        if kind is not DomainKind.DISCRETE:
            raise RangeViolation("bin_width is required for continuous families")
        bin_width = 1.0
    return TailedNoiseFamily(
        probs=np.asarray(probs, dtype=float), tail_rate=tail_rate, bin_width=bin_width, kind=kind
    )


# -- serialization ---------------------------------------------------------


def _emit_json(obj) -> str:
    """json.dumps with floats at 17 significant digits (exact round trip)."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise RangeViolation(f"cannot serialize non-finite value {x}")
        return format(x, ".16e")
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_emit_json(x) for x in obj) + "]"
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_emit_json(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    raise RangeViolation(f"cannot serialize object of type {type(obj).__name__}")


def serialize(family: TailedNoiseFamily, metadata: dict | None = None) -> str:
    """Single-document text form; deserialize() inverts it exactly."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": family.kind.value,
        "N": family.tail_start,
        "r": family.tail_rate,
        "delta_bin": family.bin_width,
        "p": list(family.probs),
        "metadata": metadata if metadata is not None else {},
    }
    return _emit_json(doc) + "\n"


def load_document(text: str) -> tuple[TailedNoiseFamily, dict]:
    """Parse a serialized family plus its metadata block."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not a valid distribution document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("distribution document must be a JSON object")
    for key in ("schema_version", "kind", "N", "r", "delta_bin", "p"):
        if key not in doc:
            raise ParseError(f"distribution document is missing field {key!r}")
    try:
        kind = DomainKind(doc["kind"])
    except ValueError as exc:
        raise ParseError(f"unknown kind {doc['kind']!r}") from exc
    probs = doc["p"]
    if not isinstance(probs, list) or not all(isinstance(x, (int, float)) for x in probs):
        raise ParseError("field 'p' must be an array of numbers")
    if len(probs) != int(doc["N"]) + 1:
        raise ParseError(f"field 'p' has {len(probs)} entries but N={doc['N']}")
    family = TailedNoiseFamily(
        probs=np.asarray(probs, dtype=float),
        tail_rate=float(doc["r"]),
        bin_width=float(doc["delta_bin"]),
        kind=kind,
    )
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise ParseError("field 'metadata' must be an object")
    return family, meta


def deserialize(text: str) -> TailedNoiseFamily:
    return load_document(text)[0]


def to_csv(family: TailedNoiseFamily) -> str:
    """Two-column (bin index, mass) export down to relative tail mass 1e-12."""
    extra = math.ceil(math.log(1e-12) / math.log(family.tail_rate))
    m = family.tail_start + extra
    idx = np.arange(-m, m + 1)
    masses = family.mass_at(idx)
    lines = ["bin_index,mass"]
    lines += [f"{int(i)},{format(v, '.16e')}" for i, v in zip(idx, masses)]
    return "\n".join(lines) + "\n"
