"""Command-line front end: optimize, privacy curves, winner maps, benchmarks.

Every command reads one JSON config (flags override individual fields),
derives a short hash of the fully resolved config, and stamps that hash
plus the schema version into each emitted file.  Outputs carry no
timestamps or machine identifiers, so a rerun with an equal hash writes
byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .accounting import account_family, curve_to_csv, moments_epsilon, PrivacyCurve
from .baselines import MECHANISMS, build_mechanism_family
from .bench import BenchSettings, load_dataset, run_bench, SYNTHETIC_SHAPES
from .errors import (
    DomainViolation,
    IngestError,
    NoiseDesignError,
    NormalizationViolation,
    ParseError,
    RangeViolation,
)
from .family import DomainKind, SCHEMA_VERSION, serialize, to_csv
from .optimizer import OptimizationProblem, SolverSettings, optimize

#: Errors that mean the inputs were bad, as opposed to the math failing.
VALIDATION_ERRORS = (
    RangeViolation,
    DomainViolation,
    NormalizationViolation,
    ParseError,
    IngestError,
)

_PROBLEM_DEFAULTS = {
    "sigma": 8.0,
    "sensitivity": 1.0,
    "delta": 1e-6,
    "compositions": 10,
    "type": "continuous",
    "bin_width": 0.01,
    "tail_start": 8000,
    "tail_rate": 0.9999,
}

_SOLVER_DEFAULTS = {
    "iterations": 500,
    "alpha_period": 25,
    "backtracking_depth": 10,
}

_CURVE_DEFAULTS = {
    "deltas": None,  # falls back to [delta]
    "mechanisms": ["rdp", "gaussian", "laplace"],
    "pointwise_min": False,
    "grid_step": 5e-3,
}

_HEATMAP_DEFAULTS = {
    "sigmas": [],
    "compositions": [],
    "grid_step": 5e-3,
    "workers": 4,
}

_BENCH_DEFAULTS = {
    "dataset": "breast_cancer",
    "dataset_path": None,
    "target_epsilons": [0.62, 1.05],
    "query_count": 10,
    "draws": 100_000,
    "seeds": 20,
    "mechanisms": ["rdp", "gaussian", "laplace"],
    "bin_width": 0.02,
    "tail_start": 4000,
    "iterations": 300,
    "sigma_bracket": [1.0, 64.0],
    "workers": 4,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """First 16 hex digits of the sha-256 of the resolved config."""
    return hashlib.sha256(_canonical(config).encode("utf-8")).hexdigest()[:16]


def _merge_block(defaults: dict, supplied, where: str) -> dict:
    out = dict(defaults)
    if supplied is None:
        return out
    if not isinstance(supplied, dict):
        raise ParseError(f"config section {where!r} must be an object")
    for key, value in supplied.items():
        if key not in defaults:
            raise ParseError(f"unknown key {where}.{key!r} in config")
        out[key] = value
    return out


def resolve_config(path: Optional[str], overrides: dict) -> dict:
    """defaults <- JSON file <- command-line flags, with unknown keys rejected."""
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ParseError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParseError("config document must be a JSON object")

    cfg = dict(_PROBLEM_DEFAULTS)
    cfg.update(_SOLVER_DEFAULTS)
    cfg["out"] = "out"
    known = set(cfg) | {"curve", "heatmap", "bench"}
    for key in raw:
        if key not in known:
            raise ParseError(f"unknown key {key!r} in config")
    for key in set(cfg) & set(raw):
        cfg[key] = raw[key]
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    cfg["curve"] = _merge_block(_CURVE_DEFAULTS, raw.get("curve"), "curve")
    cfg["heatmap"] = _merge_block(_HEATMAP_DEFAULTS, raw.get("heatmap"), "heatmap")
    cfg["bench"] = _merge_block(_BENCH_DEFAULTS, raw.get("bench"), "bench")
    if cfg["curve"]["deltas"] is None:
        cfg["curve"]["deltas"] = [cfg["delta"]]
    return cfg


def _problem(cfg: dict) -> OptimizationProblem:
    try:
        kind = DomainKind(cfg["type"])
    except ValueError as exc:
        raise ParseError(f"unknown noise type {cfg['type']!r}") from exc
    return OptimizationProblem(
        sigma=float(cfg["sigma"]),
        sensitivity=float(cfg["sensitivity"]),
        target_delta=float(cfg["delta"]),
        compositions=int(cfg["compositions"]),
        kind=kind,
        tail_start=int(cfg["tail_start"]),
        tail_rate=float(cfg["tail_rate"]),
        bin_width=float(cfg["bin_width"]),
    )


def _solver(cfg: dict) -> SolverSettings:
    return SolverSettings(
        iterations=int(cfg["iterations"]),
        alpha_update_period=int(cfg["alpha_period"]),
        backtracking_depth=int(cfg["backtracking_depth"]),
    )


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _preamble(cfg_sha: str) -> list:
    return [f"# schema_version={SCHEMA_VERSION}", f"# config_sha256={cfg_sha}"]


def _ensure_out(cfg: dict) -> str:
    out = str(cfg["out"])
    os.makedirs(out, exist_ok=True)
    return out


def cmd_optimize(cfg: dict) -> int:
    out = _ensure_out(cfg)
    sha = config_hash(cfg)
    result = optimize(_problem(cfg), _solver(cfg))
    meta = {
        "sigma": float(cfg["sigma"]),
        "sensitivity": float(cfg["sensitivity"]),
        "target_delta": float(cfg["delta"]),
        "compositions": int(cfg["compositions"]),
        "final_alpha": result.final_alpha,
        "config_sha256": sha,
    }
    _atomic_write(os.path.join(out, "distribution.json"), serialize(result.family, meta))
    _atomic_write(os.path.join(out, "distribution.csv"), to_csv(result.family))

    head = {
        "schema_version": SCHEMA_VERSION,
        "config_sha256": sha,
        "iterations": int(cfg["iterations"]),
        "alpha_period": int(cfg["alpha_period"]),
    }
    lines = [_canonical(head)]
    for rec in result.trace:
        lines.append(
            _canonical(
                {
                    "iteration": rec.iteration,
                    "g_value": rec.g_value,
                    "log_g": rec.log_g,
                    "gamma": rec.gamma,
                    "alpha": rec.alpha,
                    "t_star": rec.t_star,
                    "step_size": rec.step_size,
                    "residual": rec.residual,
                    "accepted": rec.accepted,
                }
            )
        )
    _atomic_write(os.path.join(out, "trace.jsonl"), "\n".join(lines) + "\n")
    return 0


def _account(family, cfg: dict, deltas, mechanism: str, sigma: float, grid_step: float) -> PrivacyCurve:
    return account_family(
        family,
        sensitivity=float(cfg["sensitivity"]),
        compositions=int(cfg["compositions"]),
        target_deltas=tuple(deltas),
        grid_step=grid_step,
        mechanism=mechanism,
        sigma=sigma,
    )


def _mechanism_family(mechanism: str, cfg: dict):
    if mechanism == "rdp":
        return optimize(_problem(cfg), _solver(cfg)).family
    sigma = float(cfg["sigma"])
    if mechanism in ("dgauss", "dlaplace"):
        tail = max(64, int(math.ceil(12.0 * sigma)))
        return build_mechanism_family(mechanism, sigma, 1.0, tail, float(cfg["tail_rate"]),
                                      DomainKind.DISCRETE)
    return build_mechanism_family(
        mechanism,
        sigma,
        float(cfg["bin_width"]),
        int(cfg["tail_start"]),
        float(cfg["tail_rate"]),
        DomainKind.CONTINUOUS,
    )


def cmd_curve(cfg: dict) -> int:
    out = _ensure_out(cfg)
    sha = config_hash(cfg)
    block = cfg["curve"]
    deltas = sorted(float(d) for d in block["deltas"])
    if not deltas:
        raise RangeViolation("curve.deltas must be nonempty")
    grid_step = float(block["grid_step"])
    for mech in block["mechanisms"]:
        if mech not in MECHANISMS:
            raise RangeViolation(f"unknown mechanism {mech!r}; pick from {MECHANISMS}")
        fam = _mechanism_family(mech, cfg)
        curve = _account(fam, cfg, deltas, mech, float(cfg["sigma"]), grid_step)
        _atomic_write(
            os.path.join(out, f"curve_{mech}.csv"),
            curve_to_csv(curve, _preamble(sha)),
        )
    if block["pointwise_min"]:
        points = []
        for delta in deltas:
            sub = dict(cfg)
            sub["delta"] = delta
            fam = optimize(_problem(sub), _solver(sub)).family
            curve = _account(fam, cfg, (delta,), "rdp", float(cfg["sigma"]), grid_step)
            points.append(curve.points[0])
        envelope = PrivacyCurve(
            points=tuple(sorted(points)),
            provenance={
                "mechanism": "rdp_envelope",
                "accountant": "pld",
                "compositions": int(cfg["compositions"]),
                "sigma": float(cfg["sigma"]),
                "sensitivity": float(cfg["sensitivity"]),
            },
        )
        _atomic_write(
            os.path.join(out, "curve_rdp_envelope.csv"),
            curve_to_csv(envelope, _preamble(sha)),
        )
    return 0


HEATMAP_HEADER = "sigma,compositions,eps_rdp,eps_gauss,eps_laplace,eps_dgauss,eps_dlaplace,winner"

_HEATMAP_COLUMNS = ("rdp", "gaussian", "laplace", "dgauss", "dlaplace")


def heatmap_winner(epsilons: dict) -> str:
    """Winner label for one cell: "rdp" only on a >= 2% margin.

    ``epsilons`` maps mechanism id to accounted epsilon (NaN for a failed
    mechanism).  A cell with no finite baseline or no finite rdp value is
    an error cell.
    """
    finite = {m: e for m, e in epsilons.items() if math.isfinite(e)}
    others = {m: e for m, e in finite.items() if m != "rdp"}
    if "rdp" not in finite or not others:
        return "error"
    best_other = min(others, key=others.get)
    if finite["rdp"] <= 0.98 * others[best_other]:
        return "rdp"
    return best_other


def _heatmap_cell(cfg: dict, sigma: float, compositions: int) -> tuple:
    cell = dict(cfg)
    cell["sigma"] = sigma
    cell["compositions"] = compositions
    eps = {}
    for mech in _HEATMAP_COLUMNS:
        try:
            fam = _mechanism_family(mech, cell)
            curve = _account(
                fam, cell, (float(cfg["delta"]),), mech, sigma,
                float(cfg["heatmap"]["grid_step"]),
            )
            eps[mech] = curve.points[0][0]
        except NoiseDesignError:
            eps[mech] = math.nan
    return sigma, compositions, eps


def cmd_heatmap(cfg: dict) -> int:
    out = _ensure_out(cfg)
    sha = config_hash(cfg)
    block = cfg["heatmap"]
    sigmas = [float(s) for s in block["sigmas"]]
    comps = [int(c) for c in block["compositions"]]
    if not sigmas or not comps:
        raise RangeViolation("heatmap.sigmas and heatmap.compositions must be nonempty")
    cells = [(s, c) for s in sigmas for c in comps]
    with ThreadPoolExecutor(max_workers=int(block["workers"])) as pool:
        futs = [pool.submit(_heatmap_cell, cfg, s, c) for s, c in cells]
        results = [f.result() for f in futs]
    lines = _preamble(sha) + [HEATMAP_HEADER]
    for sigma, compositions, eps in results:
        winner = heatmap_winner(eps)
        fields = [format(sigma, ".12g"), str(compositions)]
        for mech in _HEATMAP_COLUMNS:
            value = eps[mech]
            fields.append(format(value, ".12g") if math.isfinite(value) else "nan")
        fields.append(winner)
        lines.append(",".join(fields))
    _atomic_write(os.path.join(out, "heatmap.csv"), "\n".join(lines) + "\n")
    return 0


def cmd_bench(cfg: dict) -> int:
    out = _ensure_out(cfg)
    sha = config_hash(cfg)
    block = cfg["bench"]
    settings = BenchSettings(
        target_epsilons=tuple(float(e) for e in block["target_epsilons"]),
        target_delta=float(cfg["delta"]),
        query_count=int(block["query_count"]),
        draws=int(block["draws"]),
        seeds=int(block["seeds"]),
        mechanisms=tuple(block["mechanisms"]),
        bin_width=float(block["bin_width"]),
        tail_start=int(block["tail_start"]),
        tail_rate=float(cfg["tail_rate"]),
        iterations=int(block["iterations"]),
        sigma_bracket=tuple(float(x) for x in block["sigma_bracket"]),
    )
    if block["dataset_path"] is not None:
        data = load_dataset(str(block["dataset_path"]))
        label = os.path.splitext(os.path.basename(str(block["dataset_path"])))[0]
    else:
        data = None
        label = str(block["dataset"])
    result = run_bench(label, settings, data=data, max_workers=int(block["workers"]))
    preamble = _preamble(sha) + [
        f"# query_weighting={result.metadata['query_weighting']}",
    ]
    _atomic_write(os.path.join(out, "bench.csv"), result.to_csv(preamble))
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--sigma", type=float)
    p.add_argument("--sensitivity", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--compositions", type=int)
    p.add_argument("--type", choices=["continuous", "discrete"])
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.add_argument("--tail-start", dest="tail_start", type=int)
    p.add_argument("--tail-rate", dest="tail_rate", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha-period", dest="alpha_period", type=int)
    p.add_argument("--out")


_OVERRIDE_KEYS = (
    "sigma", "sensitivity", "delta", "compositions", "type", "bin_width",
    "tail_start", "tail_rate", "iterations", "alpha_period", "out",
)

_COMMANDS = {
    "optimize": cmd_optimize,
    "curve": cmd_curve,
    "heatmap": cmd_heatmap,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(prog="dpnoise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_common(sub.add_parser(name))
    args = parser.parse_args(argv)
    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
    try:
        cfg = resolve_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except VALIDATION_ERRORS as exc:
        print(f"dpnoise: invalid input: {exc}", file=sys.stderr)
        return 1
    except NoiseDesignError as exc:
        print(f"dpnoise: computation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
