"""Benchmark harness and command-line driver: ingestion, calibration, exit codes."""

import json
import math
import os

import numpy as np
import pytest

from dpnoise.bench import (
    BENCH_CSV_HEADER,
    SYNTHETIC_SHAPES,
    BenchSettings,
    accounted_epsilon,
    calibrate_sigma,
    load_dataset,
    normalize_features,
    run_bench,
    sample_family,
    synthetic_dataset,
)
from dpnoise.cli import HEATMAP_HEADER, config_hash, heatmap_winner, main, resolve_config
from dpnoise.errors import CalibrationFailure, IngestError, ParseError, RangeViolation
from dpnoise.family import DomainKind, make_family

from strategies import random_family

TINY = BenchSettings(
    target_epsilons=(1.0,),
    target_delta=1e-6,
    query_count=2,
    draws=2_000,
    seeds=3,
    mechanisms=("gaussian", "laplace"),
    bin_width=0.1,
    tail_start=200,
    tail_rate=0.9999,
    iterations=8,
    sigma_bracket=(1.0, 64.0),
)


# ---------------------------------------------------------------- ingestion


def test_load_dataset_happy_path(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n3.5,-4\n")
    data = load_dataset(str(path))
    assert data.shape == (2, 2)
    assert data[1, 1] == -4.0


@pytest.mark.parametrize(
    "text",
    [
        "a,b\n",  # no data rows
        "a,b\n1,2\n3\n",  # ragged
        "a,b\n1,x\n",  # non-numeric
        "a,b\n1,inf\n",  # non-finite
    ],
)
def test_load_dataset_rejects_malformed(tmp_path, text):
    path = tmp_path / "d.csv"
    path.write_text(text)
    with pytest.raises(IngestError):
        load_dataset(str(path))


def test_load_dataset_missing_and_binary(tmp_path):
    with pytest.raises(IngestError):
        load_dataset(str(tmp_path / "absent.csv"))
    raw = tmp_path / "d.csv"
    raw.write_bytes(b"a,b\n\xff\xfe\x00\n1,2\n")
    with pytest.raises(IngestError):
        load_dataset(str(raw))


def test_synthetic_shapes_and_determinism():
    for name, shape in SYNTHETIC_SHAPES.items():
        assert synthetic_dataset(name).shape == shape
    a, b = synthetic_dataset("diabetes"), synthetic_dataset("diabetes")
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synthetic_dataset("diabetes", seed=8))
    with pytest.raises(IngestError):
        synthetic_dataset("digits")


def test_normalize_features_bounds_and_constant_column():
    rng = np.random.default_rng(3)
    data = rng.normal(5.0, 2.0, size=(300, 4))
    data[:, 2] = 7.0
    out = normalize_features(data)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.all(out[:, 2] == 0.0)
    # roughly five percent clipped at each end
    frac_lo = float(np.mean(out[:, 0] == 0.0))
    assert 0.02 <= frac_lo <= 0.10
    with pytest.raises(IngestError):
        normalize_features(np.empty((0, 3)))


# ------------------------------------------------------------------ sampling


def test_sampler_matches_family_moments():
    rng = np.random.default_rng(17)
    fam = random_family(rng, 30, 0.8)
    draws = sample_family(fam, 400_000, np.random.default_rng(5))
    assert np.all(draws == np.round(draws))  # discrete support
    assert abs(float(draws.mean())) <= 0.05
    assert float(np.mean(draws * draws)) == pytest.approx(fam.variance(), rel=0.02)
    # exact-tail draws actually reach past the anchor
    n = len(fam.probs) - 1
    tail_frac = float(np.mean(np.abs(draws) >= n))
    expected = 2.0 * fam.probs[-1] / (1.0 - fam.tail_rate)
    assert tail_frac == pytest.approx(expected, rel=0.1)


def test_sampler_continuous_jitter():
    fam = make_family([0.6, 0.1], 0.5, bin_width=0.2, kind=DomainKind.CONTINUOUS)
    draws = sample_family(fam, 200_000, np.random.default_rng(9))
    units = draws / 0.2
    frac = units - np.round(units)
    assert float(np.abs(frac).max()) <= 0.5
    assert float(np.mean(np.abs(frac) > 0.01)) > 0.9
    assert float(np.mean(draws * draws)) == pytest.approx(fam.variance(), rel=0.02)


# --------------------------------------------------------------- calibration


def test_calibrate_sigma_hits_target_and_caches():
    cache: dict = {}
    target = accounted_epsilon("gaussian", 4.0, TINY, TINY.query_count)
    sigma = calibrate_sigma(
        "gaussian", target, TINY.target_delta, TINY.query_count, (1.0, 64.0), TINY, cache
    )
    probes = len(cache)
    check = accounted_epsilon("gaussian", round(sigma, 4), TINY, TINY.query_count)
    assert abs(check - target) <= TINY.epsilon_tol
    # a repeated run reuses every probe
    again = calibrate_sigma(
        "gaussian", target, TINY.target_delta, TINY.query_count, (1.0, 64.0), TINY, cache
    )
    assert again == sigma
    assert len(cache) == probes


def test_calibrate_sigma_bracket_errors():
    with pytest.raises(CalibrationFailure):
        calibrate_sigma("gaussian", 1e-9, TINY.target_delta, TINY.query_count, (1.0, 64.0), TINY)
    with pytest.raises(CalibrationFailure):
        calibrate_sigma("gaussian", 1.0, TINY.target_delta, TINY.query_count, (64.0, 1.0), TINY)


def test_bench_settings_validation():
    with pytest.raises(RangeViolation):
        BenchSettings(target_epsilons=())
    with pytest.raises(RangeViolation):
        BenchSettings(draws=0)
    with pytest.raises(RangeViolation):
        BenchSettings(sigma_bracket=(8.0, 2.0))
    with pytest.raises(RangeViolation):
        BenchSettings(mechanisms=("gaussian", "cauchy"))


# ------------------------------------------------------------------- bench


def test_run_bench_gaussian_self_improvement_is_zero():
    settings = BenchSettings(
        target_epsilons=(1.0,), query_count=2, draws=2_000, seeds=2,
        mechanisms=("gaussian",), bin_width=0.1, tail_start=200, iterations=8,
    )
    result = run_bench("heart_disease", settings)
    assert len(result.rows) == 1
    row = result.rows[0]
    assert row.mechanism == "gaussian"
    assert row.improvement_pct == 0.0
    assert row.mse_mean > 0.0
    assert result.metadata["query_sensitivity"] == pytest.approx(1.0 / 303.0)


def test_run_bench_deterministic_and_csv_layout():
    a = run_bench("heart_disease", TINY, max_workers=2)
    b = run_bench("heart_disease", TINY, max_workers=4)
    assert a.rows == b.rows
    text = a.to_csv(("# cfg=deadbeef",))
    lines = text.strip().split("\n")
    assert lines[0] == "# cfg=deadbeef"
    assert lines[1] == BENCH_CSV_HEADER
    assert len(lines) == 2 + len(a.rows)
    assert all(len(line.split(",")) == 6 for line in lines[2:])


def test_run_bench_requires_gaussian_and_enough_columns():
    with pytest.raises(RangeViolation):
        run_bench("heart_disease", BenchSettings(mechanisms=("laplace",)))
    with pytest.raises(RangeViolation):
        run_bench("heart_disease", BenchSettings(query_count=14))


# --------------------------------------------------------------------- cli


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
    assert len(config_hash({})) == 16


def test_resolve_config_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"sigma": 2.0, "compositions": 5}))
    cfg = resolve_config(str(path), {"sigma": 3.0})
    assert cfg["sigma"] == 3.0
    assert cfg["compositions"] == 5
    assert cfg["delta"] == 1e-6
    assert cfg["curve"]["deltas"] == [1e-6]


def test_resolve_config_rejections(tmp_path):
    bad_key = tmp_path / "a.json"
    bad_key.write_text(json.dumps({"sigmaa": 2.0}))
    with pytest.raises(ParseError):
        resolve_config(str(bad_key), {})
    bad_block = tmp_path / "b.json"
    bad_block.write_text(json.dumps({"curve": {"bogus": 1}}))
    with pytest.raises(ParseError):
        resolve_config(str(bad_block), {})
    not_json = tmp_path / "c.json"
    not_json.write_text("{")
    with pytest.raises(ParseError):
        resolve_config(str(not_json), {})
    with pytest.raises(ParseError):
        resolve_config(str(tmp_path / "absent.json"), {})


def test_heatmap_winner_margin_rule():
    assert heatmap_winner({"rdp": 1.0, "gaussian": 1.03, "laplace": 2.0}) == "rdp"
    assert heatmap_winner({"rdp": 1.0, "gaussian": 1.01}) == "gaussian"
    assert heatmap_winner({"rdp": 1.0, "gaussian": 0.9, "dlaplace": 0.8}) == "dlaplace"
    assert heatmap_winner({"rdp": math.nan, "gaussian": 1.0}) == "error"
    assert heatmap_winner({"rdp": 1.0, "gaussian": math.nan}) == "error"


TINY_FLAGS = [
    "--sigma", "3", "--bin-width", "0.25", "--tail-start", "100",
    "--tail-rate", "0.9", "--iterations", "10", "--alpha-period", "5",
]


def run_optimize(out_dir) -> dict:
    assert main(["optimize", *TINY_FLAGS, "--out", str(out_dir)]) == 0
    return {
        name: (out_dir / name).read_bytes()
        for name in ("distribution.json", "distribution.csv", "trace.jsonl")
    }


def test_cli_optimize_outputs_and_rerun_identical(tmp_path):
    first = run_optimize(tmp_path / "o")
    doc = json.loads(first["distribution.json"])
    assert doc["metadata"]["sigma"] == 3.0
    sha = doc["metadata"]["config_sha256"]
    assert len(sha) == 16

    lines = first["trace.jsonl"].decode().strip().split("\n")
    head = json.loads(lines[0])
    assert head["config_sha256"] == sha
    assert head["iterations"] == 10
    assert len(lines) == 11
    record = json.loads(lines[1])
    for key in ("iteration", "g_value", "log_g", "gamma", "alpha", "t_star",
                "step_size", "residual", "accepted"):
        assert key in record
    assert first["distribution.csv"].decode().startswith("bin_index,mass")

    second = run_optimize(tmp_path / "o")
    assert first == second


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["optimize", "--sigma"])  # flag missing its value
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])  # subcommand required
    assert exc.value.code == 1
    # validation failure: negative scale
    assert main(["optimize", "--sigma", "-1", "--out", str(tmp_path / "x")]) == 1
    # compute failure: variance budget below what one bin can carry
    code = main([
        "optimize", "--sigma", "0.02", "--bin-width", "0.1", "--tail-start", "50",
        "--out", str(tmp_path / "y"),
    ])
    assert code == 2
    err = capsys.readouterr().err
    assert "invalid input" in err and "computation failed" in err


def test_cli_curve_outputs(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "sigma": 4.0, "bin_width": 0.1, "tail_start": 200, "tail_rate": 0.9999,
        "compositions": 2, "iterations": 5, "alpha_period": 3,
        "out": str(tmp_path / "curves"),
        "curve": {"deltas": [1e-4, 1e-6], "mechanisms": ["gaussian"],
                  "pointwise_min": True, "grid_step": 1e-2},
    }))
    assert main(["curve", "--config", str(cfg)]) == 0
    text = (tmp_path / "curves" / "curve_gaussian.csv").read_text()
    lines = text.strip().split("\n")
    assert lines[0].startswith("# schema_version=")
    assert lines[1].startswith("# config_sha256=")
    assert lines[2] == "epsilon,delta,mechanism,accountant,compositions,sigma,sensitivity"
    eps = [float(line.split(",")[0]) for line in lines[3:]]
    assert eps == sorted(eps) and len(eps) == 2
    env = (tmp_path / "curves" / "curve_rdp_envelope.csv").read_text()
    assert "rdp_envelope" in env
    assert len(env.strip().split("\n")) == 5


def test_cli_heatmap_grid(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "sigma": 4.0, "bin_width": 0.1, "tail_start": 200, "tail_rate": 0.9999,
        "iterations": 5, "alpha_period": 3, "out": str(tmp_path / "hm"),
        "heatmap": {"sigmas": [4.0], "compositions": [1, 4], "grid_step": 1e-2,
                    "workers": 2},
    }))
    assert main(["heatmap", "--config", str(cfg)]) == 0
    lines = (tmp_path / "hm" / "heatmap.csv").read_text().strip().split("\n")
    assert lines[2] == HEATMAP_HEADER
    assert len(lines) == 5
    for line in lines[3:]:
        fields = line.split(",")
        assert len(fields) == 8
        assert fields[-1] in ("rdp", "gaussian", "laplace", "dgauss", "dlaplace", "error")
        assert all(float(f) > 0.0 for f in fields[2:7])


def test_cli_bench_with_dataset_file(tmp_path):
    rng = np.random.default_rng(2)
    rows = ["f0,f1,f2"]
    for _ in range(40):
        rows.append(",".join(format(v, ".6f") for v in rng.beta(2.0, 5.0, size=3)))
    data = tmp_path / "mini.csv"
    data.write_text("\n".join(rows) + "\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "out": str(tmp_path / "bench"),
        "bench": {
            "dataset_path": str(data), "target_epsilons": [1.0], "query_count": 2,
            "draws": 1000, "seeds": 2, "mechanisms": ["rdp", "gaussian"],
            "bin_width": 0.1, "tail_start": 600, "iterations": 8,
            "sigma_bracket": [3.0, 10.0], "workers": 2,
        },
    }))
    assert main(["bench", "--config", str(cfg)]) == 0
    lines = (tmp_path / "bench" / "bench.csv").read_text().strip().split("\n")
    assert lines[2] == "# query_weighting=uniform across features"
    assert lines[3] == BENCH_CSV_HEADER
    assert len(lines) == 6
    mechs = {line.split(",")[2] for line in lines[4:]}
    assert mechs == {"rdp", "gaussian"}
    assert all(line.split(",")[0] == "mini" for line in lines[4:])
