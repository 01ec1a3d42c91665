#!/usr/bin/env python3
"""
Test the Monte Carlo size study: design, reproducibility, summaries and outputs
"""
import json
import os
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
import pytest

from mlmtest import simulation
from mlmtest.errors import ConfigError, InfeasibleOmega
from mlmtest.simulation import (
    PUBLISHED_RATES,
    SCENARIO_GRID,
    SimConfig,
    SimResult,
    design_frame,
    grid_configs,
    quantile_discrepancies,
    rate_summary,
    run_size_study,
    simulate_dataset,
    unit_groups,
    unit_sizes,
    write_outputs,
)
from mlmtest.testing import STATISTICS, run_tests

SCHEMA = Path(__file__).parent / "docs" / "results.schema.json"
WORKERS = min(4, os.cpu_count() or 1)


def test_unit_sizes_cycle_from_two_to_nine():
    assert unit_sizes(10).tolist() == [2, 3, 4, 5, 6, 7, 8, 9, 2, 3]
    assert unit_sizes(24).sum() == 3 * sum(range(2, 10))


def test_units_split_into_three_groups():
    groups = unit_groups(12)
    assert np.bincount(groups).tolist() == [4, 4, 4]
    assert np.all(np.diff(groups) >= 0)


def test_simulated_dataset_is_reproducible():
    a = simulate_dataset(12, (0.0, 0.2, 0.0, 0.0), (1.0, 0.25, 0.5, 0.05), np.random.default_rng(3))
    b = simulate_dataset(12, (0.0, 0.2, 0.0, 0.0), (1.0, 0.25, 0.5, 0.05), np.random.default_rng(3))
    pd.testing.assert_frame_equal(a.table, b.table)
    assert a.N == 12
    assert a.tau.tolist() == unit_sizes(12).tolist()
    assert set(a.table["t"].between(0.0, 1.0)) == {True}

    frame = design_frame(a)
    assert frame.names == ("x2", "x3", "(Intercept)", "t")
    assert frame.p == 2 and frame.q == 2
    # x2 and x3 are constant within a unit
    for group in frame.groups:
        assert np.all(group.X[:, :, :2] == group.X[:, :1, :2])


def test_scenario_grid():
    assert len(SCENARIO_GRID) == 12
    configs = grid_configs(replications=10, master_seed=5)
    assert [c.scenario for c in configs] == list(SCENARIO_GRID)
    for c in configs:
        assert c.omega[0] == 1.0 and c.omega[3] == 0.05
        assert c.beta == (0.0, 0.2, 0.0, 0.0)
        assert c.master_seed == 5


def test_invalid_configurations_are_rejected():
    with pytest.raises(ConfigError):
        SimConfig(N=12, replications=0)
    with pytest.raises(ConfigError):
        SimConfig(N=12, alphas=(1.5,))
    with pytest.raises(InfeasibleOmega):
        SimConfig(N=12, omega=(1.0, 2.0, 0.5, 0.05))


def test_size_study_is_reproducible():
    config = SimConfig(N=12, replications=2, master_seed=7)
    calls = []
    first = run_size_study(config, progress_callback=lambda done, total: calls.append((done, total)))
    second = run_size_study(config)
    pd.testing.assert_frame_equal(first.statistics, second.statistics)
    pd.testing.assert_frame_equal(first.rates, second.rates)
    assert calls == [(1, 2), (2, 2)]
    assert set(first.rates["statistic"]) == set(STATISTICS)
    assert len(first.rates) == len(STATISTICS) * len(config.alphas)
    assert first.metadata["reference"] is not None


def chi2_result(seed=0, size=100_000):
    rng = np.random.default_rng(seed)
    table = pd.DataFrame({name: rng.chisquare(2, size=size) for name in STATISTICS})
    return SimResult(config=SimConfig(N=12, replications=size), statistics=table)


def test_quantile_discrepancies_vanish_for_chi_square_draws():
    q = quantile_discrepancies(chi2_result())
    assert list(q.columns) == ["probability", "asymptotic_quantile", "statistic", "relative_discrepancy"]
    assert len(q) == 99 * len(STATISTICS)
    for _, block in q.groupby("statistic"):
        assert abs(np.median(block["relative_discrepancy"])) < 0.05


def test_outputs_are_written_and_match_schema(tmp_path):
    result = run_size_study(SimConfig(N=12, replications=2, master_seed=1))
    written = write_outputs([result], tmp_path)
    assert sorted(p.name for p in written) == ["quantiles.csv", "rates.csv", "replications.csv", "results.json"]
    payload = json.loads((tmp_path / "results.json").read_text(encoding="utf-8"))
    jsonschema.validate(payload, json.loads(SCHEMA.read_text(encoding="utf-8")))
    replications = pd.read_csv(tmp_path / "replications.csv")
    assert len(replications) == 2
    assert set(STATISTICS) <= set(replications.columns)

    summary = rate_summary([result])
    assert len(summary) == 2
    assert summary["LR_published"].tolist() == [13.0, 20.8]


@pytest.mark.slow
def test_worker_count_does_not_change_results():
    config = SimConfig(N=12, replications=8, master_seed=11)
    serial = run_size_study(config)
    parallel = run_size_study(config, workers=2)
    pd.testing.assert_frame_equal(serial.statistics, parallel.statistics)


@pytest.fixture(scope="module")
def small_sample_study():
    return run_size_study(SimConfig(N=12, replications=5000, master_seed=2024, true_constants=True), workers=WORKERS)


@pytest.mark.slow
def test_rejection_rates_near_published_values(small_sample_study):
    reference = PUBLISHED_RATES[small_sample_study.config.scenario]
    assert not small_sample_study.flagged
    for alpha, published in reference.items():
        for name, value in zip(STATISTICS, published):
            assert small_sample_study.rate(name, alpha) == pytest.approx(value, abs=1.5)


@pytest.mark.slow
def test_bartlett_constants_predict_the_mean_statistics(small_sample_study):
    table = small_sample_study.statistics
    for statistic, constant in (("LR", "C_true"), ("LR_cr", "Cstar_true")):
        values = table[statistic].to_numpy(dtype=float)
        truth = table[constant].to_numpy(dtype=float)
        ok = np.isfinite(values) & np.isfinite(truth)
        se = values[ok].std(ddof=1) / np.sqrt(ok.sum())
        assert abs(values[ok].mean() - (2 + truth[ok].mean())) < 4 * se


@pytest.mark.slow
def test_corrected_statistics_track_the_reference_distribution(small_sample_study):
    probabilities = np.round(np.arange(50, 96) / 100.0, 2)
    q = quantile_discrepancies(small_sample_study, probabilities)
    curves = {name: block["relative_discrepancy"].to_numpy() for name, block in q.groupby("statistic")}
    assert 0.35 <= curves["LR"].mean() <= 0.65
    for name in ("LR_cr", "LR_cr_star"):
        assert np.all(np.abs(curves[name]) < np.abs(curves["LR"]))


@pytest.mark.parametrize("error", [ValueError("non-finite design"), OverflowError("exp overflow"), ZeroDivisionError("empty unit")])
def test_failed_replications_are_tallied_not_raised(monkeypatch, error):
    calls = []

    def flaky(frame, psi0=None, full=None):
        calls.append(1)
        if len(calls) == 2:
            raise error
        return run_tests(frame, psi0, full=full)

    monkeypatch.setattr(simulation, "run_tests", flaky)
    result = run_size_study(SimConfig(N=12, replications=3, master_seed=3))
    assert len(result.statistics) == 3
    errors = result.statistics["error"].tolist()
    assert errors[0] == "" and errors[2] == ""
    assert errors[1].startswith(type(error).__name__)
    assert all(np.isnan(result.statistics.loc[1, name]) for name in STATISTICS)
    assert all(count >= 1 for count in result.failures.values())
    assert result.flagged
    assert all(result.rates["valid"] <= 2)


@pytest.fixture(scope="module")
def scenario_grid_study():
    return [run_size_study(config, workers=WORKERS) for config in grid_configs(replications=5000, master_seed=2024)]


@pytest.mark.slow
def test_every_scenario_reproduces_the_published_rates(scenario_grid_study):
    assert [r.config.scenario for r in scenario_grid_study] == list(SCENARIO_GRID)
    for result in scenario_grid_study:
        assert not result.flagged, result.failures
        tolerance = 1.5 if result.config.N == 12 else 1.0
        for alpha, published in PUBLISHED_RATES[result.config.scenario].items():
            for name, value in zip(STATISTICS, published):
                assert result.rate(name, alpha) == pytest.approx(value, abs=tolerance), (result.config.scenario, alpha, name)


@pytest.mark.slow
def test_corrections_order_the_rejection_rates(scenario_grid_study):
    for result in scenario_grid_study:
        for alpha in result.config.alphas:
            lr, lr_star, lr_cr, lr_cr_star = (result.rate(name, alpha) for name in STATISTICS)
            se = float(result.rates.query("statistic == 'LR_star' and alpha == @alpha")["mc_se"].iloc[0])
            assert lr > lr_star
            # at N = 36 the corrected rates sit within Monte Carlo noise of each other
            slack = 2 * se if result.config.N == 36 else 0.0
            assert lr_star > max(lr_cr, lr_cr_star) - slack
