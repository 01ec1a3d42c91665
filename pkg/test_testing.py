#!/usr/bin/env python3
"""
Test the four likelihood-ratio-type statistics and their JSON report
"""
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from scipy import stats

from conftest import make_frame
from mlmtest.numutil import chisq_sf
from mlmtest.testing import STATISTICS, TestReport, _clamp, run_tests

SCHEMA = Path(__file__).parent / "docs" / "report.schema.json"


@pytest.fixture(scope="module")
def random_intercept_report():
    frame = make_frame(21, N=10, n=3, p=2, q=1)
    return frame, run_tests(frame)


def test_null_at_the_estimate_gives_zero_statistic():
    frame = make_frame(21, N=8, n=3, p=2, q=1)
    first = run_tests(frame)
    report = run_tests(frame, first.full.beta_hat[:2], full=first.full)
    assert report.LR == pytest.approx(0.0, abs=1e-5)
    assert report.pvalues["LR"] == pytest.approx(1.0, abs=1e-5)


def test_statistics_and_pvalues_are_consistent(random_intercept_report):
    frame, report = random_intercept_report
    assert report.df == frame.p == 2
    assert list(report.names) == list(frame.names[:2])
    assert np.array_equal(report.psi0, np.zeros(2))
    for name in STATISTICS:
        value = report.statistic(name)
        if value is None:
            assert name in report.unavailable
            assert report.pvalues[name] is None
        else:
            assert value >= 0.0
            assert report.pvalues[name] == pytest.approx(chisq_sf(value, 2))


def test_bartlett_scaling(random_intercept_report):
    _, report = random_intercept_report
    constants = report.constants
    assert constants is not None
    assert np.allclose(constants.omega, report.restricted.omega_hat)
    if constants.scale > 0:
        assert report.LR_star == pytest.approx(report.LR / (1 + report.C / 2))
    if report.LR_cr is not None and constants.scale_star > 0:
        assert report.LR_cr_star == pytest.approx(report.LR_cr / (1 + report.C_star / 2))


def test_regression_constants_in_the_report():
    frame = make_frame(11, N=6, n=3, p=2, q=0)
    report = run_tests(frame)
    T = frame.T
    assert report.C == pytest.approx(2 * (3 + 1 - 1) / T, rel=1e-8)
    assert report.C_star == pytest.approx(0.0, abs=1e-10)
    assert report.LR_star == pytest.approx(report.LR / (1 + 3 / T), rel=1e-8)
    if report.LR_cr is not None:
        assert report.LR_cr_star == pytest.approx(report.LR_cr, rel=1e-8)


def test_invariance_under_nuisance_reparameterization():
    frame = make_frame(8, N=10, n=4, p=1, q=1)
    A = np.array([[1.0, 0.5, 0.0], [0.0, 2.0, 0.0], [0.3, -0.2, 1.5]])
    X = frame.X.copy()
    X[:, 1:] = X[:, 1:] @ A
    moved = frame.with_design(X, p=1)
    a = run_tests(frame, [0.1])
    b = run_tests(moved, [0.1])
    assert b.LR == pytest.approx(a.LR, abs=1e-5)
    assert b.C == pytest.approx(a.C, rel=1e-4)
    assert b.C_star == pytest.approx(a.C_star, rel=1e-4, abs=1e-8)
    if a.LR_cr is not None and b.LR_cr is not None:
        assert b.LR_cr == pytest.approx(a.LR_cr, abs=1e-4)


def test_wrong_null_length_is_rejected():
    frame = make_frame(4, N=5, n=3, p=2, q=1)
    with pytest.raises(ValueError):
        run_tests(frame, [0.0])


def test_negative_values_are_clamped_and_flagged():
    report = TestReport(df=1, psi0=np.zeros(1), names=("x0",))
    assert _clamp("LR", -1e-9, report) == 0.0
    assert report.flags == []
    assert _clamp("LR", -0.01, report) == 0.0
    assert len(report.flags) == 1 and "LR" in report.flags[0]
    assert _clamp("LR", 1.5, report) == 1.5


def test_report_matches_schema(random_intercept_report):
    frame, report = random_intercept_report
    payload = {"N": frame.N, "T": frame.T, "hypotheses": [{"name": "H0", **report.to_dict()}]}
    schema = json.loads(SCHEMA.read_text(encoding="utf-8"))
    jsonschema.validate(json.loads(json.dumps(payload)), schema)


@pytest.mark.slow
def test_null_pvalues_are_uniform():
    pvalues = {name: [] for name in STATISTICS}
    for seed in range(500):
        frame = make_frame(1000 + seed, N=200, n=2, p=1, q=1, beta=[0.3, 0.3])
        report = run_tests(frame, [0.3])
        for name in STATISTICS:
            if report.pvalues[name] is not None:
                pvalues[name].append(report.pvalues[name])
    for name in STATISTICS:
        assert len(pvalues[name]) >= 490, name
        assert stats.kstest(pvalues[name], "uniform").pvalue > 0.01, name
