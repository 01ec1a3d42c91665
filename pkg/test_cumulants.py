#!/usr/bin/env python3
"""
Test the exact expected-derivative engine against closed forms and finite differences
"""
import numpy as np
import pytest

from conftest import make_frame
from mlmtest.covariance import AR1, CovarianceModel, build_sigma, derived_inverse_derivatives
from mlmtest.cumulants import ORIGINAL, ORTHOGONAL, CumulantEngine
from mlmtest.likelihood import orthogonalize

H = 1e-5


def shifted(frame, omega, psi, parameterization, j, h):
    """Tensors with ω_j moved by h, or ψ_j when j indexes the interest block."""
    omega, psi = omega.copy(), psi.copy()
    if j < frame.p:
        psi[j] += h
    else:
        omega[j - frame.n] += h
    return CumulantEngine(frame, omega, psi, parameterization).tensors()


def test_first_cumulants_vanish():
    frame = make_frame(3, N=3, n=2, p=1, q=1, family=AR1)
    engine = CumulantEngine(frame, [0.5, 0.3, 0.8], psi=[0.7])
    for r in range(engine.layout.dim):
        assert engine.expected((r,)) == pytest.approx(0.0, abs=1e-10)


def test_second_cumulants_match_information_blocks():
    frame = make_frame(8, N=4, n=3, p=1, q=1)
    omega = np.array([0.5, 0.7])
    bundle = derived_inverse_derivatives(build_sigma(CovarianceModel(frame.family, 1, omega), frame.groups))
    orth = orthogonalize(frame, bundle)
    t = CumulantEngine(frame, omega).tensors()
    lay = t.layout
    assert np.allclose(t.k2, t.k2.T)
    assert np.allclose(t.k2[np.ix_(lay.psi, lay.psi)], -orth.H)
    assert np.allclose(t.k2[np.ix_(lay.xi, lay.xi)], -orth.V)
    assert np.allclose(t.k2[np.ix_(lay.psi, lay.nuisance)], 0.0, atol=1e-12)
    D = np.array([[0.5 * np.trace(bundle.stacked("w1", j) @ bundle.stacked("d1", k)) for k in range(2)] for j in range(2)])
    assert np.allclose(t.k2[np.ix_(lay.omega, lay.omega)], D)

    original = CumulantEngine(frame, omega, parameterization=ORIGINAL).tensors()
    W = bundle.stacked("winv")
    assert np.allclose(original.k2[:3, :3], -frame.X.T @ W @ frame.X)


@pytest.mark.parametrize("parameterization", [ORTHOGONAL, ORIGINAL])
def test_cumulant_derivatives_match_finite_differences(parameterization):
    frame = make_frame(6, N=3, n=2, p=1, q=0, family=AR1, taus=(2, 3, 3))
    omega = np.array([0.3, 0.9])
    psi = np.array([0.6])
    t = CumulantEngine(frame, omega, psi, parameterization).tensors()
    d = t.dim
    # κ depends on ω, and in the orthogonal parameterization also on ψ
    movable = list(range(frame.n, d)) + ([0] if parameterization == ORTHOGONAL else [])
    for j in movable:
        up = shifted(frame, omega, psi, parameterization, j, H)
        down = shifted(frame, omega, psi, parameterization, j, -H)
        assert np.allclose(t.k2d[:, :, j], (up.k2 - down.k2) / (2 * H), rtol=1e-5, atol=1e-6)
        assert np.allclose(t.k3d[:, :, :, j], (up.k3 - down.k3) / (2 * H), rtol=1e-5, atol=1e-6)
        for l in movable:
            fd = (up.k2d[:, :, l] - down.k2d[:, :, l]) / (2 * H)
            assert np.allclose(t.k2dd[:, :, l, j], fd, rtol=1e-5, atol=1e-6)
    for j in range(d):
        if j not in movable:
            assert np.allclose(t.k2d[:, :, j], 0.0)


def test_regression_cumulants_have_closed_forms():
    frame = make_frame(12, N=4, n=2, p=1, q=0)
    s2, T = 0.8, frame.T
    t = CumulantEngine(frame, [s2], parameterization=ORIGINAL).tensors()
    v = frame.n
    assert t.k2[v, v] == pytest.approx(-T / (2 * s2**2))
    assert t.k3[v, v, v] == pytest.approx(2 * T / s2**3)
    assert t.k4[v, v, v, v] == pytest.approx(-9 * T / s2**4)
    assert np.allclose(t.k3[:v, :v, v], frame.X.T @ frame.X / s2**2)
    assert np.allclose(t.k3[:v, :v, :v], 0.0)


def test_restrict_selects_sub_tensors():
    frame = make_frame(2, N=3, n=2, p=1, q=1)
    t = CumulantEngine(frame, [0.5, 0.7]).tensors()
    sub = t.restrict(t.layout.nuisance)
    assert sub.dim == t.dim - 1
    assert np.array_equal(sub.k4, t.k4[1:, 1:, 1:, 1:])
    assert np.allclose(sub.inverse() @ sub.k2, np.eye(sub.dim))
