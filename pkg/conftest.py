"""
Shared pytest setup: the ``--runslow`` switch and small model instances.
"""
from typing import Optional, Sequence

import numpy as np
import pytest

from mlmtest.covariance import AR1, UNSTRUCTURED, CovarianceModel, build_sigma
from mlmtest.data import ModelFrame
from mlmtest.numutil import sample_mvn


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo tier, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def default_omega(family: str, q: int) -> np.ndarray:
    g = {0: [], 1: [0.5], 2: [0.5, 0.1, 0.3]}[q]
    tail = [0.4, 0.8] if family == AR1 else [0.7]
    return np.array(g + tail, dtype=float)


def make_frame(
    seed: int,
    N: int = 4,
    n: int = 2,
    p: int = 1,
    q: int = 1,
    family: str = UNSTRUCTURED,
    taus: Optional[Sequence[int]] = None,
    omega: Optional[Sequence[float]] = None,
    beta: Optional[Sequence[float]] = None,
) -> ModelFrame:
    """Random design with an intercept as first nuisance column and y drawn from the model."""
    rng = np.random.default_rng(seed)
    tau = np.asarray(taus if taus is not None else rng.integers(2, 4, size=N), dtype=int)
    T = int(tau.sum())
    X = rng.normal(size=(T, n))
    if n > p:
        X[:, p] = 1.0
    t = rng.uniform(size=T)
    Z = np.column_stack([np.ones(T), t])[:, :q]
    frame = ModelFrame(
        y=np.zeros(T),
        X=X,
        Z=Z,
        tau=tau,
        names=tuple(f"x{i}" for i in range(n)),
        p=p,
        family=family,
        random_names=("(Intercept)", "t")[:q],
    )
    omega = default_omega(family, q) if omega is None else np.asarray(omega, dtype=float)
    beta = np.full(n, 0.3) if beta is None else np.asarray(beta, dtype=float)
    bundle = build_sigma(CovarianceModel(family, q, omega), frame.groups, order=1)
    y = np.empty(T)
    for block, group in zip(bundle.blocks, frame.groups):
        for i in range(group.size):
            mean = group.X[i] @ beta
            y[group.rows[i]] = sample_mvn(mean, block.chol[i], rng)
    return frame.with_response(y)


@pytest.fixture
def regression_frame():
    return make_frame(11, N=6, n=3, p=2, q=0)


@pytest.fixture
def intercept_frame():
    return make_frame(5, N=4, n=2, p=1, q=1)


@pytest.fixture
def ar1_frame():
    return make_frame(7, N=4, n=2, p=1, q=0, family=AR1, taus=(3, 2, 3, 3))
