"""
Shared numerical helpers: SPD solves, chi-square tails and seeded Gaussian draws.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg, special

from .errors import NotPositiveDefinite

SeedLike = Union[int, np.random.Generator]


@dataclass(frozen=True)
class SymMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"SymMatrix needs a square array, got shape {a.shape}")
        object.__setattr__(self, "entries", 0.5 * (a + a.T))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ChiSqDist:
    df: int

    def __post_init__(self) -> None:
        if int(self.df) < 1:
            raise ValueError(f"chi-square degrees of freedom must be >= 1, got {self.df}")

    def sf(self, x: float) -> float:
        return chisq_sf(x, self.df)

    def cdf(self, x: float) -> float:
        return chisq_cdf(x, self.df)


def _as_array(a: Union[SymMatrix, np.ndarray]) -> np.ndarray:
    return a.entries if isinstance(a, SymMatrix) else np.asarray(a, dtype=float)


def chol_factor(a: Union[SymMatrix, np.ndarray]) -> Tuple[np.ndarray, bool]:
    """Cholesky factor in scipy's ``cho_factor`` form; raises NotPositiveDefinite."""
    arr = _as_array(a)
    if arr.size == 0:
        return arr.reshape(0, 0), True
    try:
        return linalg.cho_factor(arr, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}", dim=arr.shape[0]) from exc


def chol_solve(a: Union[SymMatrix, np.ndarray], b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    arr = _as_array(a)
    if arr.size == 0:
        return b.copy()
    return linalg.cho_solve(chol_factor(arr), b, check_finite=False)


def chol_logdet(factor: Tuple[np.ndarray, bool]) -> float:
    c = factor[0]
    if c.size == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def chol_inverse(a: Union[SymMatrix, np.ndarray]) -> np.ndarray:
    arr = _as_array(a)
    return chol_solve(arr, np.eye(arr.shape[0]))


def chisq_sf(x: float, df: int) -> float:
    if x < 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x}")
    if df < 1:
        raise ValueError(f"chi-square degrees of freedom must be >= 1, got {df}")
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def chisq_cdf(x: float, df: int) -> float:
    if x < 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x}")
    if df < 1:
        raise ValueError(f"chi-square degrees of freedom must be >= 1, got {df}")
    return float(special.gammainc(0.5 * df, 0.5 * x))


def rng_for_replication(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo replication."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.default_rng(seq)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def sample_mvn(mean: np.ndarray, cov_chol: np.ndarray, seed: SeedLike, size: Optional[int] = None) -> np.ndarray:
    """Draw N(mean, L Lᵀ) given the lower factor L.

    With ``size`` set the result has one draw per row.
    """
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(cov_chol, dtype=float)
    rng = _rng(seed)
    shape = (mean.shape[0],) if size is None else (size, mean.shape[0])
    z = rng.standard_normal(shape)
    return mean + z @ chol.T
