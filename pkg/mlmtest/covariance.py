"""
Covariance families Σ(ω) of a mixed linear model and their ω-derivatives.

Σ_i = Z_i G Z_iᵀ + R_i with G unstructured (lower triangle, row-major, in ω)
and R_i either σ²I ("unstructured-G") or φρ^|j−k| ("ar1-errors"). The variance
of the errors is always the last component of ω.

All algebra is per unit; units of equal size are stacked along a leading axis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import UnitGroup
from .errors import InfeasibleOmega

logger = logging.getLogger(__name__)

UNSTRUCTURED = "unstructured-G"
AR1 = "ar1-errors"

PSD_TOLERANCE = 1e-12


def g_size(q: int) -> int:
    return q * (q + 1) // 2


def q_from_g_size(k: int) -> int:
    q = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if g_size(q) != k:
        raise ValueError(f"{k} is not a triangular number of G parameters")
    return q


def g_pairs(q: int) -> List[Tuple[int, int]]:
    return [(a, b) for a in range(q) for b in range(a + 1)]


def g_from_params(params: np.ndarray, q: int) -> np.ndarray:
    G = np.zeros((q, q))
    for value, (a, b) in zip(params, g_pairs(q)):
        G[a, b] = G[b, a] = value
    return G


def g_to_params(G: np.ndarray) -> np.ndarray:
    return np.array([G[a, b] for a, b in g_pairs(G.shape[0])])


def lag_matrix(tau: int) -> np.ndarray:
    idx = np.arange(tau)
    return np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True)
class CovarianceModel:
    family: str
    q: int
    omega: np.ndarray

    def __post_init__(self) -> None:
        if self.family not in (UNSTRUCTURED, AR1):
            raise ValueError(f"unknown covariance family '{self.family}'")
        omega = np.array(self.omega, dtype=float).reshape(-1)
        if omega.shape[0] != self.n_params:
            raise ValueError(f"{self.family} with q={self.q} needs {self.n_params} parameters, got {omega.shape[0]}")
        object.__setattr__(self, "omega", omega)

    @property
    def n_g(self) -> int:
        return g_size(self.q)

    @property
    def n_params(self) -> int:
        return self.n_g + (2 if self.family == AR1 else 1)

    @property
    def m(self) -> int:
        return self.n_params - 1

    @property
    def is_linear(self) -> bool:
        return self.family == UNSTRUCTURED

    @property
    def names(self) -> Tuple[str, ...]:
        g_names = [f"G[{a},{b}]" for a, b in g_pairs(self.q)]
        tail = ["rho", "phi"] if self.family == AR1 else ["sigma2"]
        return tuple(g_names + tail)

    @property
    def G(self) -> np.ndarray:
        return g_from_params(self.omega[: self.n_g], self.q)

    @property
    def error_variance(self) -> float:
        return float(self.omega[-1])

    @property
    def rho(self) -> float:
        if self.family != AR1:
            return 0.0
        return float(self.omega[self.n_g])

    def with_omega(self, omega: Sequence[float]) -> "CovarianceModel":
        return replace(self, omega=np.asarray(omega, dtype=float))

    def check_feasible(self) -> None:
        if not np.all(np.isfinite(self.omega)):
            raise InfeasibleOmega("non-finite variance parameters", self.omega)
        if self.error_variance <= 0:
            raise InfeasibleOmega("error variance must be positive", self.omega)
        if self.family == AR1 and not abs(self.rho) < 1:
            raise InfeasibleOmega("AR(1) correlation must satisfy |rho| < 1", self.omega)
        if self.q:
            G = self.G
            scale = max(1.0, float(np.max(np.abs(np.diag(G)))))
            if np.min(np.linalg.eigvalsh(G)) < -PSD_TOLERANCE * scale:
                raise InfeasibleOmega("random-effects covariance G is not positive semidefinite", self.omega)

    def g_determinant(self) -> float:
        return float(np.linalg.det(self.G)) if self.q else 1.0

    def sigma_derivative(self, Z: np.ndarray, idx: Sequence[int]) -> Optional[np.ndarray]:
        """∂^|idx| Σ / ∂ω_idx for stacked units ``Z`` of shape (g, τ, q).

        Returns None when the derivative is identically zero.
        """
        g, tau = Z.shape[0], Z.shape[1]
        idx = tuple(idx)
        g_idx = [i for i in idx if i < self.n_g]
        if g_idx:
            if len(idx) > 1:
                return None
            a, b = g_pairs(self.q)[g_idx[0]]
            out = Z[:, :, a, None] * Z[:, None, :, b]
            if a != b:
                out = out + Z[:, :, b, None] * Z[:, None, :, a]
            return out
        error = self._error_derivative(tau, idx)
        if idx:
            return None if error is None else np.broadcast_to(error, (g, tau, tau)).copy()
        random_part = np.einsum("gja,ab,gkb->gjk", Z, self.G, Z) if self.q else np.zeros((g, tau, tau))
        return random_part + error

    def _error_derivative(self, tau: int, idx: Tuple[int, ...]) -> Optional[np.ndarray]:
        if self.family == UNSTRUCTURED:
            count = idx.count(self.n_g)
            if count == 0:
                return self.error_variance * np.eye(tau)
            return np.eye(tau) if count == 1 else None
        k_rho = idx.count(self.n_g)
        k_phi = idx.count(self.n_g + 1)
        if k_phi > 1:
            return None
        lags = lag_matrix(tau)
        falling = np.ones_like(lags, dtype=float)
        for i in range(k_rho):
            falling = falling * (lags - i)
        power = np.where(lags >= k_rho, self.rho ** np.maximum(lags - k_rho, 0), 0.0)
        block = falling * power
        if k_phi == 0:
            block = self.error_variance * block
        if k_rho >= tau and not np.any(block):
            return None
        return block


def unstructured_family(g: Sequence[float], sigma2: float) -> CovarianceModel:
    g = list(g)
    return CovarianceModel(UNSTRUCTURED, q_from_g_size(len(g)), np.array(g + [sigma2], dtype=float))


def ar1_family(rho: float, phi: float, g: Sequence[float] = ()) -> CovarianceModel:
    """Random effects plus AR(1) errors with ω = (G parameters, ρ, φ)."""
    g = list(g)
    model = CovarianceModel(AR1, q_from_g_size(len(g)), np.array(g + [rho, phi], dtype=float))
    model.check_feasible()
    return model


def covariance_model(family: str, q: int, omega: Sequence[float]) -> CovarianceModel:
    return CovarianceModel(family, q, np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class SigmaBlock:
    """Σ and its derivatives for a stack of equal-size units."""

    tau: int
    units: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    winv: np.ndarray
    logdet: np.ndarray
    d1: np.ndarray
    d2: Optional[np.ndarray] = None
    w1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SigmaBundle:
    model: CovarianceModel
    blocks: Tuple[SigmaBlock, ...]

    @property
    def k(self) -> int:
        return self.model.n_params

    @property
    def is_linear(self) -> bool:
        return self.model.is_linear

    @property
    def has_inverse_derivatives(self) -> bool:
        return all(b.w1 is not None for b in self.blocks)

    def logdet(self) -> float:
        return float(sum(b.logdet.sum() for b in self.blocks))

    def unit_block(self, unit: int, attr: str = "sigma", *index: int) -> np.ndarray:
        for block in self.blocks:
            pos = np.flatnonzero(block.units == unit)
            if pos.size:
                values = getattr(block, attr)
                for i in index:
                    values = values[i]
                return values[pos[0]]
        raise IndexError(f"unit {unit} not in bundle")

    def stacked(self, attr: str = "sigma", *index: int) -> np.ndarray:
        """Block-diagonal T×T assembly in unit order."""
        n_units = sum(b.units.shape[0] for b in self.blocks)
        parts = [self.unit_block(i, attr, *index) for i in range(n_units)]
        size = sum(p.shape[0] for p in parts)
        out = np.zeros((size, size))
        start = 0
        for part in parts:
            stop = start + part.shape[0]
            out[start:stop, start:stop] = part
            start = stop
        return out


def _dense_derivative(model: CovarianceModel, Z: np.ndarray, idx: Tuple[int, ...]) -> np.ndarray:
    d = model.sigma_derivative(Z, idx)
    if d is None:
        return np.zeros((Z.shape[0], Z.shape[1], Z.shape[1]))
    return d


def build_sigma(model: CovarianceModel, groups: Sequence[UnitGroup], order: int = 2) -> SigmaBundle:
    """Σ_i = Z_i G Z_iᵀ + R_i with analytic derivatives up to ``order`` (1 or 2)."""
    model.check_feasible()
    k = model.n_params
    blocks = []
    for group in groups:
        Z = group.Z
        sigma = _dense_derivative(model, Z, ())
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleOmega(f"unit covariance of size {group.tau} is not positive definite", model.omega) from exc
        eye = np.broadcast_to(np.eye(group.tau), sigma.shape)
        half = np.linalg.solve(chol, eye)
        winv = np.einsum("gkj,gkl->gjl", half, half)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        d1 = np.stack([_dense_derivative(model, Z, (j,)) for j in range(k)])
        d2 = None
        if order >= 2:
            d2 = np.zeros((k, k) + sigma.shape)
            if not model.is_linear:
                for j in range(k):
                    for l in range(j, k):
                        d2[j, l] = d2[l, j] = _dense_derivative(model, Z, (j, l))
        blocks.append(
            SigmaBlock(
                tau=group.tau,
                units=group.units,
                sigma=sigma,
                chol=chol,
                winv=winv,
                logdet=logdet,
                d1=d1,
                d2=d2,
            )
        )
    return SigmaBundle(model=model, blocks=tuple(blocks))


def derived_inverse_derivatives(bundle: SigmaBundle) -> SigmaBundle:
    """Attach Σ̇ʲ = −Σ⁻¹Σ̇_jΣ⁻¹ and the symmetric second derivative Σ̈ʲᵏ of Σ⁻¹.

    Σ̈ʲᵏ = Σ⁻¹Σ̇_kΣ⁻¹Σ̇_jΣ⁻¹ + Σ⁻¹Σ̇_jΣ⁻¹Σ̇_kΣ⁻¹ − Σ⁻¹Σ̈_jkΣ⁻¹, whose symmetric
    part equals −2Σ̇ᵏΣ̇_jΣ⁻¹ − Σ⁻¹Σ̈_jkΣ⁻¹.
    """
    blocks = []
    for block in bundle.blocks:
        if block.d2 is None:
            raise ValueError("bundle was built without second derivatives")
        W = block.winv
        wd = np.einsum("gab,jgbc->jgac", W, block.d1)
        w1 = -np.einsum("jgab,gbc->jgac", wd, W)
        cross = np.einsum("kgab,jgbc->jkgac", wd, wd)
        w2 = np.einsum("jkgab,gbc->jkgac", cross + cross.swapaxes(0, 1), W)
        w2 = w2 - np.einsum("gab,jkgbc,gcd->jkgad", W, block.d2, W)
        blocks.append(replace(block, w1=w1, w2=w2))
    return replace(bundle, blocks=tuple(blocks))
