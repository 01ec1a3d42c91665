"""
Exact expected log-likelihood derivatives of the Gaussian mixed model.

For a multi-index R of parameters, κ_R(θ) = E_θ[∂_R ℓ(θ)] equals

    −½ ∂_R log|Σ| − ½ tr(Σ ∂_R Σ⁻¹) − ½ Σ (∂_A μ)ᵀ (∂_B Σ⁻¹) (∂_C μ)

where the last sum runs over splits of R into (A, B, C) with A and C nonempty.
Derivatives of κ_R in further parameters T distribute T over every factor,
including the Σ that carries the expectation. Σ⁻¹, log|Σ| and the mean are
differentiated to any order by recursion, so every tensor needed by the
Bartlett formulas is available without hand-written case lists.

Two parameterizations are supported: the orthogonal one (ψ, ξ, ω), in which the
mean is X̃_p′(ω)ψ + X̃ξ, and the original one (ψ, ς, ω) with mean X̃_pψ + X̃ς.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import CovarianceModel, build_sigma
from .data import ModelFrame
from .numutil import chol_solve

logger = logging.getLogger(__name__)

ORTHOGONAL = "orthogonal"
ORIGINAL = "original"


@dataclass(frozen=True)
class ParameterLayout:
    p: int
    n: int
    k: int

    @property
    def dim(self) -> int:
        return self.n + self.k

    @property
    def psi(self) -> np.ndarray:
        return np.arange(self.p)

    @property
    def xi(self) -> np.ndarray:
        return np.arange(self.p, self.n)

    @property
    def omega(self) -> np.ndarray:
        return np.arange(self.n, self.n + self.k)

    @property
    def nuisance(self) -> np.ndarray:
        return np.arange(self.p, self.dim)

    def is_omega(self, index: int) -> bool:
        return index >= self.n


@dataclass(frozen=True)
class CumulantTensors:
    """κ_rs, κ_rst, κ_rstu, (κ_rs)_t, (κ_rst)_u and (κ_rs)_tu over the full parameter vector."""

    layout: ParameterLayout
    parameterization: str
    k2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray
    k2d: np.ndarray
    k3d: np.ndarray
    k2dd: np.ndarray

    @property
    def dim(self) -> int:
        return self.k2.shape[0]

    def restrict(self, indices: Sequence[int]) -> "CumulantTensors":
        idx = np.asarray(indices, dtype=int)
        i2 = np.ix_(idx, idx)
        i3 = np.ix_(idx, idx, idx)
        i4 = np.ix_(idx, idx, idx, idx)
        return CumulantTensors(
            layout=self.layout,
            parameterization=self.parameterization,
            k2=self.k2[i2],
            k3=self.k3[i3],
            k4=self.k4[i4],
            k2d=self.k2d[i3],
            k3d=self.k3d[i4],
            k2dd=self.k2dd[i4],
        )

    def inverse(self) -> np.ndarray:
        """κ^{rs}: the inverse of the matrix of κ_rs."""
        return np.linalg.inv(self.k2)


def _subsets(positions: int):
    """Bitmasks over ``positions`` slots, with the slots they select."""
    for mask in range(1 << positions):
        yield mask, [i for i in range(positions) if mask >> i & 1], [i for i in range(positions) if not mask >> i & 1]


class CumulantEngine:
    """Memoized derivatives of Σ, Σ⁻¹, log|Σ| and μ for one model at one parameter value."""

    def __init__(
        self,
        frame: ModelFrame,
        omega: Sequence[float],
        psi: Optional[Sequence[float]] = None,
        parameterization: str = ORTHOGONAL,
    ):
        if parameterization not in (ORTHOGONAL, ORIGINAL):
            raise ValueError(f"unknown parameterization '{parameterization}'")
        self.frame = frame
        self.parameterization = parameterization
        self.model = CovarianceModel(frame.family, frame.q, np.asarray(omega, dtype=float))
        bundle = build_sigma(self.model, frame.groups, order=1)
        self.layout = ParameterLayout(frame.p, frame.n, self.model.n_params)
        self.psi = np.zeros(frame.p) if psi is None else np.asarray(psi, dtype=float).reshape(-1)
        self._splits = [g.split(frame.p) for g in frame.groups]
        self._sigma: Dict[Tuple[int, ...], Optional[List[np.ndarray]]] = {(): [b.sigma for b in bundle.blocks]}
        self._winv: Dict[Tuple[int, ...], Optional[List[np.ndarray]]] = {(): [b.winv for b in bundle.blocks]}
        self._logdet: Dict[Tuple[int, ...], float] = {(): bundle.logdet()}
        self._V: Dict[Tuple[int, ...], np.ndarray] = {}
        self._U: Dict[Tuple[int, ...], np.ndarray] = {}
        self._Pi: Dict[Tuple[int, ...], np.ndarray] = {}
        self._mean: Dict[Tuple[int, ...], Optional[List[np.ndarray]]] = {}
        self._expected: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float] = {}

    # covariance side, indices local to ω

    def sigma_d(self, S: Sequence[int]) -> Optional[List[np.ndarray]]:
        key = tuple(sorted(S))
        if key not in self._sigma:
            parts = [self.model.sigma_derivative(g.Z, key) for g in self.frame.groups]
            self._sigma[key] = None if all(p is None for p in parts) else [
                np.zeros((g.size, g.tau, g.tau)) if p is None else p for p, g in zip(parts, self.frame.groups)
            ]
        return self._sigma[key]

    def winv_d(self, S: Sequence[int]) -> Optional[List[np.ndarray]]:
        """∂_S Σ⁻¹ = −Σ_{S′ ⊊ S} ∂_{S′}Σ⁻¹ · ∂_{S∖S′}Σ · Σ⁻¹."""
        key = tuple(sorted(S))
        if key in self._winv:
            return self._winv[key]
        W = self._winv[()]
        total: Optional[List[np.ndarray]] = None
        for mask, inside, outside in _subsets(len(key)):
            if not outside:
                continue
            left = self.winv_d([key[i] for i in inside])
            middle = self.sigma_d([key[i] for i in outside])
            if left is None or middle is None:
                continue
            term = [-(l @ m @ w) for l, m, w in zip(left, middle, W)]
            total = term if total is None else [t + s for t, s in zip(total, term)]
        self._winv[key] = total
        return total

    def logdet_d(self, S: Sequence[int]) -> float:
        key = tuple(sorted(S))
        if key in self._logdet:
            return self._logdet[key]
        last, rest = key[-1], key[:-1]
        value = 0.0
        for mask, inside, outside in _subsets(len(rest)):
            left = self.winv_d([rest[i] for i in inside])
            right = self.sigma_d([rest[i] for i in outside] + [last])
            if left is None or right is None:
                continue
            value += sum(float(np.einsum("gab,gba->", l, r)) for l, r in zip(left, right))
        self._logdet[key] = value
        return value

    # mean side

    def _cross(self, S: Tuple[int, ...], which: str) -> np.ndarray:
        store = self._V if which == "V" else self._U
        if S not in store:
            r, p = self.frame.n - self.frame.p, self.frame.p
            out = np.zeros((r, r) if which == "V" else (r, p))
            W = self.winv_d(S)
            if W is not None:
                for w, (Xp, Xt) in zip(W, self._splits):
                    right = Xt if which == "V" else Xp
                    out += np.einsum("gta,gts,gsb->ab", Xt, w, right)
            store[S] = out
        return store[S]

    def pi_d(self, S: Sequence[int]) -> np.ndarray:
        """∂_S Π from V Π = U: ∂_S Π = V⁻¹(∂_S U − Σ_{∅≠S′⊆S} ∂_{S′}V ∂_{S∖S′}Π)."""
        key = tuple(sorted(S))
        if key in self._Pi:
            return self._Pi[key]
        rhs = self._cross(key, "U").copy()
        if rhs.size:
            for mask, inside, outside in _subsets(len(key)):
                if not inside:
                    continue
                rhs -= self._cross(tuple(sorted(key[i] for i in inside)), "V") @ self.pi_d([key[i] for i in outside])
            value = chol_solve(self._cross((), "V"), rhs)
        else:
            value = rhs
        self._Pi[key] = value
        return value

    def mean_d(self, R: Sequence[int]) -> Optional[List[np.ndarray]]:
        """∂_R μ per unit group, R global indices (nonempty)."""
        key = tuple(sorted(R))
        if key in self._mean:
            return self._mean[key]
        lay = self.layout
        psi_idx = [i for i in key if i < lay.p]
        mean_idx = [i for i in key if lay.p <= i < lay.n]
        omega_idx = tuple(i - lay.n for i in key if i >= lay.n)
        value: Optional[List[np.ndarray]] = None
        if len(psi_idx) + len(mean_idx) > 1:
            value = None
        elif self.parameterization == ORIGINAL:
            if len(key) == 1 and key[0] < lay.n:
                value = [g.X[:, :, key[0]] for g in self.frame.groups]
        elif mean_idx:
            if not omega_idx:
                f = mean_idx[0] - lay.p
                value = [Xt[:, :, f] for _, Xt in self._splits]
        elif psi_idx:
            a = psi_idx[0]
            if lay.p == lay.n:
                value = [Xp[:, :, a] for Xp, _ in self._splits] if not omega_idx else None
            elif omega_idx:
                col = self.pi_d(omega_idx)[:, a]
                value = [-(Xt @ col) for _, Xt in self._splits]
            else:
                col = self.pi_d(())[:, a]
                value = [Xp[:, :, a] - Xt @ col for Xp, Xt in self._splits]
        elif np.any(self.psi) and lay.p < lay.n:
            col = self.pi_d(omega_idx) @ self.psi
            value = [-(Xt @ col) for _, Xt in self._splits]
        self._mean[key] = value
        return value

    # expectations

    def expected(self, R: Sequence[int], T: Sequence[int] = ()) -> float:
        """∂_T κ_R, summed over units."""
        R, T = tuple(sorted(R)), tuple(sorted(T))
        key = (R, T)
        if key in self._expected:
            return self._expected[key]
        lay = self.layout
        value = 0.0
        if all(lay.is_omega(i) for i in R + T):
            local_R = [i - lay.n for i in R]
            local_T = [i - lay.n for i in T]
            value -= 0.5 * self.logdet_d(local_R + local_T)
            for mask, inside, outside in _subsets(len(local_T)):
                sig = self.sigma_d([local_T[i] for i in inside])
                win = self.winv_d(local_R + [local_T[i] for i in outside])
                if sig is None or win is None:
                    continue
                value -= 0.5 * sum(float(np.einsum("gab,gba->", s, w)) for s, w in zip(sig, win))
        for r_labels in itertools.product(range(3), repeat=len(R)):
            if 0 not in r_labels or 2 not in r_labels:
                continue
            for t_labels in itertools.product(range(3), repeat=len(T)):
                parts: Tuple[List[int], List[int], List[int]] = ([], [], [])
                for index, label in zip(R, r_labels):
                    parts[label].append(index)
                for index, label in zip(T, t_labels):
                    parts[label].append(index)
                if any(not lay.is_omega(i) for i in parts[1]):
                    continue
                left = self.mean_d(parts[0])
                if left is None:
                    continue
                right = self.mean_d(parts[2])
                if right is None:
                    continue
                middle = self.winv_d([i - lay.n for i in parts[1]])
                if middle is None:
                    continue
                value -= 0.5 * sum(float(np.einsum("gt,gts,gs->", a, w, c)) for a, w, c in zip(left, middle, right))
        self._expected[key] = value
        return value

    def tensors(self) -> CumulantTensors:
        d = self.layout.dim
        k2 = np.zeros((d, d))
        k3 = np.zeros((d, d, d))
        k4 = np.zeros((d, d, d, d))
        k2d = np.zeros((d, d, d))
        k3d = np.zeros((d, d, d, d))
        k2dd = np.zeros((d, d, d, d))
        indices = range(d)
        for rs in itertools.combinations_with_replacement(indices, 2):
            v = self.expected(rs)
            for perm in set(itertools.permutations(rs)):
                k2[perm] = v
            for t in indices:
                v = self.expected(rs, (t,))
                for perm in set(itertools.permutations(rs)):
                    k2d[perm + (t,)] = v
            for tu in itertools.combinations_with_replacement(indices, 2):
                v = self.expected(rs, tu)
                for perm in set(itertools.permutations(rs)):
                    for perm2 in set(itertools.permutations(tu)):
                        k2dd[perm + perm2] = v
        for rst in itertools.combinations_with_replacement(indices, 3):
            v = self.expected(rst)
            perms = set(itertools.permutations(rst))
            for perm in perms:
                k3[perm] = v
            for u in indices:
                v = self.expected(rst, (u,))
                for perm in perms:
                    k3d[perm + (u,)] = v
        for rstu in itertools.combinations_with_replacement(indices, 4):
            v = self.expected(rstu)
            for perm in set(itertools.permutations(rstu)):
                k4[perm] = v
        logger.debug("cumulant tensors of dimension %d (%s parameterization)", d, self.parameterization)
        return CumulantTensors(
            layout=self.layout,
            parameterization=self.parameterization,
            k2=k2,
            k3=k3,
            k4=k4,
            k2d=k2d,
            k3d=k3d,
            k2dd=k2dd,
        )


def cumulant_tensors(
    frame: ModelFrame,
    omega: Sequence[float],
    psi: Optional[Sequence[float]] = None,
    parameterization: str = ORTHOGONAL,
) -> CumulantTensors:
    return CumulantEngine(frame, omega, psi, parameterization).tensors()
