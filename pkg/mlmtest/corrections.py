"""
Bartlett correction constants C (for LR) and C* (for the Cox–Reid adjusted LR).

Two evaluation paths:

* ``trace``: closed-form trace expressions, valid when the null value of the
  interest parameter is ψ⁽⁰⁾ = 0.
* ``general``: exact contraction of Lawley's (C) and DiCiccio–Stern's (C*) sums
  over the cumulant tensors of the orthogonal parameterization, valid at any ψ⁽⁰⁾.

``lawley_oracle`` and ``diciccio_stern_oracle`` evaluate the same sums with
explicit index loops and are meant for small instances only.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .covariance import CovarianceModel, SigmaBundle, build_sigma, derived_inverse_derivatives
from .cumulants import ORTHOGONAL, CumulantEngine, CumulantTensors
from .data import ModelFrame
from .errors import InstanceTooLarge, NotPositiveDefinite, SingularInformation
from .likelihood import OrthogonalizedDesign, orthogonalize
from .numutil import chol_inverse

logger = logging.getLogger(__name__)

TRACE = "trace"
GENERAL = "general"
AUTO = "auto"
ORACLE_LIMIT = 6
MATRIX_GAP_TOLERANCE = 1e-10


@dataclass
class CorrectionIngredients:
    """Matrices and vectors entering C and C*, with the expected-Hessian blocks.

    Per-ω families are stacked along the leading axis: ``A[j]`` is A⁽ʲ⁾, ``B[j]``
    is B⁽ʲ⁾ and ``G[f]`` is G⁽ᶠ⁾.
    """

    psi0: np.ndarray
    omega: np.ndarray
    D: np.ndarray
    M: np.ndarray
    P: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    gamma_star: np.ndarray
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    rho: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    rho_star: np.ndarray
    delta_star: np.ndarray
    eta_star: np.ndarray
    K_psipsi: np.ndarray
    K_xixi: np.ndarray
    K_xiomega: np.ndarray
    K_omegaomega: np.ndarray
    Kinv_psipsi: np.ndarray
    Kinv_xixi: np.ndarray
    Kinv_xiomega: np.ndarray
    Kinv_omegaomega: np.ndarray
    tensors: Optional[CumulantTensors] = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.psi0.shape[0]

    @property
    def at_zero(self) -> bool:
        return not np.any(self.psi0)

    @property
    def D_inverse(self) -> np.ndarray:
        return -chol_inverse(-self.D)


@dataclass(frozen=True)
class BartlettConstants:
    C: float
    C_star: float
    p: int
    omega: np.ndarray
    psi0: np.ndarray
    path: str
    matrix_C: Optional[float] = None
    matrix_C_star: Optional[float] = None

    @property
    def matrix_gap(self) -> Optional[float]:
        """Largest distance between the matrix forms and the constants in use."""
        if self.matrix_C is None or self.matrix_C_star is None:
            return None
        return max(abs(self.matrix_C - self.C), abs(self.matrix_C_star - self.C_star))

    @property
    def scale(self) -> float:
        return 1.0 + self.C / self.p

    @property
    def scale_star(self) -> float:
        return 1.0 + self.C_star / self.p

    def to_dict(self) -> dict:
        return {
            "C": float(self.C),
            "C_star": float(self.C_star),
            "p": int(self.p),
            "omega": [float(v) for v in self.omega],
            "psi0": [float(v) for v in self.psi0],
            "path": self.path,
            "matrix_C": None if self.matrix_C is None else float(self.matrix_C),
            "matrix_C_star": None if self.matrix_C_star is None else float(self.matrix_C_star),
            "matrix_gap": None if self.matrix_gap is None else float(self.matrix_gap),
        }


def _negative_definite_inverse(K: np.ndarray, what: str) -> np.ndarray:
    if K.size == 0:
        return K.copy()
    try:
        return -chol_inverse(-K)
    except NotPositiveDefinite as exc:
        raise SingularInformation(f"{what} is not invertible as an information block", block=what) from exc


def ingredients(
    orth: OrthogonalizedDesign,
    bundle: SigmaBundle,
    frame: ModelFrame,
    psi0: Optional[Sequence[float]] = None,
    tensors: Optional[CumulantTensors] = None,
) -> CorrectionIngredients:
    if not bundle.has_inverse_derivatives:
        bundle = derived_inverse_derivatives(bundle)
    p, r, k = frame.p, frame.n - frame.p, bundle.k
    psi = np.zeros(p) if psi0 is None else np.asarray(psi0, dtype=float).reshape(-1)
    if psi.shape[0] != p:
        raise ValueError(f"psi0 has {psi.shape[0]} entries, interest block has {p}")

    D = np.zeros((k, k))
    R = np.zeros((k, p, p))
    M_inner = np.zeros((k, k, p, p))
    N = np.zeros((k, r, r))
    tr_w1_d2 = np.zeros((k, k, k))
    cross = np.zeros((k, k, k))
    quad = np.zeros((k, k))
    K_xo = np.zeros((r, k))
    B_second = np.zeros((k, r, k))
    B_first = np.zeros((k, r, k))
    for block, group, Xq, Xd in zip(bundle.blocks, frame.groups, orth.Xp_prime, orth.Xdot_prime):
        _, Xt = group.split(p)
        W, w1, w2, d1 = block.winv, block.w1, block.w2, block.d1
        D += 0.5 * np.einsum("jgab,kgba->jk", w1, d1)
        R += np.einsum("gta,jgts,gsb->jab", Xq, w1, Xq)
        M_inner += np.einsum("gta,jkgts,gsb->jkab", Xq, w2, Xq)
        M_inner += 2.0 * np.einsum("kgta,jgts,gsb->jkab", Xd, w1, Xq)
        N += np.einsum("gta,jgts,gsb->jab", Xt, w1, Xt)
        if block.d2 is not None:
            tr_w1_d2 += np.einsum("lgab,jkgba->jkl", w1, block.d2)
        cross += np.einsum("kgab,jgbc,gcd,lgda->kjl", w1, d1, W, d1)
        xd = np.einsum("jgta,a->jgt", Xd, psi)
        x_psi = Xq @ psi
        quad += np.einsum("jgt,gts,kgs->jk", xd, W, xd)
        K_xo += np.einsum("gtf,jgts,gs->fj", Xt, w1, x_psi)
        B_second += np.einsum("gtf,jkgts,gs->jfk", Xt, w2, x_psi)
        B_first += np.einsum("gtf,jgts,kgs->jfk", Xt, w1, xd)

    H_inv = chol_inverse(orth.H)
    V_inv = chol_inverse(orth.V) if r else np.zeros((0, 0))
    M = np.einsum("ab,jkba->jk", H_inv, M_inner)
    P = np.einsum("ab,jbc,cd,kda->jk", H_inv, R, H_inv, R)
    tau = np.einsum("ab,jba->j", H_inv, R)
    nu = np.einsum("ab,jba->j", V_inv, N)

    # A[j, k, l] is A⁽ʲ⁾_kl; tr_w1_d2[a, b, c] = tr(Σ̇ᶜ Σ̈_ab)
    A = 0.5 * (tr_w1_d2 - tr_w1_d2.transpose(0, 2, 1) - tr_w1_d2.transpose(2, 1, 0))
    Cj = -cross.transpose(1, 0, 2) + 0.5 * (tr_w1_d2.transpose(2, 0, 1) + tr_w1_d2.transpose(1, 2, 0))
    B = 0.5 * B_second + 2.0 * B_first
    F = B_second + B_first
    G = -N.transpose(2, 1, 0)

    D_inv = _negative_definite_inverse(D, "D")
    gamma = np.einsum("kl,jlk->j", D_inv, A)
    gamma_star = np.einsum("kl,jlk->j", D_inv, Cj)

    K_oo = D - quad
    schur = K_oo + K_xo.T @ V_inv @ K_xo
    Kinv_oo = _negative_definite_inverse(schur, "K_omegaomega")
    Kinv_xo = V_inv @ K_xo @ Kinv_oo
    Kinv_xx = -V_inv + V_inv @ K_xo @ Kinv_oo @ K_xo.T @ V_inv

    rho = np.einsum("kl,jlk->j", Kinv_oo, A)
    delta = np.einsum("fk,jfk->j", Kinv_xo, B)
    eta = -np.einsum("fg,jgf->j", Kinv_xx, N)
    rho_star = np.einsum("kl,jlk->j", Kinv_oo, Cj)
    delta_star = np.einsum("fk,jfk->j", Kinv_xo, F)
    eta_star = np.einsum("gj,fgj->f", Kinv_xo, G)

    if tensors is None and np.any(psi):
        tensors = CumulantEngine(frame, bundle.model.omega, psi, ORTHOGONAL).tensors()

    return CorrectionIngredients(
        psi0=psi,
        omega=np.array(bundle.model.omega, dtype=float),
        D=D,
        M=M,
        P=P,
        tau=tau,
        gamma=gamma,
        nu=nu,
        gamma_star=gamma_star,
        A=A,
        C=Cj,
        B=B,
        F=F,
        G=G,
        rho=rho,
        delta=delta,
        eta=eta,
        rho_star=rho_star,
        delta_star=delta_star,
        eta_star=eta_star,
        K_psipsi=-orth.H,
        K_xixi=-orth.V,
        K_xiomega=K_xo,
        K_omegaomega=K_oo,
        Kinv_psipsi=-H_inv,
        Kinv_xixi=Kinv_xx,
        Kinv_xiomega=Kinv_xo,
        Kinv_omegaomega=Kinv_oo,
        tensors=tensors,
    )


# closed forms at ψ⁽⁰⁾ = 0


def trace_C(ing: CorrectionIngredients) -> float:
    inner = -0.5 * ing.M + 0.5 * ing.P - 0.25 * np.outer(ing.tau, ing.tau) - 0.5 * np.outer(ing.gamma + ing.nu, ing.tau)
    return float(np.trace(ing.D_inverse @ inner))


def trace_Cstar(ing: CorrectionIngredients) -> float:
    inner = -ing.M + 0.5 * ing.P - 0.25 * np.outer(ing.tau, ing.tau) + np.outer(ing.gamma_star, ing.tau)
    return float(np.trace(ing.D_inverse @ inner))


def linear_trace_C(ing: CorrectionIngredients) -> float:
    """C for covariance families linear in ω, where every Σ̈_jk vanishes."""
    inner = -0.5 * ing.M + 0.5 * ing.P - 0.25 * np.outer(ing.tau, ing.tau) - 0.5 * np.outer(ing.nu, ing.tau)
    return float(np.trace(ing.D_inverse @ inner))


# matrix forms at any ψ⁽⁰⁾


def matrix_C(ing: CorrectionIngredients) -> float:
    """tr(K^ωω{−½M + ½P − ¼ττᵀ − (½ρ − δ + ½η)τᵀ}); equals ``trace_C`` at ψ⁽⁰⁾ = 0.

    Away from zero it leaves out ψ-dependent cumulant terms that ``lawley_C``
    keeps, so the two differ by a small amount there.
    """
    drift = 0.5 * ing.rho - ing.delta + 0.5 * ing.eta
    inner = -0.5 * ing.M + 0.5 * ing.P - 0.25 * np.outer(ing.tau, ing.tau) - np.outer(drift, ing.tau)
    return float(np.trace(ing.Kinv_omegaomega @ inner))


def matrix_Cstar(ing: CorrectionIngredients) -> float:
    """tr(K^ωω{−M + ½P − ¼ττᵀ + (ρ* + 2δ*)τᵀ}) + τᵀK^ωξη*; equals ``trace_Cstar`` at ψ⁽⁰⁾ = 0."""
    inner = -ing.M + 0.5 * ing.P - 0.25 * np.outer(ing.tau, ing.tau) + np.outer(ing.rho_star + 2.0 * ing.delta_star, ing.tau)
    return float(np.trace(ing.Kinv_omegaomega @ inner) + ing.tau @ ing.Kinv_xiomega.T @ ing.eta_star)


# tensor contractions


def lawley_epsilon(t: CumulantTensors, Kinv: Optional[np.ndarray] = None) -> float:
    """Σ(l_rstu − l_rstuvw) over every index of ``t``."""
    K = t.inverse() if Kinv is None else Kinv
    four = 0.25 * t.k4 - t.k3d + t.k2dd.transpose(0, 2, 1, 3)
    l4 = np.einsum("rs,tu,rstu->", K, K, four, optimize=True)
    e = lambda spec, a, b: np.einsum("rs,tu,vw," + spec, K, K, K, a, b, optimize=True)  # noqa: E731
    l6 = (
        e("rtv,suw->", t.k3, t.k3) / 6.0
        - e("rtv,swu->", t.k3, t.k2d)
        + e("rtu,svw->", t.k3, t.k3) / 4.0
        - e("rtu,swv->", t.k3, t.k2d)
        + e("rtv,swu->", t.k2d, t.k2d)
        + e("rtu,swv->", t.k2d, t.k2d)
    )
    return float(l4 - l6)


def lawley_C(t: CumulantTensors) -> float:
    nuisance = t.layout.nuisance
    whole = lawley_epsilon(t)
    if nuisance.size == 0:
        return whole
    return whole - lawley_epsilon(t.restrict(nuisance))


def _ds_matrices(t: CumulantTensors):
    K = t.inverse()
    psi = t.layout.psi
    sigma = np.linalg.inv(K[np.ix_(psi, psi)])
    Tm = K[:, psi] @ sigma @ K[psi, :]
    return K, Tm, K - Tm


def diciccio_stern_C(t: CumulantTensors) -> float:
    K, Tm, N = _ds_matrices(t)
    e = lambda spec, *ops: float(np.einsum(spec, *ops, optimize=True))  # noqa: E731
    a = "ru,st,vw,rst,uvw->"
    b = "ru,sw,tv,rst,uvw->"
    total = 0.25 * e("ru,st,rstu->", Tm, Tm, t.k4)
    total -= e("ru,st,rstu->", K, Tm, t.k3d)
    total += e("ru,st,rstu->", K, K, t.k2dd) - e("ru,st,rstu->", N, N, t.k2dd)
    total -= 0.25 * e(a, K, Tm, Tm, t.k3, t.k3) + 0.5 * e(b, K, Tm, Tm, t.k3, t.k3) - e(b, Tm, Tm, Tm, t.k3, t.k3) / 3.0
    total += e(a, K, Tm, K, t.k3, t.k2d) + e(b, K, K, K, t.k3, t.k2d) - e(b, N, K, N, t.k3, t.k2d)
    total -= e(a, K, K, K, t.k2d, t.k2d) - e(a, N, N, N, t.k2d, t.k2d)
    total -= e(b, K, K, K, t.k2d, t.k2d) - e(b, N, N, N, t.k2d, t.k2d)
    return total


# explicit summation oracles


def _guard(t: CumulantTensors) -> None:
    if t.dim > ORACLE_LIMIT:
        raise InstanceTooLarge("index-summation oracle needs a small parameter vector", size=t.dim, limit=ORACLE_LIMIT)


def _lawley_loops(t: CumulantTensors, K: np.ndarray) -> float:
    d = K.shape[0]
    total = 0.0
    for r, s, u, v in itertools.product(range(d), repeat=4):
        total += K[r, s] * K[u, v] * (0.25 * t.k4[r, s, u, v] - t.k3d[r, s, u, v] + t.k2dd[r, u, s, v])
    for r, s, a, b, v, w in itertools.product(range(d), repeat=6):
        weight = K[r, s] * K[a, b] * K[v, w]
        if weight == 0.0:
            continue
        total -= weight * (
            t.k3[r, a, v] * (t.k3[s, b, w] / 6.0 - t.k2d[s, w, b])
            + t.k3[r, a, b] * (t.k3[s, v, w] / 4.0 - t.k2d[s, w, v])
            + t.k2d[r, a, v] * t.k2d[s, w, b]
            + t.k2d[r, a, b] * t.k2d[s, w, v]
        )
    return total


def lawley_oracle(tensors: CumulantTensors, p: Optional[int] = None) -> float:
    """C by explicit summation over all index combinations of Lawley's formula.

    The first ``p`` indices are the interest parameters; any parameterization works.
    """
    _guard(tensors)
    p = tensors.layout.p if p is None else p
    whole = _lawley_loops(tensors, tensors.inverse())
    if p == tensors.dim:
        return whole
    nuisance = tensors.restrict(np.arange(p, tensors.dim))
    return whole - _lawley_loops(nuisance, nuisance.inverse())


def diciccio_stern_oracle(tensors: CumulantTensors, p: Optional[int] = None) -> float:
    """C* by explicit summation of the DiCiccio–Stern expression in the orthogonal parameterization."""
    _guard(tensors)
    p = tensors.layout.p if p is None else p
    K = tensors.inverse()
    sigma = np.linalg.inv(K[:p, :p])
    Tm = K[:, :p] @ sigma @ K[:p, :]
    N = K - Tm
    k2d, k3, k3d, k4, k2dd = tensors.k2d, tensors.k3, tensors.k3d, tensors.k4, tensors.k2dd
    d = K.shape[0]
    total = 0.0
    for r, s, t, u in itertools.product(range(d), repeat=4):
        total += 0.25 * Tm[r, u] * Tm[s, t] * k4[r, s, t, u]
        total -= K[r, u] * Tm[s, t] * k3d[r, s, t, u]
        total += (K[r, u] * K[s, t] - N[r, u] * N[s, t]) * k2dd[r, s, t, u]
    for r, s, t, u, v, w in itertools.product(range(d), repeat=6):
        a33 = k3[r, s, t] * k3[u, v, w]
        a32 = k3[r, s, t] * k2d[u, v, w]
        a22 = k2d[r, s, t] * k2d[u, v, w]
        total -= (0.25 * K[r, u] * Tm[s, t] * Tm[v, w] + 0.5 * K[r, u] * Tm[s, w] * Tm[t, v] - Tm[r, u] * Tm[s, w] * Tm[t, v] / 3.0) * a33
        total += (K[r, u] * Tm[s, t] * K[v, w] + K[r, u] * K[s, w] * K[t, v] - N[r, u] * K[s, w] * N[t, v]) * a32
        total -= (K[r, u] * K[s, t] * K[v, w] - N[r, u] * N[s, t] * N[v, w]) * a22
        total -= (K[r, u] * K[s, w] * K[t, v] - N[r, u] * N[s, w] * N[t, v]) * a22
    return total


# public entry points


def _resolve_path(ing: CorrectionIngredients, path: str) -> str:
    if path == AUTO:
        return TRACE if ing.at_zero else GENERAL
    if path not in (TRACE, GENERAL):
        raise ValueError(f"unknown correction path '{path}'")
    if path == TRACE and not ing.at_zero:
        raise ValueError("the trace formulas hold only at psi0 = 0")
    return path


def _general_tensors(ing: CorrectionIngredients) -> CumulantTensors:
    if ing.tensors is None:
        raise ValueError("general path needs cumulant tensors; pass tensors to ingredients()")
    return ing.tensors


def bartlett_C(ing: CorrectionIngredients, path: str = AUTO) -> float:
    if _resolve_path(ing, path) == TRACE:
        return trace_C(ing)
    return lawley_C(_general_tensors(ing))


def bartlett_Cstar(ing: CorrectionIngredients, path: str = AUTO) -> float:
    if _resolve_path(ing, path) == TRACE:
        return trace_Cstar(ing)
    return diciccio_stern_C(_general_tensors(ing))


def bartlett_constants(
    frame: ModelFrame,
    omega: Sequence[float],
    psi0: Optional[Sequence[float]] = None,
    bundle: Optional[SigmaBundle] = None,
    path: str = AUTO,
) -> BartlettConstants:
    """C and C* at (ψ⁽⁰⁾, ω), sharing ``bundle`` with the caller when given."""
    if bundle is None:
        model = CovarianceModel(frame.family, frame.q, np.asarray(omega, dtype=float))
        bundle = build_sigma(model, frame.groups, order=2)
    if not bundle.has_inverse_derivatives:
        bundle = derived_inverse_derivatives(bundle)
    psi = np.zeros(frame.p) if psi0 is None else np.asarray(psi0, dtype=float).reshape(-1)
    tensors = None
    if path == GENERAL:
        tensors = CumulantEngine(frame, bundle.model.omega, psi, ORTHOGONAL).tensors()
    ing = ingredients(orthogonalize(frame, bundle), bundle, frame, psi, tensors=tensors)
    resolved = _resolve_path(ing, path)
    constants = BartlettConstants(
        C=bartlett_C(ing, resolved),
        C_star=bartlett_Cstar(ing, resolved),
        p=frame.p,
        omega=np.array(bundle.model.omega, dtype=float),
        psi0=psi,
        path=resolved,
        matrix_C=matrix_C(ing),
        matrix_C_star=matrix_Cstar(ing),
    )
    if constants.matrix_gap > MATRIX_GAP_TOLERANCE * max(1.0, abs(constants.C), abs(constants.C_star)):
        logger.info(
            "matrix forms differ from the %s constants by %.3g at psi0=%s", resolved, constants.matrix_gap, psi.tolist()
        )
    if constants.scale <= 0 or constants.scale_star <= 0:
        logger.warning("Bartlett scale factors not positive: 1+C/p=%.4g, 1+C*/p=%.4g", constants.scale, constants.scale_star)
    return constants
