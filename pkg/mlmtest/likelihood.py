"""
Gaussian log-likelihood of the mixed linear model, orthogonal reparameterization
of the nuisance fixed effects, and full / restricted / Cox–Reid adjusted fits.

Fixed effects are profiled out by generalized least squares; the variance
parameters are optimized on an unconstrained scale (log-Cholesky for G, log for
variances, tanh for the AR(1) correlation).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .covariance import AR1, CovarianceModel, SigmaBundle, build_sigma, derived_inverse_derivatives, g_from_params, g_pairs, g_to_params
from .data import ModelFrame
from .errors import (
    InfeasibleOmega,
    MixedModelError,
    NonConvergence,
    NotPositiveDefinite,
    RankDeficientDesign,
    SingularObservedInformation,
)
from .numutil import chol_solve

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

GRADIENT_TOLERANCE = 1e-6
RELATIVE_TOLERANCE = 1e-10
MAX_ITERATIONS = 500
BOUNDARY_TOLERANCE = 1e-8
CONDITION_LIMIT = 1e12
ADJUSTED_TOLERANCE = 1e-8
NEWTON_STEPS = 20
LOG_SCALE_LIMIT = 30.0
OFFDIAGONAL_LIMIT = math.exp(LOG_SCALE_LIMIT)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    omega_hat: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    names: Tuple[str, ...] = ()
    omega_names: Tuple[str, ...] = ()
    objective: str = "full"
    boundary: bool = False
    psi0: Optional[np.ndarray] = None
    xi_hat: Optional[np.ndarray] = None
    profile_loglik: Optional[float] = None
    method: str = "BFGS"
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "coefficients": {name: float(v) for name, v in zip(self.names, self.beta_hat)},
            "omega": {name: float(v) for name, v in zip(self.omega_names, self.omega_hat)},
            "loglik": float(self.loglik),
            "profile_loglik": None if self.profile_loglik is None else float(self.profile_loglik),
            "converged": bool(self.converged),
            "boundary": bool(self.boundary),
            "iterations": int(self.iterations),
            "gradient_norm": float(self.gradient_norm),
            "method": self.method,
            "message": self.message,
        }


def _bounded_exp(value: float) -> float:
    return math.exp(min(max(float(value), -LOG_SCALE_LIMIT), LOG_SCALE_LIMIT))


class OmegaTransform:
    """Bijection between unconstrained η and feasible ω for one covariance family."""

    def __init__(self, family: str, q: int):
        self.family = family
        self.q = q
        self.n_g = q * (q + 1) // 2
        self.k = self.n_g + (2 if family == AR1 else 1)

    def _cholesky(self, eta_g: np.ndarray) -> np.ndarray:
        L = np.zeros((self.q, self.q))
        for value, (a, b) in zip(eta_g, g_pairs(self.q)):
            L[a, b] = _bounded_exp(value) if a == b else float(np.clip(value, -OFFDIAGONAL_LIMIT, OFFDIAGONAL_LIMIT))
        return L

    def to_omega(self, eta: np.ndarray) -> np.ndarray:
        L = self._cholesky(eta[: self.n_g])
        omega = np.empty(self.k)
        omega[: self.n_g] = g_to_params(L @ L.T) if self.q else []
        if self.family == AR1:
            omega[self.n_g] = math.tanh(eta[self.n_g])
        omega[-1] = _bounded_exp(eta[-1])
        return omega

    def from_omega(self, omega: np.ndarray) -> np.ndarray:
        eta = np.empty(self.k)
        if self.q:
            G = g_from_params(omega[: self.n_g], self.q)
            vals, vecs = np.linalg.eigh(G)
            floor = 1e-6 * max(1.0, float(np.max(np.abs(vals))))
            G = (vecs * np.maximum(vals, floor)) @ vecs.T
            L = np.linalg.cholesky(G)
            for i, (a, b) in enumerate(g_pairs(self.q)):
                eta[i] = math.log(L[a, b]) if a == b else L[a, b]
        if self.family == AR1:
            eta[self.n_g] = math.atanh(float(np.clip(omega[self.n_g], -0.999, 0.999)))
        eta[-1] = math.log(max(float(omega[-1]), 1e-12))
        return eta

    def jacobian(self, eta: np.ndarray) -> np.ndarray:
        """dω/dη, one column per η component."""
        J = np.zeros((self.k, self.k))
        if self.q:
            L = self._cholesky(eta[: self.n_g])
            for i, (r, c) in enumerate(g_pairs(self.q)):
                dL = np.zeros_like(L)
                dL[r, c] = L[r, c] if r == c else 1.0
                J[: self.n_g, i] = g_to_params(dL @ L.T + L @ dL.T)
        if self.family == AR1:
            J[self.n_g, self.n_g] = 1.0 - math.tanh(eta[self.n_g]) ** 2
        J[-1, -1] = _bounded_exp(eta[-1])
        return J


def _group_arrays(frame: ModelFrame, y: np.ndarray, columns: slice) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    ys = [y[g.rows] for g in frame.groups]
    xs = [g.X[:, :, columns] for g in frame.groups]
    return ys, xs


@dataclass
class _ProfilePoint:
    """GLS-profiled log-likelihood at one ω, with gradient and optional Hessian in ω."""

    omega: np.ndarray
    bundle: SigmaBundle
    beta: np.ndarray
    loglik: float
    gradient: np.ndarray
    residuals: List[np.ndarray] = field(repr=False)
    information: np.ndarray = field(repr=False)


def _normal_equations(bundle: SigmaBundle, ys: List[np.ndarray], xs: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    r = xs[0].shape[2]
    A = np.zeros((r, r))
    b = np.zeros(r)
    for block, X, y in zip(bundle.blocks, xs, ys):
        WX = np.einsum("gts,gsa->gta", block.winv, X)
        A += np.einsum("gta,gtb->ab", X, WX)
        b += np.einsum("gta,gt->a", WX, y)
    return A, b


def check_condition(A: np.ndarray, names: Sequence[str] = ()) -> None:
    if A.size == 0:
        return
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise RankDeficientDesign("design is rank deficient in the Σ⁻¹ inner product", columns=list(names), condition=float(cond))


def _profile_point(
    frame: ModelFrame,
    model: CovarianceModel,
    ys: List[np.ndarray],
    xs: List[np.ndarray],
    names: Sequence[str] = (),
    hessian: bool = False,
) -> _ProfilePoint:
    bundle = build_sigma(model, frame.groups, order=2 if hessian else 1)
    A, b = _normal_equations(bundle, ys, xs)
    check_condition(A, names)
    beta = chol_solve(A, b) if A.size else np.zeros(0)
    k = model.n_params
    loglik = -0.5 * frame.T * LOG_2PI
    gradient = np.zeros(k)
    residuals = []
    us = []
    for block, X, y in zip(bundle.blocks, xs, ys):
        e = y - X @ beta
        u = np.einsum("gts,gs->gt", block.winv, e)
        residuals.append(e)
        us.append(u)
        loglik -= 0.5 * (block.logdet.sum() + np.einsum("gt,gt->", e, u))
        gradient += -0.5 * np.einsum("gts,jgst->j", block.winv, block.d1)
        gradient += 0.5 * np.einsum("gt,jgts,gs->j", u, block.d1, u)
    information = np.zeros((0, 0))
    if hessian:
        information = _profile_information(bundle, xs, us, A)
    return _ProfilePoint(
        omega=model.omega,
        bundle=bundle,
        beta=beta,
        loglik=float(loglik),
        gradient=gradient,
        residuals=residuals,
        information=information,
    )


def _profile_information(bundle: SigmaBundle, xs: List[np.ndarray], us: List[np.ndarray], A: np.ndarray) -> np.ndarray:
    """Minus the Hessian in ω of the GLS-profiled log-likelihood."""
    k = bundle.k
    hess = np.zeros((k, k))
    cross = np.zeros((A.shape[0], k))
    for block, X, u in zip(bundle.blocks, xs, us):
        WS = np.einsum("gab,jgbc->jgac", block.winv, block.d1)
        hess += 0.5 * np.einsum("kgab,jgba->jk", WS, WS)
        hess -= 0.5 * np.einsum("gab,jkgba->jk", block.winv, block.d2)
        Su = np.einsum("jgts,gs->jgt", block.d1, u)
        WSu = np.einsum("gts,jgs->jgt", block.winv, Su)
        hess -= np.einsum("jgt,kgt->jk", Su, WSu)
        hess += 0.5 * np.einsum("gt,jkgts,gs->jk", u, block.d2, u)
        cross -= np.einsum("gta,jgt->aj", np.einsum("gts,gsa->gta", block.winv, X), Su)
    if A.size:
        hess += cross.T @ chol_solve(A, cross)
    return -hess


def _fit_omega(
    frame: ModelFrame,
    ys: List[np.ndarray],
    xs: List[np.ndarray],
    init: Optional[np.ndarray],
    names: Sequence[str],
) -> Tuple[_ProfilePoint, bool, int, float, str, str]:
    transform = OmegaTransform(frame.family, frame.q)
    template = CovarianceModel(frame.family, frame.q, np.ones(transform.k) if init is None else init)
    if init is None:
        init = _default_init(frame, ys, xs, transform)
    eta0 = transform.from_omega(np.asarray(init, dtype=float))

    def objective(eta: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            point = _profile_point(frame, template.with_omega(transform.to_omega(eta)), ys, xs, names)
        except (InfeasibleOmega, NotPositiveDefinite, OverflowError, FloatingPointError):
            return np.inf, np.zeros_like(eta)
        return -point.loglik, -transform.jacobian(eta).T @ point.gradient

    method = "BFGS"
    result = None
    try:
        result = optimize.minimize(
            objective, eta0, jac=True, method="BFGS", options={"gtol": GRADIENT_TOLERANCE, "maxiter": MAX_ITERATIONS}
        )
    except (ValueError, ArithmeticError) as exc:
        logger.warning("quasi-Newton search failed (%s); falling back to Nelder-Mead", exc)
    if result is None or not np.isfinite(result.fun):
        method = "Nelder-Mead"
        if result is not None:
            logger.warning("quasi-Newton search ended at a non-finite value; falling back to Nelder-Mead")
        result = optimize.minimize(
            lambda eta: objective(eta)[0],
            eta0,
            method="Nelder-Mead",
            options={"maxiter": MAX_ITERATIONS * transform.k, "xatol": 1e-8, "fatol": RELATIVE_TOLERANCE},
        )
    if not np.isfinite(result.fun):
        raise NonConvergence("no feasible variance parameters found", best=None)

    eta = np.asarray(result.x, dtype=float)
    point = _profile_point(frame, template.with_omega(transform.to_omega(eta)), ys, xs, names, hessian=True)
    point = _newton_polish(frame, template, ys, xs, names, point)
    eta = transform.from_omega(point.omega)
    grad_eta = transform.jacobian(eta).T @ point.gradient
    gradient_norm = float(np.max(np.abs(grad_eta))) if grad_eta.size else 0.0
    converged = gradient_norm < GRADIENT_TOLERANCE
    iterations = int(getattr(result, "nit", 0))
    return point, converged, iterations, gradient_norm, method, str(result.message)


def _newton_polish(
    frame: ModelFrame,
    template: CovarianceModel,
    ys: List[np.ndarray],
    xs: List[np.ndarray],
    names: Sequence[str],
    point: _ProfilePoint,
) -> _ProfilePoint:
    """Newton steps in ω from an interior optimum until the score vanishes."""
    for _ in range(NEWTON_STEPS):
        if np.max(np.abs(point.gradient)) < 1e-3 * GRADIENT_TOLERANCE:
            break
        if template.q and template.with_omega(point.omega).g_determinant() < BOUNDARY_TOLERANCE:
            break
        try:
            step = chol_solve(point.information, point.gradient)
        except NotPositiveDefinite:
            break
        improved = False
        scale = 1.0
        for _ in range(30):
            trial_omega = point.omega + scale * step
            try:
                trial = _profile_point(frame, template.with_omega(trial_omega), ys, xs, names, hessian=True)
            except (InfeasibleOmega, NotPositiveDefinite):
                scale *= 0.5
                continue
            if trial.loglik >= point.loglik - 1e-12 * abs(point.loglik):
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
        change = abs(trial.loglik - point.loglik) / max(1.0, abs(point.loglik))
        point = trial
        if change < RELATIVE_TOLERANCE and np.max(np.abs(point.gradient)) < GRADIENT_TOLERANCE:
            break
    return point


def _default_init(frame: ModelFrame, ys: List[np.ndarray], xs: List[np.ndarray], transform: OmegaTransform) -> np.ndarray:
    y = np.concatenate([v.reshape(-1) for v in ys])
    X = np.concatenate([x.reshape(-1, x.shape[2]) for x in xs])
    if X.shape[1]:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
    else:
        resid = y
    s2 = max(float(resid @ resid) / max(len(y), 1), 1e-8)
    omega = np.zeros(transform.k)
    if transform.q:
        omega[: transform.n_g] = g_to_params(0.25 * s2 * np.eye(transform.q))
    if transform.family == AR1:
        omega[transform.n_g] = 0.1
    omega[-1] = 0.5 * s2 if transform.q else s2
    return omega


def is_boundary(frame: ModelFrame, omega: np.ndarray) -> bool:
    model = CovarianceModel(frame.family, frame.q, omega)
    if frame.q and model.g_determinant() < BOUNDARY_TOLERANCE:
        return True
    return frame.family == AR1 and abs(model.rho) > 1 - 1e-6


def omega_names(frame: ModelFrame) -> Tuple[str, ...]:
    k = OmegaTransform(frame.family, frame.q).k
    return CovarianceModel(frame.family, frame.q, np.ones(k)).names


def loglik(frame: ModelFrame, beta: np.ndarray, omega: np.ndarray) -> float:
    """ℓ(β, ω) = −(T/2)log 2π − ½log|Σ| − ½(Y − Xβ)ᵀΣ⁻¹(Y − Xβ), summed per unit."""
    model = CovarianceModel(frame.family, frame.q, omega)
    bundle = build_sigma(model, frame.groups, order=1)
    e = frame.y - frame.X @ np.asarray(beta, dtype=float)
    value = -0.5 * frame.T * LOG_2PI - 0.5 * bundle.logdet()
    for block, group in zip(bundle.blocks, frame.groups):
        eg = e[group.rows]
        value -= 0.5 * np.einsum("gt,gts,gs->", eg, block.winv, eg)
    return float(value)


def fit_ml(frame: ModelFrame, init: Optional[np.ndarray] = None, strict: bool = False) -> FitResult:
    ys, xs = _group_arrays(frame, frame.y, slice(None))
    point, converged, iterations, gnorm, method, message = _fit_omega(frame, ys, xs, init, frame.names)
    result = FitResult(
        beta_hat=point.beta,
        omega_hat=point.omega,
        loglik=point.loglik,
        converged=converged,
        iterations=iterations,
        gradient_norm=gnorm,
        names=frame.names,
        omega_names=omega_names(frame),
        objective="full",
        boundary=is_boundary(frame, point.omega),
        method=method,
        message=message,
    )
    return _finish(result, strict)


def fit_restricted(
    frame: ModelFrame, psi0: Sequence[float], init: Optional[np.ndarray] = None, strict: bool = False
) -> FitResult:
    """Maximize ℓ over φ = (ξ, ω) with ψ fixed at ``psi0``."""
    psi0 = np.asarray(psi0, dtype=float).reshape(-1)
    if psi0.shape[0] != frame.p:
        raise ValueError(f"psi0 has length {psi0.shape[0]}, interest block has {frame.p}")
    y_eff = frame.y - frame.X[:, : frame.p] @ psi0
    ys, xs = _group_arrays(frame, y_eff, slice(frame.p, None))
    point, converged, iterations, gnorm, method, message = _fit_omega(frame, ys, xs, init, frame.names[frame.p :])
    varsigma = point.beta
    xi = varsigma + projection_coefficients(point.bundle, frame) @ psi0 if varsigma.size else varsigma
    result = FitResult(
        beta_hat=np.concatenate([psi0, varsigma]),
        omega_hat=point.omega,
        loglik=point.loglik,
        converged=converged,
        iterations=iterations,
        gradient_norm=gnorm,
        names=frame.names,
        omega_names=omega_names(frame),
        objective="restricted",
        boundary=is_boundary(frame, point.omega),
        psi0=psi0,
        xi_hat=xi,
        profile_loglik=point.loglik,
        method=method,
        message=message,
    )
    return _finish(result, strict)


def _finish(result: FitResult, strict: bool) -> FitResult:
    if result.boundary:
        logger.warning("%s fit is near the boundary of the variance parameter space", result.objective)
    if not result.converged:
        logger.warning("%s fit did not converge (gradient norm %.3g)", result.objective, result.gradient_norm)
        if strict:
            raise NonConvergence(f"{result.objective} fit did not converge", best=result)
    logger.debug("%s fit: loglik=%.10g after %d iterations", result.objective, result.loglik, result.iterations)
    return result


def projection_coefficients(bundle: SigmaBundle, frame: ModelFrame) -> np.ndarray:
    """Π = (X̃ᵀΣ⁻¹X̃)⁻¹X̃ᵀΣ⁻¹X̃_p, so that ξ = ς + Πψ."""
    p, n = frame.p, frame.n
    if p == n:
        return np.zeros((0, p))
    V = np.zeros((n - p, n - p))
    U = np.zeros((n - p, p))
    for block, group in zip(bundle.blocks, frame.groups):
        Xp, Xt = group.split(p)
        WXt = np.einsum("gts,gsa->gta", block.winv, Xt)
        V += np.einsum("gta,gtb->ab", WXt, Xt)
        U += np.einsum("gta,gtb->ab", WXt, Xp)
    check_condition(V, frame.names[p:])
    return chol_solve(V, U)


@dataclass(frozen=True)
class OrthogonalizedDesign:
    """X̃_p′ = X̃_p − X̃Π and its ω-derivatives, stacked per unit group."""

    omega: np.ndarray
    Pi: np.ndarray
    V: np.ndarray
    H: np.ndarray
    dPi: np.ndarray
    ddPi: np.ndarray
    Xp_prime: Tuple[np.ndarray, ...]
    Xdot_prime: Tuple[np.ndarray, ...]
    Xddot_prime: Tuple[np.ndarray, ...]
    rows: Tuple[np.ndarray, ...]

    def stacked(self, attr: str = "Xp_prime", *index: int) -> np.ndarray:
        """T×p matrix in original row order."""
        parts = getattr(self, attr)
        T = sum(r.size for r in self.rows)
        out = np.zeros((T, self.Pi.shape[1]))
        for values, rows in zip(parts, self.rows):
            for i in index:
                values = values[i]
            out[rows.reshape(-1)] = values.reshape(-1, values.shape[-1])
        return out


def orthogonalize(frame: ModelFrame, bundle: SigmaBundle) -> OrthogonalizedDesign:
    if not bundle.has_inverse_derivatives:
        bundle = derived_inverse_derivatives(bundle)
    p, n, k = frame.p, frame.n, bundle.k
    r = n - p
    splits = [g.split(p) for g in frame.groups]
    V = np.zeros((r, r))
    U = np.zeros((r, p))
    for block, (Xp, Xt) in zip(bundle.blocks, splits):
        WXt = np.einsum("gts,gsa->gta", block.winv, Xt)
        V += np.einsum("gta,gtb->ab", WXt, Xt)
        U += np.einsum("gta,gtb->ab", WXt, Xp)
    check_condition(V, frame.names[p:])
    Pi = chol_solve(V, U) if r else np.zeros((0, p))
    Xprime = [Xp - Xt @ Pi for Xp, Xt in splits]

    N1 = np.zeros((k, r, r))
    E1 = np.zeros((k, r, p))
    E2 = np.zeros((k, k, r, p))
    H = np.zeros((p, p))
    for block, (_, Xt), Xq in zip(bundle.blocks, splits, Xprime):
        N1 += np.einsum("gta,jgts,gsb->jab", Xt, block.w1, Xt)
        E1 += np.einsum("gta,jgts,gsb->jab", Xt, block.w1, Xq)
        E2 += np.einsum("gta,jkgts,gsb->jkab", Xt, block.w2, Xq)
        H += np.einsum("gta,gts,gsb->ab", Xq, block.winv, Xq)
    dPi = np.stack([chol_solve(V, E1[j]) for j in range(k)]) if r else np.zeros((k, 0, p))
    ddPi = np.zeros((k, k, r, p))
    if r:
        for j in range(k):
            for l in range(k):
                ddPi[j, l] = chol_solve(V, E2[j, l] - N1[j] @ dPi[l] - N1[l] @ dPi[j])
    Xdot = tuple(-np.einsum("gta,jab->jgtb", Xt, dPi) for _, Xt in splits)
    Xddot = tuple(-np.einsum("gta,jkab->jkgtb", Xt, ddPi) for _, Xt in splits)
    return OrthogonalizedDesign(
        omega=bundle.model.omega,
        Pi=Pi,
        V=V,
        H=H,
        dPi=dPi,
        ddPi=ddPi,
        Xp_prime=tuple(Xprime),
        Xdot_prime=Xdot,
        Xddot_prime=Xddot,
        rows=tuple(g.rows for g in frame.groups),
    )


@dataclass
class OrthogonalPoint:
    """Everything needed to differentiate ℓ(ψ, ξ, ω) at one parameter value."""

    psi: np.ndarray
    xi: np.ndarray
    bundle: SigmaBundle
    orth: OrthogonalizedDesign
    z: List[np.ndarray]


def orthogonal_point(
    frame: ModelFrame,
    psi: Sequence[float],
    xi: Sequence[float],
    omega: Sequence[float],
    bundle: Optional[SigmaBundle] = None,
) -> OrthogonalPoint:
    psi = np.asarray(psi, dtype=float).reshape(-1)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if bundle is None:
        model = CovarianceModel(frame.family, frame.q, np.asarray(omega, dtype=float))
        bundle = derived_inverse_derivatives(build_sigma(model, frame.groups, order=2))
    orth = orthogonalize(frame, bundle)
    z = []
    for group, Xq in zip(frame.groups, orth.Xp_prime):
        _, Xt = group.split(frame.p)
        z.append(frame.y[group.rows] - Xq @ psi - Xt @ xi)
    return OrthogonalPoint(psi=psi, xi=xi, bundle=bundle, orth=orth, z=z)


def loglik_orthogonal(frame: ModelFrame, psi: Sequence[float], xi: Sequence[float], omega: Sequence[float]) -> float:
    """ℓ(ψ, ξ, ω) with z = Y − X̃_p′ψ − X̃ξ."""
    point = orthogonal_point(frame, psi, xi, omega)
    value = -0.5 * frame.T * LOG_2PI - 0.5 * point.bundle.logdet()
    for block, z in zip(point.bundle.blocks, point.z):
        value -= 0.5 * np.einsum("gt,gts,gs->", z, block.winv, z)
    return float(value)


def score_orthogonal(frame: ModelFrame, psi: Sequence[float], xi: Sequence[float], omega: Sequence[float]) -> np.ndarray:
    """(∂ℓ/∂ψ, ∂ℓ/∂ξ, ∂ℓ/∂ω) stacked into one vector."""
    point = orthogonal_point(frame, psi, xi, omega)
    p, k = frame.p, point.bundle.k
    s_psi = np.zeros(p)
    s_xi = np.zeros(frame.n - p)
    s_omega = np.zeros(k)
    for block, group, Xq, Xd, z in zip(point.bundle.blocks, frame.groups, point.orth.Xp_prime, point.orth.Xdot_prime, point.z):
        _, Xt = group.split(p)
        u = np.einsum("gts,gs->gt", block.winv, z)
        s_psi += np.einsum("gta,gt->a", Xq, u)
        s_xi += np.einsum("gta,gt->a", Xt, u)
        s_omega += -0.5 * np.einsum("gts,jgst->j", block.winv, block.d1)
        s_omega += -0.5 * np.einsum("gt,jgts,gs->j", z, block.w1, z)
        s_omega += np.einsum("gt,jgta,a->j", u, Xd, point.psi)
    return np.concatenate([s_psi, s_xi, s_omega])


def observed_phi_hessian(point: OrthogonalPoint, frame: ModelFrame) -> np.ndarray:
    """ℓ_φφ, the observed second derivatives of ℓ in φ = (ξ, ω) at fixed ψ."""
    p = frame.p
    r = frame.n - p
    k = point.bundle.k
    psi = point.psi
    xi_xi = -point.orth.V
    xi_om = np.zeros((r, k))
    om_om = np.zeros((k, k))
    for block, group, Xq, Xd, Xdd, z in zip(
        point.bundle.blocks,
        frame.groups,
        point.orth.Xp_prime,
        point.orth.Xdot_prime,
        point.orth.Xddot_prime,
        point.z,
    ):
        _, Xt = group.split(p)
        W = block.winv
        xd = np.einsum("jgta,a->jgt", Xd, psi)
        xdd = np.einsum("jkgta,a->jkgt", Xdd, psi)
        xi_om += np.einsum("gta,jgts,gs->aj", Xt, block.w1, z + Xq @ psi)
        om_om += -0.5 * np.einsum("kgab,jgba->jk", block.w1, block.d1)
        if block.d2 is not None:
            om_om += -0.5 * np.einsum("gab,jkgba->jk", W, block.d2)
        om_om += -np.einsum("kgt,gts,jgs->jk", xd, W, xd)
        om_om += np.einsum("jkgt,gts,gs->jk", xdd, W, z)
        om_om += np.einsum("kgt,jgts,gs->jk", xd, block.w1, z)
        om_om += np.einsum("jgt,kgts,gs->jk", xd, block.w1, z)
        om_om += -0.5 * np.einsum("gt,jkgts,gs->jk", z, block.w2, z)
    return np.block([[xi_xi, xi_om], [xi_om.T, om_om]])


@dataclass
class AdjustedPoint:
    value: float
    logdet: float
    fit: FitResult


def adjusted_profile(frame: ModelFrame, psi: Sequence[float], init: Optional[np.ndarray] = None) -> AdjustedPoint:
    """ℓ_pa(ψ) = ℓ_p(ψ) − ½ log|−ℓ_φφ(φ̂(ψ))| together with the restricted fit."""
    fit = fit_restricted(frame, psi, init=init)
    point = orthogonal_point(frame, fit.psi0, fit.xi_hat, fit.omega_hat)
    sign, logdet = np.linalg.slogdet(-observed_phi_hessian(point, frame))
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularObservedInformation("observed information in the nuisance parameters is not positive definite", psi=list(map(float, fit.psi0)))
    return AdjustedPoint(value=float(fit.loglik - 0.5 * logdet), logdet=float(logdet), fit=fit)


def adjusted_profile_loglik(frame: ModelFrame, psi: Sequence[float], init: Optional[np.ndarray] = None) -> float:
    return adjusted_profile(frame, psi, init).value


def _interest_scale(frame: ModelFrame, omega: np.ndarray) -> np.ndarray:
    model = CovarianceModel(frame.family, frame.q, omega)
    bundle = build_sigma(model, frame.groups, order=1)
    ys, xs = _group_arrays(frame, frame.y, slice(None))
    A, _ = _normal_equations(bundle, ys, xs)
    cov = np.linalg.inv(A)
    return np.sqrt(np.maximum(np.diag(cov)[: frame.p], 1e-12))


def fit_adjusted(frame: ModelFrame, start: Optional[FitResult] = None, strict: bool = False) -> FitResult:
    """Maximize ℓ_pa over ψ by a simplex search wrapped around restricted fits."""
    full = start if start is not None else fit_ml(frame)
    p = frame.p
    psi_start = np.asarray(full.beta_hat[:p], dtype=float)
    step = _interest_scale(frame, full.omega_hat)
    simplex = np.vstack([psi_start] + [psi_start + step[i] * np.eye(p)[i] for i in range(p)])
    warm = {"omega": np.asarray(full.omega_hat, dtype=float)}
    failures = []

    def objective(psi: np.ndarray) -> float:
        try:
            point = adjusted_profile(frame, psi, init=warm["omega"])
        except MixedModelError as exc:
            failures.append(str(exc))
            return np.inf
        warm["omega"] = point.fit.omega_hat
        return -point.value

    result = optimize.minimize(
        objective,
        psi_start,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": 1e-7,
            "fatol": ADJUSTED_TOLERANCE,
            "maxiter": MAX_ITERATIONS * p,
            "maxfev": 2 * MAX_ITERATIONS * p,
        },
    )
    if not np.isfinite(result.fun):
        raise NonConvergence("adjusted profile likelihood could not be evaluated", best=None)
    best = adjusted_profile(frame, result.x, init=warm["omega"])
    fit = best.fit
    adjusted = FitResult(
        beta_hat=fit.beta_hat,
        omega_hat=fit.omega_hat,
        loglik=best.value,
        converged=bool(result.success) and fit.converged,
        iterations=int(result.nit),
        gradient_norm=fit.gradient_norm,
        names=frame.names,
        omega_names=fit.omega_names,
        objective="adjusted",
        boundary=fit.boundary,
        xi_hat=fit.xi_hat,
        profile_loglik=fit.loglik,
        method="Nelder-Mead",
        message=str(result.message) + (f"; {len(failures)} inner failures" if failures else ""),
    )
    return _finish(adjusted, strict)
