"""
The four likelihood-ratio-type tests of H₀: ψ = ψ⁽⁰⁾ and their report.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .corrections import BartlettConstants, bartlett_constants
from .covariance import CovarianceModel, build_sigma, derived_inverse_derivatives
from .data import ModelFrame
from .errors import MixedModelError
from .likelihood import FitResult, adjusted_profile, fit_adjusted, fit_ml, fit_restricted
from .numutil import chisq_sf

logger = logging.getLogger(__name__)

STATISTICS = ("LR", "LR_star", "LR_cr", "LR_cr_star")
NEGATIVE_TOLERANCE = 1e-6


@dataclass
class TestReport:
    __test__ = False

    df: int
    psi0: np.ndarray
    names: Sequence[str]
    LR: Optional[float] = None
    LR_star: Optional[float] = None
    LR_cr: Optional[float] = None
    LR_cr_star: Optional[float] = None
    C: Optional[float] = None
    C_star: Optional[float] = None
    pvalues: Dict[str, Optional[float]] = field(default_factory=dict)
    unavailable: Dict[str, str] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    constants: Optional[BartlettConstants] = None
    full: Optional[FitResult] = None
    restricted: Optional[FitResult] = None
    adjusted: Optional[FitResult] = None
    adjusted_null: Optional[float] = None

    def statistic(self, name: str) -> Optional[float]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        estimates = {}
        if self.full is not None:
            estimates["ml"] = self.full.to_dict()
        if self.restricted is not None:
            estimates["restricted"] = self.restricted.to_dict()
        if self.adjusted is not None:
            estimates["adjusted"] = self.adjusted.to_dict()
        return {
            "df": int(self.df),
            "interest": list(self.names),
            "psi0": [float(v) for v in self.psi0],
            "statistics": {name: _float_or_none(self.statistic(name)) for name in STATISTICS},
            "pvalues": {name: _float_or_none(self.pvalues.get(name)) for name in STATISTICS},
            "C": _float_or_none(self.C),
            "C_star": _float_or_none(self.C_star),
            "corrections": None if self.constants is None else self.constants.to_dict(),
            "unavailable": dict(self.unavailable),
            "flags": list(self.flags),
            "estimates": estimates,
        }


def _float_or_none(value: Optional[float]) -> Optional[float]:
    return None if value is None else float(value)


def _clamp(name: str, value: float, report: TestReport) -> float:
    if value >= 0:
        return value
    if value < -NEGATIVE_TOLERANCE:
        report.flags.append(f"{name} was negative ({value:.3g}) and set to 0")
    return 0.0


def run_tests(frame: ModelFrame, psi0: Optional[Sequence[float]] = None, full: Optional[FitResult] = None) -> TestReport:
    """LR, LR*, LR_CR and LR*_CR with p-values from χ²_p.

    C and C* are evaluated at the null-restricted estimate of ω, which is also
    where the adjusted profile at ψ⁽⁰⁾ is maximized.
    """
    p = frame.p
    psi = np.zeros(p) if psi0 is None else np.asarray(psi0, dtype=float).reshape(-1)
    if psi.shape[0] != p:
        raise ValueError(f"psi0 has {psi.shape[0]} entries, interest block has {p}")
    report = TestReport(df=p, psi0=psi, names=frame.names[:p])

    full = full if full is not None else fit_ml(frame)
    restricted = fit_restricted(frame, psi, init=full.omega_hat)
    report.full, report.restricted = full, restricted
    for fit in (full, restricted):
        if not fit.converged:
            report.flags.append(f"{fit.objective} fit did not converge: {fit.message}")
        if fit.boundary:
            report.flags.append(f"{fit.objective} fit is on the boundary of the variance parameter space")
    report.LR = _clamp("LR", 2.0 * (full.loglik - restricted.loglik), report)

    try:
        model = CovarianceModel(frame.family, frame.q, restricted.omega_hat)
        bundle = derived_inverse_derivatives(build_sigma(model, frame.groups, order=2))
        constants = bartlett_constants(frame, restricted.omega_hat, psi, bundle=bundle)
        report.constants, report.C, report.C_star = constants, constants.C, constants.C_star
    except MixedModelError as exc:
        logger.warning("Bartlett constants unavailable: %s", exc)
        report.unavailable["LR_star"] = report.unavailable["LR_cr_star"] = f"Bartlett constants: {exc}"
        constants = None

    if constants is not None:
        if constants.scale > 0:
            report.LR_star = report.LR / constants.scale
        else:
            report.unavailable["LR_star"] = f"1 + C/p = {constants.scale:.4g} is not positive"

    try:
        null_point = adjusted_profile(frame, psi, init=restricted.omega_hat)
        adjusted = fit_adjusted(frame, start=full)
        report.adjusted, report.adjusted_null = adjusted, null_point.value
        if adjusted.converged:
            report.LR_cr = _clamp("LR_cr", 2.0 * (adjusted.loglik - null_point.value), report)
        else:
            report.unavailable["LR_cr"] = f"adjusted profile maximization did not converge: {adjusted.message}"
    except MixedModelError as exc:
        logger.warning("adjusted profile test unavailable: %s", exc)
        report.unavailable["LR_cr"] = f"adjusted profile: {exc}"

    if report.LR_cr is None:
        report.unavailable.setdefault("LR_cr_star", "LR_cr unavailable")
    elif constants is not None:
        if constants.scale_star > 0:
            report.LR_cr_star = report.LR_cr / constants.scale_star
        else:
            report.unavailable["LR_cr_star"] = f"1 + C*/p = {constants.scale_star:.4g} is not positive"

    for name in STATISTICS:
        value = report.statistic(name)
        report.pvalues[name] = None if value is None else chisq_sf(value, p)
    logger.debug("tests of %s: %s", report.names, {n: report.statistic(n) for n in STATISTICS})
    return report
