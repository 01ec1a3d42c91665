"""
Monte Carlo size study of the four tests on a random intercept and slope design.

    y_ij = β₀ + β₁t_ij + β₂x₂ᵢ + β₃x₃ᵢ + b₀ᵢ + b₁ᵢt_ij + ε_ij

with (b₀ᵢ, b₁ᵢ) ~ N₂(0, G), G = [[ω₁, ω₂], [ω₂, ω₃]], ε_ij ~ N(0, ω₄), t_ij ~ U(0, 1),
τ_i cycling through 2..9 by unit index and x₂, x₃ coding three equal groups of
units. The tested hypothesis is H₀: (β₂, β₃) = 0.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .corrections import bartlett_constants
from .covariance import UNSTRUCTURED, CovarianceModel
from .data import INTERCEPT, ColumnMap, LongitudinalDataset, ModelFrame, ModelSpec, build_frame
from .errors import ConfigError, MixedModelError
from .numutil import rng_for_replication, sample_mvn
from .testing import STATISTICS, run_tests

logger = logging.getLogger(__name__)

TAU_CYCLE = tuple(range(2, 10))
FAILURE_LIMIT = 0.02
DEFAULT_PROBABILITIES = tuple(np.round(np.arange(1, 100) / 100.0, 2))

DESIGN_COLUMNS = ColumnMap(unit="unit", response="y", time="t", covariates=("x2", "x3"))
DESIGN_SPEC = ModelSpec(
    fixed=(INTERCEPT, "t", "x2", "x3"),
    interest=("x2", "x3"),
    random=(INTERCEPT, "t"),
    family=UNSTRUCTURED,
)

# (N, ω₂, ω₃) -> {α: (LR, LR*, LR_CR, LR*_CR)} in percent
PUBLISHED_RATES: Dict[Tuple[int, float, float], Dict[float, Tuple[float, float, float, float]]] = {
    (12, 0.0, 0.5): {0.05: (13.0, 7.6, 4.5, 5.3), 0.10: (20.8, 13.1, 9.2, 10.2)},
    (12, 0.0, 1.0): {0.05: (13.4, 7.8, 4.8, 5.9), 0.10: (21.7, 13.5, 9.6, 10.8)},
    (12, 0.25, 0.5): {0.05: (11.2, 6.0, 3.4, 4.1), 0.10: (19.0, 11.2, 7.5, 8.5)},
    (12, 0.25, 1.0): {0.05: (13.8, 7.9, 5.1, 5.8), 0.10: (21.9, 13.9, 9.6, 10.7)},
    (24, 0.0, 0.5): {0.05: (8.3, 5.6, 4.7, 5.0), 0.10: (14.6, 10.9, 9.5, 10.0)},
    (24, 0.0, 1.0): {0.05: (8.5, 5.8, 4.9, 5.1), 0.10: (14.6, 11.1, 10.1, 10.5)},
    (24, 0.25, 0.5): {0.05: (8.6, 5.7, 4.8, 5.1), 0.10: (14.8, 11.1, 9.6, 10.2)},
    (24, 0.25, 1.0): {0.05: (8.7, 6.0, 4.8, 5.1), 0.10: (15.0, 11.4, 10.1, 10.6)},
    (36, 0.0, 0.5): {0.05: (6.4, 4.6, 4.2, 4.4), 0.10: (12.8, 10.1, 9.5, 9.8)},
    (36, 0.0, 1.0): {0.05: (6.1, 4.9, 4.4, 4.7), 0.10: (12.6, 9.8, 9.0, 9.4)},
    (36, 0.25, 0.5): {0.05: (6.7, 4.8, 4.3, 4.6), 0.10: (12.4, 10.0, 9.3, 9.6)},
    (36, 0.25, 1.0): {0.05: (6.4, 4.7, 4.3, 4.4), 0.10: (12.6, 9.8, 9.1, 9.4)},
}
SCENARIO_GRID = tuple(PUBLISHED_RATES)


@dataclass(frozen=True)
class SimConfig:
    N: int
    omega: Tuple[float, float, float, float] = (1.0, 0.0, 0.5, 0.05)
    beta: Tuple[float, float, float, float] = (0.0, 0.2, 0.0, 0.0)
    replications: int = 5000
    alphas: Tuple[float, ...] = (0.05, 0.10)
    master_seed: int = 2024
    keep_replications: bool = True
    true_constants: bool = False

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ConfigError("N must be positive", key="simulation.N")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1", key="simulation.replications")
        if not all(0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1)", key="simulation.alphas")
        if len(self.omega) != 4 or len(self.beta) != 4:
            raise ConfigError("omega and beta each need four values", key="simulation")
        CovarianceModel(UNSTRUCTURED, 2, np.asarray(self.omega, dtype=float)).check_feasible()

    @property
    def scenario(self) -> Tuple[int, float, float]:
        return (int(self.N), float(self.omega[1]), float(self.omega[2]))

    @property
    def p(self) -> int:
        return len(DESIGN_SPEC.interest)


@dataclass
class SimResult:
    config: SimConfig
    statistics: pd.DataFrame
    rates: pd.DataFrame = field(default_factory=pd.DataFrame)
    failures: Dict[str, int] = field(default_factory=dict)
    flagged: bool = False
    metadata: Dict[str, object] = field(default_factory=dict)

    def values(self, name: str) -> np.ndarray:
        column = self.statistics[name].to_numpy(dtype=float)
        return column[np.isfinite(column)]

    def rate(self, name: str, alpha: float) -> float:
        row = self.rates[(self.rates["statistic"] == name) & np.isclose(self.rates["alpha"], alpha)]
        return float(row["rate"].iloc[0])

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "rates": self.rates.to_dict(orient="records"),
            "failures": dict(self.failures),
            "flagged": bool(self.flagged),
            "metadata": self.metadata,
        }


def unit_sizes(N: int) -> np.ndarray:
    return np.array([TAU_CYCLE[i % len(TAU_CYCLE)] for i in range(N)], dtype=int)


def unit_groups(N: int) -> np.ndarray:
    """0, 1, 2 for the three equal blocks of units (x₂ = x₃ = 0; x₂ = 1; x₃ = 1)."""
    return (np.arange(N) * 3) // N


def simulate_design(N: int, rng: np.random.Generator) -> pd.DataFrame:
    tau = unit_sizes(N)
    groups = unit_groups(N)
    unit = np.repeat(np.arange(N), tau)
    group = groups[unit]
    return pd.DataFrame(
        {
            "unit": [f"u{i:03d}" for i in unit],
            "t": rng.uniform(0.0, 1.0, size=int(tau.sum())),
            "x2": (group == 1).astype(float),
            "x3": (group == 2).astype(float),
        }
    )


def simulate_dataset(
    N: int,
    beta: Sequence[float],
    omega: Sequence[float],
    rng: Union[int, np.random.Generator],
) -> LongitudinalDataset:
    """One dataset of the size-study design, responses included."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(int(rng))
    table = simulate_design(N, rng)
    model = CovarianceModel(UNSTRUCTURED, 2, np.asarray(omega, dtype=float))
    model.check_feasible()
    b = sample_mvn(np.zeros(2), _psd_factor(model.G), rng, size=N)
    b0, b1, b2, b3 = (float(v) for v in beta)
    unit = np.repeat(np.arange(N), unit_sizes(N))
    t = table["t"].to_numpy()
    eps = rng.normal(0.0, np.sqrt(model.error_variance), size=t.shape[0])
    table["y"] = b0 + b1 * t + b2 * table["x2"] + b3 * table["x3"] + b[unit, 0] + b[unit, 1] * t + eps
    return LongitudinalDataset(table=table[["unit", "t", "y", "x2", "x3"]], columns=DESIGN_COLUMNS)


def _psd_factor(G: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(G)
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def design_frame(dataset: LongitudinalDataset) -> ModelFrame:
    return build_frame(dataset, DESIGN_SPEC)


def _replicate(task: Tuple[SimConfig, int]) -> Dict[str, object]:
    config, index = task
    row: Dict[str, object] = {"replication": index, "error": ""}
    for name in STATISTICS + ("C", "C_star", "C_true", "Cstar_true"):
        row[name] = np.nan
    try:
        rng = rng_for_replication(config.master_seed, index)
        frame = design_frame(simulate_dataset(config.N, config.beta, config.omega, rng))
        report = run_tests(frame, np.zeros(config.p))
        for name in STATISTICS:
            value = report.statistic(name)
            row[name] = np.nan if value is None else float(value)
        row["C"] = np.nan if report.C is None else report.C
        row["C_star"] = np.nan if report.C_star is None else report.C_star
        if config.true_constants:
            truth = bartlett_constants(frame, config.omega)
            row["C_true"], row["Cstar_true"] = truth.C, truth.C_star
    except (MixedModelError, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        logger.debug("replication %d failed: %s", index, row["error"])
    return row


def _tally(config: SimConfig, table: pd.DataFrame) -> Tuple[pd.DataFrame, Dict[str, int]]:
    records = []
    failures = {}
    chi2 = stats.chi2(config.p)
    for name in STATISTICS:
        values = table[name].to_numpy(dtype=float)
        valid = values[np.isfinite(values)]
        failures[name] = int(values.shape[0] - valid.shape[0])
        for alpha in config.alphas:
            critical = chi2.isf(alpha)
            share = float(np.mean(valid > critical)) if valid.size else np.nan
            se = float(np.sqrt(share * (1 - share) / valid.size)) if valid.size else np.nan
            records.append(
                {
                    "N": config.N,
                    "omega2": config.omega[1],
                    "omega3": config.omega[2],
                    "statistic": name,
                    "alpha": alpha,
                    "rate": 100.0 * share,
                    "mc_se": 100.0 * se,
                    "valid": int(valid.size),
                    "failures": failures[name],
                }
            )
    return pd.DataFrame.from_records(records), failures


def run_size_study(
    config: SimConfig,
    progress_callback: Optional[Callable[[int, int], None]] = None,
    workers: int = 1,
) -> SimResult:
    """Run every replication of one scenario; the outcome does not depend on ``workers``."""
    tasks = [(config, i) for i in range(config.replications)]
    rows: List[Dict[str, object]] = []
    if workers > 1:
        chunk = max(1, config.replications // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_replicate, tasks, chunksize=chunk):
                rows.append(row)
                if progress_callback:
                    progress_callback(len(rows), config.replications)
    else:
        for task in tasks:
            rows.append(_replicate(task))
            if progress_callback:
                progress_callback(len(rows), config.replications)

    table = pd.DataFrame.from_records(rows).sort_values("replication").reset_index(drop=True)
    rates, failures = _tally(config, table)
    flagged = max(failures.values()) > FAILURE_LIMIT * config.replications
    if flagged:
        logger.warning("scenario %s: failed replications %s exceed %.0f%%", config.scenario, failures, 100 * FAILURE_LIMIT)
    result = SimResult(
        config=config,
        statistics=table,
        rates=rates,
        failures=failures,
        flagged=flagged,
        metadata={
            "tau_rule": "unit i gets tau = 2 + (i mod 8)",
            "dummy_rule": "units split into three equal index blocks: (x2, x3) = (0, 0), (1, 0), (0, 1)",
            "covariates": "t redrawn from U(0, 1) in every replication",
            "reference": _reference_rates(config),
        },
    )
    return result


def _reference_rates(config: SimConfig) -> Optional[Dict[str, Dict[str, float]]]:
    ref = PUBLISHED_RATES.get(config.scenario)
    if ref is None or tuple(config.omega[::3]) != (1.0, 0.05):
        return None
    return {str(alpha): dict(zip(STATISTICS, values)) for alpha, values in ref.items()}


def quantile_discrepancies(result: SimResult, probabilities: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """(empirical quantile − χ²_p quantile) / χ²_p quantile on a probability grid, long format."""
    probs = np.asarray(DEFAULT_PROBABILITIES if probabilities is None else probabilities, dtype=float)
    asymptotic = stats.chi2(result.config.p).ppf(probs)
    frames = []
    for name in STATISTICS:
        if name not in result.statistics:
            continue
        values = result.values(name)
        if values.size == 0:
            continue
        empirical = np.quantile(values, probs)
        frames.append(
            pd.DataFrame(
                {
                    "probability": probs,
                    "asymptotic_quantile": asymptotic,
                    "statistic": name,
                    "relative_discrepancy": (empirical - asymptotic) / asymptotic,
                }
            )
        )
    columns = ["probability", "asymptotic_quantile", "statistic", "relative_discrepancy"]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)


def grid_configs(replications: int = 5000, master_seed: int = 2024, true_constants: bool = False) -> List[SimConfig]:
    return [
        SimConfig(
            N=N,
            omega=(1.0, omega2, omega3, 0.05),
            replications=replications,
            master_seed=master_seed,
            true_constants=true_constants,
        )
        for N, omega2, omega3 in SCENARIO_GRID
    ]


def rate_summary(results: Sequence[SimResult]) -> pd.DataFrame:
    """Reproduced rates next to the published ones, one row per scenario and α."""
    records = []
    for result in results:
        ref = PUBLISHED_RATES.get(result.config.scenario, {})
        for alpha in result.config.alphas:
            record = {"N": result.config.N, "omega2": result.config.omega[1], "omega3": result.config.omega[2], "alpha": alpha}
            published = ref.get(alpha)
            for i, name in enumerate(STATISTICS):
                record[name] = result.rate(name, alpha)
                record[f"{name}_published"] = np.nan if published is None else published[i]
            records.append(record)
    return pd.DataFrame.from_records(records)


def write_outputs(results: Sequence[SimResult], out_dir: Union[str, Path]) -> List[Path]:
    """results.json, rates.csv, quantiles.csv and (when kept) replications.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    payload = {"scenarios": [r.to_dict() for r in results]}
    path = out / "results.json"
    path.write_text(json.dumps(payload, indent=2, default=_json_default), encoding="utf-8")
    written.append(path)

    path = out / "rates.csv"
    pd.concat([r.rates for r in results], ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    written.append(path)

    quantiles = []
    for r in results:
        q = quantile_discrepancies(r)
        q.insert(0, "N", r.config.N)
        q.insert(1, "omega2", r.config.omega[1])
        q.insert(2, "omega3", r.config.omega[2])
        quantiles.append(q)
    path = out / "quantiles.csv"
    pd.concat(quantiles, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    written.append(path)

    kept = [r for r in results if r.config.keep_replications]
    if kept:
        path = out / "replications.csv"
        tables = []
        for r in kept:
            t = r.statistics.copy()
            t.insert(0, "N", r.config.N)
            t.insert(1, "omega2", r.config.omega[1])
            t.insert(2, "omega3", r.config.omega[2])
            tables.append(t)
        pd.concat(tables, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
        written.append(path)
    return written


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")
