"""
Command-line front end: ``python -m mlmtest fit|test|simulate --config run.json``.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .data import INTERCEPT, ColumnMap, DummyCoding, LongitudinalDataset, ModelSpec, build_frame, ingest_csv
from .errors import ConfigError, InputError, MixedModelError
from .likelihood import fit_ml
from .simulation import DESIGN_SPEC, SimConfig, grid_configs, rate_summary, run_size_study, simulate_dataset, write_outputs
from .testing import STATISTICS, TestReport, run_tests

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {"data", "model", "hypotheses", "synthetic", "simulation", "seed", "out", "threads", "replications"}
BLOCK_KEYS = {
    "data": {"path", "unit", "response", "time", "covariates"},
    "model": {"fixed", "random", "family", "interest", "dummies"},
    "synthetic": {"N", "beta", "omega"},
    "simulation": {"preset", "N", "omega", "beta", "replications", "alphas", "keep_replications", "true_constants"},
}
HYPOTHESIS_KEYS = {"name", "interest", "psi0", "fixed"}
DUMMY_KEYS = {"column", "reference", "prefix"}
REQUIRED_DUMMY_KEYS = ("column", "reference")
SCENARIO_PRESETS = ("table1", "scenario-grid")


@dataclass
class RunConfig:
    data: Dict[str, Any] = field(default_factory=dict)
    model: Dict[str, Any] = field(default_factory=dict)
    hypotheses: List[Dict[str, Any]] = field(default_factory=list)
    synthetic: Dict[str, Any] = field(default_factory=dict)
    simulation: Dict[str, Any] = field(default_factory=dict)
    seed: int = 2024
    out: str = "mlmtest_out"
    threads: int = 1
    replications: Optional[int] = None

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        _check_keys(raw, TOP_LEVEL_KEYS, "")
        for block, allowed in BLOCK_KEYS.items():
            value = raw.get(block, {})
            if not isinstance(value, dict):
                raise ConfigError(f"'{block}' must be an object", key=block)
            _check_keys(value, allowed, f"{block}.")
        dummies = raw.get("model", {}).get("dummies")
        if dummies is not None:
            if not isinstance(dummies, dict):
                raise ConfigError("model.dummies must be an object", key="model.dummies")
            _check_keys(dummies, DUMMY_KEYS, "model.dummies.")
        hypotheses = raw.get("hypotheses", [])
        if not isinstance(hypotheses, list):
            raise ConfigError("'hypotheses' must be a list", key="hypotheses")
        for i, h in enumerate(hypotheses):
            _check_keys(h, HYPOTHESIS_KEYS, f"hypotheses[{i}].")
        return cls(**raw)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def apply_flags(self, args: argparse.Namespace) -> "RunConfig":
        for name in ("seed", "out", "threads", "replications"):
            value = getattr(args, name, None)
            if value is not None:
                setattr(self, name, value)
        return self


def _check_keys(block: Dict[str, Any], allowed: set, prefix: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown configuration key '{prefix}{key}'", key=f"{prefix}{key}")


# data and model assembly


def load_dataset(config: RunConfig) -> LongitudinalDataset:
    if config.data.get("path"):
        d = config.data
        for key in ("unit", "response"):
            if key not in d:
                raise ConfigError(f"data.{key} is required with data.path", key=f"data.{key}")
        columns = ColumnMap(
            unit=d["unit"],
            response=d["response"],
            time=d.get("time"),
            covariates=tuple(d.get("covariates", ())),
        )
        return ingest_csv(d["path"], columns)
    if config.synthetic:
        s = config.synthetic
        return simulate_dataset(
            int(s.get("N", 12)),
            s.get("beta", (0.0, 0.2, 0.0, 0.0)),
            s.get("omega", (1.0, 0.0, 0.5, 0.05)),
            np.random.default_rng(int(config.seed)),
        )
    raise ConfigError("either data.path or a synthetic block is required", key="data.path")


def model_spec(config: RunConfig, hypothesis: Optional[Dict[str, Any]] = None) -> ModelSpec:
    m = config.model
    if not m and not config.data.get("path"):
        base = DESIGN_SPEC
    else:
        if "fixed" not in m or "interest" not in m:
            raise ConfigError("model.fixed and model.interest are required", key="model")
        dummies = None
        if m.get("dummies"):
            d = m["dummies"]
            missing = [key for key in REQUIRED_DUMMY_KEYS if not isinstance(d, dict) or key not in d]
            if missing:
                raise ConfigError(f"model.dummies needs {', '.join(missing)}", key="model.dummies")
            dummies = DummyCoding(column=d["column"], reference=str(d["reference"]), prefix=d.get("prefix"))
        base = ModelSpec(
            fixed=tuple(m["fixed"]),
            interest=tuple(m["interest"]),
            random=tuple(m.get("random", (INTERCEPT,))),
            family=m.get("family", "unstructured-G"),
            dummies=dummies,
        )
    if hypothesis is None:
        return base
    return base.reduced(hypothesis.get("fixed", base.fixed), hypothesis.get("interest", base.interest))


def _hypotheses(config: RunConfig) -> List[Dict[str, Any]]:
    return config.hypotheses or [{"name": "H0"}]


# rendering


def _table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3f}")


def render_fit(fit_dict: Dict[str, Any]) -> str:
    coef = pd.DataFrame({"coefficient": list(fit_dict["coefficients"]), "estimate": list(fit_dict["coefficients"].values())})
    omega = pd.DataFrame({"component": list(fit_dict["omega"]), "estimate": list(fit_dict["omega"].values())})
    lines = [
        _table(coef),
        "",
        _table(omega),
        "",
        f"loglik = {fit_dict['loglik']:.3f}",
        f"converged = {fit_dict['converged']}, boundary = {fit_dict['boundary']}",
    ]
    return "\n".join(lines)


def render_report(name: str, report: TestReport) -> str:
    rows = []
    for stat in STATISTICS:
        value = report.statistic(stat)
        rows.append(
            {
                "statistic": stat,
                "value": np.nan if value is None else value,
                "p-value": np.nan if report.pvalues.get(stat) is None else report.pvalues[stat],
                "note": report.unavailable.get(stat, ""),
            }
        )
    lines = [f"{name}: H0 {', '.join(report.names)} = {list(map(float, report.psi0))}  (df = {report.df})", _table(pd.DataFrame(rows))]
    if report.C is not None:
        lines.append(f"C = {report.C:.3f}, C* = {report.C_star:.3f}")
    if report.adjusted is not None:
        psi_tilde = report.adjusted.beta_hat[: report.df]
        lines.append("adjusted profile estimates: " + ", ".join(f"{n} = {v:.3f}" for n, v in zip(report.names, psi_tilde)))
    lines.extend(f"! {flag}" for flag in report.flags)
    return "\n".join(lines)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# commands


def cmd_fit(config: RunConfig) -> int:
    dataset = load_dataset(config)
    frame = build_frame(dataset, model_spec(config))
    fit = fit_ml(frame)
    payload = {"N": dataset.N, "T": dataset.T, "family": frame.family, "fit": fit.to_dict()}
    out = Path(config.out)
    _write(out / "fit.json", json.dumps(payload, indent=2) + "\n")
    text = render_fit(payload["fit"])
    _write(out / "fit.txt", text + "\n")
    print(text)
    print(f"✅ Fit written to {out / 'fit.json'}")
    return 0


def cmd_test(config: RunConfig) -> int:
    dataset = load_dataset(config)
    reports = []
    texts = []
    for i, hypothesis in enumerate(_hypotheses(config)):
        name = hypothesis.get("name", f"H{i}")
        frame = build_frame(dataset, model_spec(config, hypothesis))
        psi0 = hypothesis.get("psi0")
        if psi0 is not None and len(psi0) != frame.p:
            raise ConfigError(f"{name}: psi0 has {len(psi0)} values for {frame.p} interest terms", key=f"hypotheses[{i}].psi0")
        report = run_tests(frame, psi0)
        reports.append({"name": name, **report.to_dict()})
        texts.append(render_report(name, report))
    out = Path(config.out)
    _write(out / "test.json", json.dumps({"N": dataset.N, "T": dataset.T, "hypotheses": reports}, indent=2) + "\n")
    text = "\n\n".join(texts)
    _write(out / "test.txt", text + "\n")
    print(text)
    print(f"✅ Report written to {out / 'test.json'}")
    return 0


def _sim_configs(config: RunConfig) -> List[SimConfig]:
    s = config.simulation
    replications = config.replications or int(s.get("replications", 5000))
    if s.get("preset") in SCENARIO_PRESETS:
        configs = grid_configs(replications, int(config.seed), bool(s.get("true_constants", False)))
    elif s.get("preset"):
        raise ConfigError(f"unknown simulation preset '{s['preset']}'", key="simulation.preset")
    else:
        configs = [
            SimConfig(
                N=int(s.get("N", 12)),
                omega=tuple(s.get("omega", (1.0, 0.0, 0.5, 0.05))),
                beta=tuple(s.get("beta", (0.0, 0.2, 0.0, 0.0))),
                replications=replications,
                master_seed=int(config.seed),
                true_constants=bool(s.get("true_constants", False)),
            )
        ]
    alphas = s.get("alphas")
    keep = s.get("keep_replications")
    changes: Dict[str, Any] = {}
    if alphas is not None:
        changes["alphas"] = tuple(float(a) for a in alphas)
    if keep is not None:
        changes["keep_replications"] = bool(keep)
    return [replace(c, **changes) for c in configs]


def cmd_simulate(config: RunConfig) -> int:
    results = []
    for sim in _sim_configs(config):
        label = f"N={sim.N} omega2={sim.omega[1]:g} omega3={sim.omega[2]:g}"
        with tqdm(total=sim.replications, desc=label, unit="rep") as bar:

            def progress(done: int, total: int) -> None:
                bar.update(done - bar.n)

            results.append(run_size_study(sim, progress_callback=progress, workers=int(config.threads)))
    written = write_outputs(results, config.out)
    print(_table(rate_summary(results)))
    flagged = [r.config.scenario for r in results if r.flagged]
    for scenario in flagged:
        print(f"⚠️  scenario {scenario} exceeded the replication failure limit")
    for path in written:
        print(f"✅ Wrote {path}")
    return 0


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlmtest", description="Mixed linear model likelihood ratio tests with small-sample corrections")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="Master seed for synthetic data and simulations")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--replications", type=int, default=None, help="Monte Carlo replications per scenario")
    parser.add_argument("--threads", type=int, default=None, help="Worker processes for simulate")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = RunConfig.load(args.config).apply_flags(args)
        return COMMANDS[args.command](config)
    except MixedModelError as exc:
        kind = "input error" if isinstance(exc, InputError) else "numerical failure"
        print(f"❌ {kind}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
