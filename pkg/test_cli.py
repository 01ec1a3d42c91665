#!/usr/bin/env python3
"""
Test the command line: config handling, exit codes and reproducible outputs
"""
import json
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
import pytest

from mlmtest.cli import RunConfig, build_parser, main
from mlmtest.errors import ConfigError

DOCS = Path(__file__).parent / "docs"


def schema(name):
    return json.loads((DOCS / name).read_text(encoding="utf-8"))


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def test_unknown_config_key_exits_with_input_error(tmp_path, capsys):
    config = write_config(tmp_path / "run.json", {"synthetic": {"N": 12}, "model": {"fixed": ["t"], "interest": ["t"], "bogus": 1}})
    assert main(["fit", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "model.bogus" in capsys.readouterr().err


def test_flags_override_file_values(tmp_path):
    config = write_config(tmp_path / "run.json", {"seed": 1, "out": "a", "threads": 2})
    args = build_parser().parse_args(["simulate", "--config", config, "--seed", "9", "--replications", "3"])
    run = RunConfig.load(args.config).apply_flags(args)
    assert (run.seed, run.out, run.threads, run.replications) == (9, "a", 2, 3)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"hypotheses": [{"name": "H", "psi": [0]}]})


def test_synthetic_fit_is_byte_identical(tmp_path):
    config = write_config(tmp_path / "run.json", {"synthetic": {"N": 12}})
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["fit", "--config", config, "--seed", "17", "--out", str(out)]) == 0
        outputs.append((out / "fit.json").read_bytes())
    assert outputs[0] == outputs[1]
    payload = json.loads(outputs[0])
    jsonschema.validate(payload, schema("fit.schema.json"))
    assert payload["N"] == 12
    assert list(payload["fit"]["coefficients"]) == ["x2", "x3", "(Intercept)", "t"]


def test_test_command_report_matches_schema(tmp_path, capsys):
    config = write_config(tmp_path / "run.json", {"synthetic": {"N": 12}})
    out = tmp_path / "out"
    assert main(["test", "--config", config, "--seed", "3", "--out", str(out)]) == 0
    payload = json.loads((out / "test.json").read_text(encoding="utf-8"))
    jsonschema.validate(payload, schema("report.schema.json"))
    (hypothesis,) = payload["hypotheses"]
    assert hypothesis["psi0"] == [0.0, 0.0]
    assert hypothesis["df"] == 2
    assert "LR_cr_star" in capsys.readouterr().out
    assert (out / "test.txt").exists()


def test_several_hypotheses_with_a_reduced_model(tmp_path):
    config = write_config(
        tmp_path / "run.json",
        {
            "synthetic": {"N": 12},
            "model": {"fixed": ["(Intercept)", "t", "x2", "x3"], "random": ["(Intercept)", "t"], "interest": ["x2", "x3"]},
            "hypotheses": [
                {"name": "groups", "psi0": [0.0, 0.0]},
                {"name": "slope", "interest": ["t"], "fixed": ["(Intercept)", "t"], "psi0": [0.2]},
            ],
        },
    )
    out = tmp_path / "out"
    assert main(["test", "--config", config, "--out", str(out)]) == 0
    payload = json.loads((out / "test.json").read_text(encoding="utf-8"))
    assert [h["name"] for h in payload["hypotheses"]] == ["groups", "slope"]
    assert payload["hypotheses"][1]["interest"] == ["t"]
    assert list(payload["hypotheses"][1]["estimates"]["ml"]["coefficients"]) == ["t", "(Intercept)"]


def test_null_value_length_mismatch_exits_with_input_error(tmp_path):
    config = write_config(tmp_path / "run.json", {"synthetic": {"N": 12}, "hypotheses": [{"psi0": [0.0]}]})
    assert main(["test", "--config", config, "--out", str(tmp_path / "out")]) == 2


def test_rank_deficient_design_names_the_column(tmp_path, capsys):
    rng = np.random.default_rng(0)
    unit = np.repeat([f"u{i}" for i in range(6)], 3)
    x2 = np.repeat([0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 3)
    table = pd.DataFrame({"unit": unit, "y": rng.normal(size=18), "t": rng.uniform(size=18), "x2": x2, "x3": x2})
    table.to_csv(tmp_path / "data.csv", index=False)
    config = write_config(
        tmp_path / "run.json",
        {
            "data": {"path": str(tmp_path / "data.csv"), "unit": "unit", "response": "y", "time": "t", "covariates": ["x2", "x3"]},
            "model": {"fixed": ["(Intercept)", "t", "x2", "x3"], "interest": ["x2"]},
        },
    )
    assert main(["fit", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "x3" in capsys.readouterr().err


def test_simulate_smoke_run(tmp_path, capsys):
    config = write_config(tmp_path / "run.json", {"simulation": {"N": 12, "replications": 2, "alphas": [0.05]}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", config, "--seed", "4", "--out", str(out)]) == 0
    payload = json.loads((out / "results.json").read_text(encoding="utf-8"))
    jsonschema.validate(payload, schema("results.schema.json"))
    assert payload["scenarios"][0]["config"]["alphas"] == [0.05]
    rates = pd.read_csv(out / "rates.csv")
    assert len(rates) == 4
    assert "LR_published" in capsys.readouterr().out


def test_unknown_preset_is_a_config_error(tmp_path):
    config = write_config(tmp_path / "run.json", {"simulation": {"preset": "table9"}})
    assert main(["simulate", "--config", config, "--out", str(tmp_path / "out")]) == 2


def test_example_config_is_valid():
    raw = json.loads((DOCS / "example_config.json").read_text(encoding="utf-8"))
    jsonschema.validate(raw, schema("config.schema.json"))
    RunConfig.from_dict(raw)


@pytest.mark.slow
def test_simulate_with_two_workers(tmp_path):
    config = write_config(tmp_path / "run.json", {"simulation": {"N": 12, "replications": 50}})
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"t{threads}"
        assert main(["simulate", "--config", config, "--threads", threads, "--out", str(out)]) == 0
        outs.append(pd.read_csv(out / "replications.csv"))
    pd.testing.assert_frame_equal(outs[0], outs[1])


def test_table1_preset_runs_every_scenario(tmp_path):
    config = write_config(tmp_path / "run.json", {"simulation": {"preset": "table1", "replications": 1, "alphas": [0.05]}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", config, "--seed", "2", "--out", str(out)]) == 0
    payload = json.loads((out / "results.json").read_text(encoding="utf-8"))
    jsonschema.validate(payload, schema("results.schema.json"))
    scenarios = [(s["config"]["N"], s["config"]["omega"][1], s["config"]["omega"][2]) for s in payload["scenarios"]]
    assert len(scenarios) == 12
    assert scenarios[0] == (12, 0.0, 0.5) and scenarios[-1] == (36, 0.25, 1.0)
    jsonschema.validate({"simulation": {"preset": "table1"}}, schema("config.schema.json"))


@pytest.mark.parametrize("dummies", [{"reference": "a"}, {"column": "site"}, ["site"]])
def test_incomplete_dummy_coding_is_a_config_error(tmp_path, capsys, dummies):
    config = write_config(
        tmp_path / "run.json",
        {"synthetic": {"N": 12}, "model": {"fixed": ["(Intercept)", "t", "x2"], "interest": ["x2"], "dummies": dummies}},
    )
    assert main(["fit", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "model.dummies" in capsys.readouterr().err
