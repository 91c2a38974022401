import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from dircov import bench
from dircov.cli import main
from dircov.errors import ConfigError
from dircov.samples import write_bin, write_csv
from dircov.synthdata import SpectrumProfile, gen_gaussian

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name, **overrides):
    cfg = json.loads((CONFIGS / name).read_text())
    cfg.update(overrides)
    return cfg


def run_cli(tmp_path, command, cfg):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return main([command, str(p), "--out-dir", str(tmp_path)])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- report plumbing ----------------------------------------------------------

def test_trial_report_registry():
    bench.TrialReport("x", 0, 1, {"dir_error": 0.1})
    with pytest.raises(ValueError):
        bench.TrialReport("x", 0, 1, {"not_a_metric": 0.1})
    with pytest.raises(ValueError):
        bench.TrialReport("x", 0, 1, {"dir_error": float("nan")})


def test_every_acceptance_criterion_has_a_metric():
    tags = " ".join(bench.METRICS.values())
    for i in range(1, 12):
        assert f"AC{i}:" in tags


def test_trial_seeds_are_order_independent():
    a = bench.trial_seed(0, "exp", 3)
    assert a == bench.trial_seed(0, "exp", 3)
    assert a != bench.trial_seed(0, "exp", 4) and a != bench.trial_seed(1, "exp", 3)


def test_zero_trials(tmp_path):
    code = run_cli(tmp_path, "bench", load("zero_trials.json"))
    assert code == 0
    rows = read_rows(tmp_path / "zero_trials.csv")
    assert rows == [["experiment_id", "trial", "seed"] + bench.DIRECTIONAL_COLUMNS]
    summary = json.loads((tmp_path / "zero_trials.json").read_text())
    assert summary["status"] == "no trials"


@pytest.mark.parametrize("cfg", [
    {"experiment": "directional", "trials": 1},
    {"schema_version": 2, "experiment": "directional"},
    {"schema_version": 1, "experiment": "scalar"},
    {"schema_version": 1, "experiment": "directional", "trials": -1},
    {"schema_version": 1, "experiment": "directional", "trials": 1, "profile": {"type": "weird"}},
])
def test_malformed_configs_exit_2(tmp_path, cfg):
    assert run_cli(tmp_path, "bench", cfg) == 2


def test_unparseable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["scalar", str(p)]) == 2
    with pytest.raises(ConfigError):
        bench.load_config(p, "scalar")


def test_failing_threshold_exits_1(tmp_path):
    cfg = load("adversarial_zero.json", trials=200,
               thresholds=[{"name": "impossible", "lhs": "relerr", "op": "<", "value": 0.0}])
    assert run_cli(tmp_path, "adversarial", cfg) == 1
    assert json.loads((tmp_path / "three_point_zero.json").read_text())["status"] == "fail"


# -- directional --------------------------------------------------------------

def test_directional_gain_spiked(tmp_path):
    cfg = load("directional_spiked.json")
    code, summary = bench.run_directional_bench(cfg, out_dir=tmp_path)
    assert code == 0
    assert summary["stats"]["e32.dir_error.median"] <= 0.1 * summary["stats"]["e32.opcov_error.median"]
    assert len(read_rows(tmp_path / "directional_spiked.csv")) == 101


def test_directional_slope(tmp_path):
    code, summary = bench.run_directional_bench(load("directional_slope.json"), out_dir=tmp_path)
    assert code == 0
    assert -0.65 <= summary["stats"]["rand0.dir_error.slope"] <= -0.35


def test_csv_is_reproducible(tmp_path):
    cfg = load("directional_spiked.json", trials=6)
    bench.run_directional_bench(cfg, out_dir=tmp_path / "a")
    bench.run_directional_bench(cfg, out_dir=tmp_path / "b", workers=2)
    a = (tmp_path / "a" / "directional_spiked.csv").read_bytes()
    b = (tmp_path / "b" / "directional_spiked.csv").read_bytes()
    assert a == b


# -- adversarial --------------------------------------------------------------

def test_three_point_zero_frequency(tmp_path):
    code, summary = bench.run_adversarial(load("adversarial_zero.json"), out_dir=tmp_path)
    assert code == 0
    assert summary["stats"]["target"] == pytest.approx(0.99 ** 100)
    assert summary["stats"]["relerr"] <= 0.3


def test_three_point_huge_alpha(tmp_path):
    code, summary = bench.run_adversarial(load("adversarial_variance.json"), out_dir=tmp_path)
    st = summary["stats"]
    assert code == 0
    assert st["trimmed_error.max"] <= 1.0
    assert st["naive_error.max"] > st["trimmed_error.max"]


def test_mixed_adversary_envelope(tmp_path):
    code, summary = bench.run_adversarial(load("adversarial_xmu.json"), out_dir=tmp_path)
    assert code == 0
    assert summary["stats"]["within_envelope.mean"] >= 0.9


def test_adversarial_unknown_kind(tmp_path):
    assert run_cli(tmp_path, "adversarial", {"schema_version": 1, "experiment": "adversarial", "kind": "x"}) == 2


# -- scalar -------------------------------------------------------------------

def test_scalar_gaussian(tmp_path):
    code, summary = bench.run_unit_scalar(load("scalar_gaussian.json"), out_dir=tmp_path)
    assert code == 0
    assert summary["stats"]["constant"] <= 10.0
    assert len(read_rows(tmp_path / "scalar_gaussian.csv")) == 5


def test_scalar_student(tmp_path):
    code, summary = bench.run_unit_scalar(load("scalar_student.json"), out_dir=tmp_path)
    kappa2 = math.sqrt(3 + 6 / (5 - 4))
    assert summary["stats"]["kappa2"] == pytest.approx(kappa2)
    assert code == 0 and summary["stats"]["constant"] <= 10.0 * kappa2


def test_scalar_constant_data_zero_error(tmp_path):
    cfg = load("scalar_gaussian.json", trials=50, distribution={"type": "constant", "value": 3.0})
    code, summary = bench.run_unit_scalar(cfg, out_dir=tmp_path)
    rows = read_rows(tmp_path / "scalar_gaussian.csv")[1:]
    assert code == 0 and len(rows) == 4
    for row in rows:
        assert float(row[6]) == 0.0 and float(row[7]) == 0.0


# -- fit / query --------------------------------------------------------------

@pytest.mark.parametrize("suffix", ["csv", "bin"])
def test_fit_query_round_trip(tmp_path, capsys, suffix):
    s = gen_gaussian(SpectrumProfile.power_law(5), 1000, 0)
    data = tmp_path / f"data.{suffix}"
    (write_csv if suffix == "csv" else write_bin)(s, data)
    model = tmp_path / "m.json"
    assert main(["fit", "--data", str(data), "--delta", "0.001", "--out", str(model), "--seed", "2"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["dim"] == 5 and info["n"] == 1000
    assert main(["query", "--model", str(model), "--direction", "1,0,0,0,0"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert set(est) >= {"value", "head_part", "tail_part", "cross_part", "envelope", "clipped"}
    assert abs(est["raw_value"] - (est["head_part"] + est["tail_part"] + 2 * est["cross_part"])) <= 1e-10
    assert abs(est["value"] - 1.0) <= 0.3


def test_cli_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--delta", "0.1", "--out", "x"]) == 2
    assert main(["query", "--model", str(tmp_path / "none.json"), "--direction", "1"]) == 2
    write_csv(gen_gaussian(SpectrumProfile.power_law(2), 100, 0), tmp_path / "d.csv")
    assert main(["fit", "--data", str(tmp_path / "d.csv"), "--delta", "1.5", "--out", str(tmp_path / "m")]) == 2
    assert main(["--help"]) == 0


def test_cli_acceptance_subset(capsys):
    assert main(["acceptance", "--only", "AC1"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1 and out[0].startswith("[PASS] AC1")
