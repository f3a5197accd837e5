import json
import subprocess
import sys

import numpy as np
import pytest

from orbstab import __version__
from orbstab.cli import main
from orbstab.config import expand_jobs, load_config
from orbstab.errors import ConfigError

BASE = """\
system: bh-circle
params: {a: 1.0}
grid_size: 512
simulation: {x0: [1.2, 0.0, 0.1], horizon_periods: 10}
"""


def write(path, text):
    path.write_text(text)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err.strip()
    return code, [json.loads(line) for line in err.splitlines() if line]


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write(d / "job.yaml", BASE)
    out = d / "out"
    codes = [main([cmd, "--config", str(cfg), "--out", str(out)]) for cmd in
             ("analyze", "synthesize", "simulate", "report")]
    return d, out, codes


def load(out, name):
    return json.loads((out / name).read_text())


def test_pipeline_exit_codes(pipeline_dir):
    assert pipeline_dir[2] == [0, 0, 0, 0]


def test_analyze_report(pipeline_dir):
    doc = load(pipeline_dir[1], "analyze.json")
    assert doc["orbit_residual"]["max_residual"] < 1e-10
    mu = np.array(doc["undriven_spectra"]["comparison"]["multipliers"])
    assert np.min(np.abs(mu[:, 0] + 1j * mu[:, 1] - 1.0)) < 1e-6
    assert doc["version"] == __version__
    assert len(doc["config_hash"]) == 64
    assert (pipeline_dir[1] / "tvl.json").exists()


def test_synthesize_report(pipeline_dir):
    doc = load(pipeline_dir[1], "synthesize.json")
    ex = np.sort(np.array(doc["gains"]["riccati"]["spectra"]["tvl"]["exponents"])[:, 0])
    np.testing.assert_allclose(ex, [-1.73, -1.0, 0.0], atol=0.05)
    assert doc["gains"]["analytic"]["growth_heuristic"]["condition_holds"] is False
    assert doc["gains"]["riccati"]["trace_sums"]["passed"] is True
    assert (pipeline_dir[1] / "gain.csv").read_text().startswith("s,K[0][0],K[0][1],K[0][2]")


def test_simulate_report(pipeline_dir):
    doc = load(pipeline_dir[1], "metrics.json")
    assert doc["status"] == "ok"
    assert doc["metrics"]["final_distance"] < 1e-4
    assert (pipeline_dir[1] / "trace.csv").exists()


def test_report_outputs(pipeline_dir):
    out = pipeline_dir[1]
    for name in ("gain.png", "spectra.png", "trace.png", "summary.csv", "summary.json"):
        assert (out / name).stat().st_size > 0
    doc = load(out, "summary.json")
    assert doc["stale_sources"] == []
    assert doc["summary"]["riccati.tvl.verdict"] == "orbitally_stable"


def test_reports_are_byte_identical(pipeline_dir, tmp_path):
    d, out, _ = pipeline_dir
    again = tmp_path / "again"
    assert main(["analyze", "--config", str(d / "job.yaml"), "--out", str(again)]) == 0
    assert (again / "analyze.json").read_bytes() == (out / "analyze.json").read_bytes()
    assert (again / "tvl.json").read_bytes() == (out / "tvl.json").read_bytes()


def test_analyze_a2(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: bh-circle\nparams: {a: 2.0}\ngrid_size: 128\n")
    code, _ = run(capsys, "analyze", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    assert load(tmp_path / "o", "analyze.json")["orbit_residual"]["max_residual"] < 1e-10


def test_unknown_system(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: nope\n")
    code, errs = run(capsys, "analyze", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    assert "unknown system" in errs[0]["message"]


@pytest.mark.parametrize(
    "text",
    [
        "system: bh-circle\ngrid_size: 32\n",
        "system: bh-circle\nsimulation: {horizon_periods: 0}\n",
        "system: bh-circle\nparams: {b: 1.0}\n",
        "system: bh-circle\ncolour: blue\n",
        "system: bh-circle\nweights: {Q: [1, 1]}\n",
        "system: bh-circle\nparams: {a: -1.0}\n",
        "system: [unclosed\n",
        "system: hopf\ngain: analytic\n",
    ],
)
def test_invalid_configs(tmp_path, capsys, text):
    cfg = write(tmp_path / "c.yaml", text)
    code, errs = run(capsys, "analyze", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    assert errs[0]["error"] == "ConfigError"


def test_missing_x0(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: bh-circle\n")
    code, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2


def test_zero_weight(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml",
                "system: bh-circle\ngrid_size: 128\nweights: {Q: [0, 0, 0]}\ntolerances: {max_sweeps: 10}\n")
    code, errs = run(capsys, "synthesize", "--config", cfg, "--out", tmp_path / "o")
    if code == 0:
        assert np.max(np.abs(np.loadtxt(tmp_path / "o" / "gain.csv", delimiter=",", skiprows=1)[:, 1:])) < 1e-8
    else:
        assert code == 4
        assert errs[0]["periodicity_gap"] > 0


def test_far_start_exits_3(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: bh-circle\ngain: analytic\nsimulation: {x0: [5, 0, 2]}\n")
    code, errs = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 3
    assert errs[0]["error"] == "LeftTube"
    assert errs[0]["event_time"] == 0.0
    assert load(tmp_path / "o", "metrics.json")["status"] == "left_tube"


def test_on_orbit_start(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml",
                "system: bh-circle\ngain: analytic\nsimulation: {x0: [0.0, 1.0, 0.0], horizon_periods: 3}\n")
    code, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    assert load(tmp_path / "o", "metrics.json")["metrics"]["final_distance"] < 1e-9


def test_simulate_with_gain_file(pipeline_dir, tmp_path, capsys):
    gain = pipeline_dir[1] / "gain.csv"
    cfg = write(tmp_path / "c.yaml",
                f"system: bh-circle\ngain: {gain}\nsimulation: {{x0: [1.1, 0.0, 0.0], horizon_periods: 3}}\n")
    code, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    doc = load(tmp_path / "o", "metrics.json")
    assert doc["gain"] == "file"
    assert doc["metrics"]["final_distance"] < 1e-3


def test_report_without_artifacts(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: bh-circle\n")
    code, errs = run(capsys, "report", "--config", cfg, "--out", tmp_path / "empty")
    assert code == 2
    assert "no artifacts" in errs[0]["message"]


def test_parameter_sweep(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", "system: bh-circle\nparams: {a: [0.5, 2.0]}\ngrid_size: 64\nworkers: 2\n")
    code, _ = run(capsys, "analyze", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    for label in ("a=0.5", "a=2"):
        doc = load(tmp_path / "o" / label, "analyze.json")
        assert doc["config"]["label"] == label
    h1 = load(tmp_path / "o" / "a=0.5", "analyze.json")["config_hash"]
    h2 = load(tmp_path / "o" / "a=2", "analyze.json")["config_hash"]
    assert h1 != h2


def test_expand_jobs_product():
    jobs = expand_jobs({"system": "hopf", "params": {"mu": [1.0, 2.0], "omega": [1.0, 3.0]}})
    assert [j.label for j in jobs] == ["mu=1,omega=1", "mu=1,omega=3", "mu=2,omega=1", "mu=2,omega=3"]
    with pytest.raises(ConfigError):
        expand_jobs({"system": "hopf", "params": {"mu": []}})


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "orbstab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert __version__ in res.stdout
