import csv
import hashlib
import json
import subprocess
import sys

import pytest

from gtfm.cli import run
from gtfm.evaluation import FitReport
from gtfm.hmc import SUMMARY_HEADER
from gtfm.series import data_path

FAST = {"sampler": {"n_chains": 2, "n_warmup": 200, "n_keep": 200}}


@pytest.fixture
def fast_config(tmp_path):
    p = tmp_path / "fast.json"
    p.write_text(json.dumps(FAST))
    return str(p)


def _run(capsys, *argv):
    code = run(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _check_manifest(out):
    m = _manifest(out)
    listed = {f["path"] for f in m["outputs"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for f in m["outputs"]:
        data = (out / f["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"] and len(data) == f["bytes"]
    return m


def test_fit_smoke(tmp_path, capsys, fast_config):
    out = tmp_path / "fit"
    code, stdout, err = _run(capsys, "fit", "--model", "I", "--config", fast_config, "--out", str(out), "--seed", "3")
    assert code == 0, err
    m = _check_manifest(out)
    assert m["command"] == "fit" and m["seed"] == 3
    assert m["inputs"]["data"]["path"] == "bundled:demo_lgd.csv"
    assert {"gtfm", "numpy", "python"} <= set(m["versions"])
    assert {"draws.csv", "summary.csv", "diagnostics.json", "fit_report.json"} <= {f["path"] for f in m["outputs"]}
    draws = _rows(out / "draws.csv")
    assert draws[0][:2] == ["chain", "alpha"] and len(draws) == 1 + 400
    assert _rows(out / "summary.csv")[0] == SUMMARY_HEADER
    assert json.loads(stdout)["command"] == "fit"


def test_compare_table(tmp_path, capsys, fast_config):
    out = tmp_path / "cmp"
    code, _, err = _run(capsys, "compare", "--model", "I,II", "--config", fast_config, "--out", str(out))
    assert code == 0, err
    rows = _rows(out / "compare.csv")
    assert rows[0] == FitReport.COMPARE_HEADER
    assert [r[0] for r in rows[1:]] == ["I", "II"]
    _check_manifest(out)


def test_forecast_outputs(tmp_path, capsys, fast_config):
    out = tmp_path / "fc"
    code, _, err = _run(capsys, "forecast", "--model", "I", "--config", fast_config, "--out", str(out),
                        "--horizon", "6")
    assert code == 0, err
    rows = _rows(out / "forecast_Local.csv")
    assert rows[0] == ["period", "mean", "p2.5", "p97.5"] and len(rows) == 7
    rep = json.loads((out / "forecast.json").read_text())
    assert "consistency" in rep["coherence"]
    _check_manifest(out)


def test_impact_and_baseline(tmp_path, capsys):
    out = tmp_path / "imp"
    code, _, err = _run(capsys, "impact", "--lags", "6", "--out", str(out))
    assert code == 0, err
    rows = _rows(out / "impact_GDP_response.csv")
    assert rows[0] == ["lag", "value"] and len(rows) == 8
    info = json.loads((out / "impact.json").read_text())
    assert set(info["macros"]) == {"GDP", "IDR", "Unemp"} and info["lags"] == 6
    out = tmp_path / "base"
    assert _run(capsys, "baseline", "--out", str(out))[0] == 0
    assert _rows(out / "ols_coefficients.csv")[0] == ["term", "estimate", "std_error", "t_value", "p_value"]
    assert (out / "baseline_Optimistic.csv").exists()
    _check_manifest(out)


def test_simulate_small(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"simulate": {"experiment": "hit_rate", "M": 20}}))
    out = tmp_path / "sim"
    code, _, err = _run(capsys, "simulate", "--config", str(cfg), "--out", str(out))
    assert code == 0, err
    rows = _rows(out / "table1_hit_rates.csv")
    assert len(rows) == 19 and rows[0][-1] == "hit_rate_x2"
    # the replicates flag overrides the config file
    out2 = tmp_path / "sim2"
    assert _run(capsys, "simulate", "--config", str(cfg), "--replicates", "5", "--out", str(out2))[0] == 0
    assert _manifest(out2)["config"]["simulate"]["M"] == 5


def test_unknown_model(tmp_path, capsys):
    out = tmp_path / "bad"
    code, _, err = _run(capsys, "fit", "--model", "IX", "--out", str(out))
    assert code == 2
    payload = json.loads(err)
    assert payload["model"] == "IX" and "IX" in payload["message"] and payload["command"] == "fit"
    assert not out.exists()


@pytest.mark.parametrize("content, needle", [
    ({"bogus": 1}, "bogus"),
    ({"sampler": {"seed": 3}}, "top level"),
    ({"sampler": {"n_warmup": -1}}, "sampler"),
    ({"seed": -4}, "seed"),
])
def test_bad_config(tmp_path, capsys, content, needle):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(content))
    code, _, err = _run(capsys, "fit", "--config", str(p), "--out", str(tmp_path / "o"))
    assert code == 2
    assert needle in json.loads(err)["message"]


def test_bad_invocations(tmp_path, capsys):
    assert _run(capsys, "fit", "--data", str(tmp_path / "missing.csv"))[0] == 2
    assert _run(capsys, "nonsense")[0] == 2
    assert _run(capsys, "impact", "--window", "2009Q1")[0] == 2
    p = tmp_path / "notjson.json"
    p.write_text("{")
    assert _run(capsys, "impact", "--config", str(p))[0] == 2


def test_flags_override_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5, "lags": 4, "out": str(tmp_path / "from_config")}))
    out = tmp_path / "from_flag"
    assert _run(capsys, "impact", "--config", str(p), "--seed", "8", "--out", str(out))[0] == 0
    m = _manifest(out)
    assert m["seed"] == 8 and m["config"]["lags"] == 4
    assert not (tmp_path / "from_config").exists()


def test_window_and_custom_data(tmp_path, capsys):
    data = tmp_path / "d.csv"
    out0 = tmp_path / "o0"
    assert _run(capsys, "baseline", "--out", str(out0), "--window", "2009Q1:2014Q4")[0] == 0
    assert json.loads((out0 / "ols_report.json").read_text())["residuals"] is not None
    data.write_bytes(data_path("demo_lgd.csv").read_bytes())
    out = tmp_path / "o1"
    assert _run(capsys, "impact", "--data", str(data), "--out", str(out))[0] == 0
    assert _manifest(out)["inputs"]["data"]["path"] == str(data)
    assert _run(capsys, "forecast", "--data", str(data), "--out", str(tmp_path / "o2"))[0] == 2


def test_rerun_is_byte_identical(tmp_path, capsys, fast_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run(capsys, "fit", "--model", "III", "--config", fast_config, "--out", str(out))[0] == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_console_script(tmp_path):
    out = tmp_path / "cs"
    proc = subprocess.run([sys.executable, "-m", "gtfm.cli", "impact", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "gtfm.cli", "fit", "--model", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "ConfigError"
