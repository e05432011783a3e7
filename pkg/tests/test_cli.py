import hashlib
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from quadtune import cli
from quadtune.endor import Spectrum, peak_positions
from quadtune.estimator import angular_model
from quadtune.spincore import MAGIC_ANGLE

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    return code


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_spectrum_unstrained(tmp_path):
    out = tmp_path / "o"
    assert run(["spectrum", "--config", CONFIGS / "unstrained.qsx", "--out", out]) == 0
    m = manifest(out)
    names = sorted(o["path"] for o in m["outputs"])
    assert len(names) == 8 and all(n.startswith("spectrum_m") for n in names)
    # no orphans: every file except the manifest is listed, hashes match
    on_disk = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert on_disk == names
    for o in m["outputs"]:
        assert hashlib.sha256((out / o["path"]).read_bytes()).hexdigest() == o["sha256"]
    assert m["status"] == "complete" and m["command"] == "spectrum"
    assert m["config_sha256"] == hashlib.sha256((CONFIGS / "unstrained.qsx").read_bytes()).hexdigest()
    centers = []
    for n in names:
        if n.endswith(".csv"):
            peaks = peak_positions(Spectrum.from_csv((out / n).read_text()))
            assert len(peaks) == 1
            centers.append(peaks[0].center)
    assert max(centers) - min(centers) < 1.0


def test_spectrum_strained_111(tmp_path):
    out = tmp_path / "o"
    assert run(["spectrum", "--config", CONFIGS / "stack111.qsx", "--out", out]) == 0
    spec = Spectrum.from_json((out / "spectrum_m+1_2.json").read_text())
    f = spec.meta["transitions_Hz"]
    centers = [p.center for p in peak_positions(spec)]
    assert centers == pytest.approx(f[:2], abs=50)
    f_Q = 2 * (f[2] - f[1])
    assert f[1] - f[0] == pytest.approx(f_Q / 2, rel=1e-3)
    assert 230e3 < f_Q < 255e3


def test_missing_and_invalid_config(tmp_path, capsys):
    assert run(["spectrum", "--config", tmp_path / "nope.qsx", "--out", tmp_path / "o"]) == 2
    assert "cannot read config" in capsys.readouterr().err
    bad = write(tmp_path, "bad.qsx", "[system]\n[field]\nB0 = 1 ms\n")
    assert run(["spectrum", "--config", bad, "--out", tmp_path / "o"]) == 2
    assert "3:8: error: unit mismatch" in capsys.readouterr().err
    invalid = write(tmp_path, "inv.qsx", "[system]\n[field]\nB0 = 1 T\n[sweep]\nvariable = x\nstart = 0\nstop = 1\n")
    assert run(["sweep", "--config", invalid, "--out", tmp_path / "o"]) == 2
    assert run(["decay", "--config", CONFIGS / "unstrained.qsx", "--out", tmp_path / "o"]) == 2
    assert run(["sweep", "--config", CONFIGS / "unstrained.qsx", "--out", tmp_path / "o"]) == 2
    assert not (tmp_path / "o").exists()


def test_deterministic_outputs(tmp_path, monkeypatch):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out in (a, b):
        assert run(["sweep", "--config", CONFIGS / "piezo111.qsx", "--out", out, "--seed", 3]) == 0
    monkeypatch.setenv("QUADTUNE_THREADS", "4")
    assert run(["sweep", "--config", CONFIGS / "piezo111.qsx", "--out", c, "--seed", 3]) == 0
    ma, mb, mc = manifest(a), manifest(b), manifest(c)
    for m in (ma, mb, mc):
        m.pop("wall_time_s")
    assert ma == mb == mc
    assert (a / "sweep.csv").read_bytes() == (c / "sweep.csv").read_bytes()
    assert ma["seed"] == 3


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("QUADTUNE_THREADS", "many")
    assert run(["sweep", "--config", CONFIGS / "piezo111.qsx", "--out", tmp_path / "o"]) == 2


def _sweep_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def test_theta_sweep_zero_coupling(tmp_path):
    cfg = write(tmp_path, "z.qsx", "[system]\n[field]\nB0 = 0.35 T\n[sweep]\nvariable = theta\nstart = 0 deg\n"
                                   "stop = 90 deg\npoints = 19\n")
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "o"]) == 0
    header, rows = _sweep_rows(tmp_path / "o" / "sweep.csv")
    assert header == ["theta", "transition", "exact_shift_Hz", "first_order_Hz", "perturbative_shift_Hz"]
    assert len(rows) == 19 * 3
    for r in rows:
        assert all(abs(float(v)) < 1e-6 for v in r[2:])


def test_theta_sweep_magic_angle(tmp_path):
    out = tmp_path / "o"
    assert run(["sweep", "--config", CONFIGS / "angular111.qsx", "--out", out]) == 0
    _, rows = _sweep_rows(out / "sweep.csv")
    outer = np.array([[float(r[0]), float(r[3])] for r in rows if r[1] == "outer+"])
    i = np.flatnonzero(np.diff(np.sign(outer[:, 1])))[0]
    (t0, y0), (t1, y1) = outer[i], outer[i + 1]
    root = t0 - y0 * (t1 - t0) / (y1 - y0)
    assert math.degrees(root) == pytest.approx(54.7356, abs=0.01)
    exact = np.array([float(r[2]) for r in rows if r[1] == "outer+"])
    assert np.all(np.isfinite(exact))


def test_strain_sweep_linear(tmp_path):
    out = tmp_path / "o"
    assert run(["sweep", "--config", CONFIGS / "piezo111.qsx", "--out", out]) == 0
    _, rows = _sweep_rows(out / "sweep.csv")
    pts = np.array([[float(r[0]), float(r[2])] for r in rows if r[1] == "outer+"])
    slope, icpt = np.polyfit(pts[:, 0], pts[:, 1], 1)
    assert np.max(np.abs(pts[:, 1] - (slope * pts[:, 0] + icpt))) < 1.0
    assert 13e3 <= pts[-1, 1] <= 23e3


def test_sweep_json_format(tmp_path):
    out = tmp_path / "o"
    assert run(["sweep", "--config", CONFIGS / "piezo111.qsx", "--out", out, "--format", "json"]) == 0
    d = json.loads((out / "sweep.json").read_text())
    assert d["variable"] == "strain" and len(d["rows"]) == 33


def test_decay_alpha1(tmp_path):
    out = tmp_path / "o"
    assert run(["decay", "--config", CONFIGS / "decay_alpha1.qsx", "--out", out]) == 0
    rep = json.loads((out / "decay_fit.json").read_text())
    assert [p["n"] for p in rep["points"]] == [1, 2, 4, 8, 16, 32]
    assert rep["points"][0]["T2_s"] == pytest.approx(44e-3, rel=0.02)
    assert rep["exponent"] == pytest.approx(0.5, abs=0.05)
    lines = (out / "decay.csv").read_text().splitlines()
    assert lines[0] == "n,t_s,W" and len(lines) == 1 + 6 * 16


def test_decay_zero_noise(tmp_path):
    cfg = write(tmp_path, "z.qsx", "[system]\n[field]\nB0 = 0.35 T\n[noise]\nalpha = 1\namplitude = 0\n")
    out = tmp_path / "o"
    assert run(["decay", "--config", cfg, "--out", out]) == 0
    rows = (out / "decay.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 1.0 for r in rows)
    rep = json.loads((out / "decay_fit.json").read_text())
    assert rep["fit"]["converged"] is False


def test_fit_gn_from_spectra(tmp_path, capsys):
    cfg = write(tmp_path, "s.qsx", "[system]\n[field]\nB0 = 0.35 T\n[endor]\nfields = edmr\n")
    assert run(["spectrum", "--config", cfg, "--out", tmp_path / "s"]) == 0
    files = sorted((tmp_path / "s").glob("*.json"))
    files = [f for f in files if f.name != "manifest.json"]
    assert run(["fit", "--model", "gn", "--data", *files, "--out", tmp_path / "f"]) == 0
    rep = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert rep["estimates"]["g_n"] == pytest.approx(0.9558, abs=1e-5)
    assert rep["derived"]["chemical_shift"] == pytest.approx(-0.0040, abs=3e-4)
    assert "g_n = 0.9558" in capsys.readouterr().out
    csvs = [f.with_suffix(".csv") for f in files]
    assert run(["fit", "--model", "gn", "--data", *csvs, "--out", tmp_path / "f2"]) == 4
    b0 = [json.loads(f.read_text())["meta"]["B0_T"] for f in files]
    assert run(["fit", "--model", "gn", "--data", *csvs, "--b0", *b0, "--out", tmp_path / "f2"]) == 0


def test_fit_angular(tmp_path):
    theta = np.radians(np.linspace(0, 90, 7))
    shift = angular_model(theta, 2.55e5, 2.549986e6, "outer+")
    data = write(tmp_path, "a.csv", "theta_rad,shift_Hz\n" + "".join(f"{float(t)!r},{float(s)!r}\n" for t, s in zip(theta, shift)))
    assert run(["fit", "--model", "angular1", "--data", data, "--f0", 2.549986e6, "--out", tmp_path / "f"]) == 0
    rep = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert rep["estimates"]["f_Q"] == pytest.approx(2.55e5, rel=1e-6)
    assert run(["fit", "--model", "angular1", "--data", data, "--out", tmp_path / "g"]) == 2


def test_fit_schema_errors(tmp_path):
    empty = write(tmp_path, "e.csv", "")
    assert run(["fit", "--model", "scaling", "--data", empty, "--out", tmp_path / "f"]) == 4
    wrong = write(tmp_path, "w.csv", "a,b\n1,2\n")
    assert run(["fit", "--model", "scaling", "--data", wrong, "--out", tmp_path / "f"]) == 4
    text = write(tmp_path, "t.csv", "n,T2_s\n1,abc\n")
    assert run(["fit", "--model", "scaling", "--data", text, "--out", tmp_path / "f"]) == 4
    header_only = write(tmp_path, "h.csv", "n,T2_s\n")
    assert run(["fit", "--model", "scaling", "--data", header_only, "--out", tmp_path / "f"]) == 4
    neg = write(tmp_path, "n.csv", "n,T2_s\n1,0.1\n2,-1\n")
    assert run(["fit", "--model", "scaling", "--data", neg, "--out", tmp_path / "f"]) == 4
    assert run(["fit", "--model", "scaling", "--out", tmp_path / "f"]) == 4
    assert run(["fit", "--model", "gn", "--data", tmp_path / "missing.json", "--out", tmp_path / "f"]) == 4


def test_fit_scaling(tmp_path):
    data = write(tmp_path, "s.csv", "n,T2_s\n1,0.044\n32,0.275\n")
    assert run(["fit", "--model", "scaling", "--data", data, "--out", tmp_path / "f"]) == 0
    rep = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert rep["estimates"]["exponent"] == pytest.approx(0.5288, abs=1e-4)
    assert rep["sigmas"]["exponent"] is None


def test_forecast(tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["forecast", "--config", CONFIGS / "piezo111.qsx", "--out", out, "--format", "json"]) == 0
    rep = json.loads((out / "forecast.json").read_text())
    assert rep["geometry"] == "stack-111"
    assert 13e3 <= rep["outer_shift_Hz"] <= 23e3
    assert "kHz" in capsys.readouterr().out
    assert run(["forecast", "--config", CONFIGS / "piezo111.qsx", "--out", out, "--eps", 0.01]) == 3
    assert run(["forecast", "--config", CONFIGS / "unstrained.qsx", "--out", out]) == 2


def test_partial_run_marked(tmp_path, monkeypatch):
    calls = {"n": 0}
    original = cli._check_finite

    def flaky(rows):
        calls["n"] += 1
        if calls["n"] == 2:
            raise cli.CliError(cli.EXIT_NUMERIC, "non-finite value in output")
        return original(rows)

    monkeypatch.setattr(cli, "_check_finite", flaky)
    out = tmp_path / "o"
    assert run(["spectrum", "--config", CONFIGS / "unstrained.qsx", "--out", out]) == 3
    m = manifest(out)
    assert m["status"] == "partial" and len(m["outputs"]) == 2


def test_finite_check():
    with pytest.raises(cli.CliError) as exc:
        cli._check_finite([[1.0, float("nan")]])
    assert exc.value.code == 3


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "quadtune.cli", "forecast", "--config", str(CONFIGS / "piezo111.qsx"),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "stack-111" in res.stdout
