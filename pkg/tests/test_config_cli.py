import json

import numpy as np
import pytest

from kdvdelay.cli import main, run_sweep, sweep_points
from kdvdelay.config import (ConfigError, build_certificate_from, build_profile, build_simulation,
                             default_dt, dumps, load_config, parse_override, resolve, sweep_axes)
from kdvdelay.exports import read_kv, read_record_csv

FIG = """
[domain]
L = 5.0
[gains]
alpha = 1.0
beta = 0.5
[delay]
kind = "sinusoidal"
mean = 2.0
amplitude = 0.5
frequency = 1.0
M = 3.0
d = 0.5
"""


@pytest.fixture
def fig_toml(tmp_path):
    p = tmp_path / "fig1.toml"
    p.write_text(FIG)
    return p


def _cli(*args):
    return main([str(a) for a in args])


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg["grid"]["nx"] == 256 and cfg["time"]["horizon"] == 600.0
        assert cfg["time"]["dt"] == default_dt(5.0, 256) == min(0.25 * 5 / 256, 0.01)
        assert cfg["scheme"]["theta"] == 0.5

    def test_derived_delay_bounds(self, fig_toml):
        dl = load_config(fig_toml)["delay"]
        assert (dl["tau0"], dl["M"], dl["d"]) == (1.5, 3.0, 0.5)

    @pytest.mark.parametrize("bad", ["[domain]\nlength = 5\n", "[mesh]\nnx = 4\n", "[grid]\nnx = 1.5\n",
                                     "[scheme]\nnonlinear = 1\n"])
    def test_rejects(self, tmp_path, bad):
        p = tmp_path / "bad.toml"
        p.write_text(bad)
        with pytest.raises(ConfigError):
            load_config(p)

    def test_override_and_preset(self, fig_toml):
        cfg = load_config(fig_toml, ["gains.alpha=1.5", "ic.kind=compatible"], "coarse")
        assert cfg["gains"]["alpha"] == 1.5 and cfg["ic"]["kind"] == "compatible"
        assert cfg["grid"]["nx"] == 64 and cfg["time"]["dt"] == default_dt(5.0, 64)

    @pytest.mark.parametrize("text", ["alpha", "alpha=1", "a.b.c=1"])
    def test_bad_override(self, text):
        with pytest.raises(ConfigError):
            parse_override(text)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_config(None, (), "huge")

    def test_constant_delay_needs_tau0(self):
        with pytest.raises(ConfigError):
            resolve({"delay": {"kind": "constant"}})

    def test_dumps_roundtrip(self, fig_toml, tmp_path):
        cfg = load_config(fig_toml, ["sweep.alpha=[0.5, 1.0]"])
        p = tmp_path / "again.toml"
        p.write_text(dumps(cfg))
        assert load_config(p) == cfg

    def test_tabulated_profile(self, tmp_path):
        t = np.linspace(0, 50, 501)
        np.savetxt(tmp_path / "tau.csv", np.column_stack([t, 2 + 0.5 * np.sin(t)]), delimiter=",",
                   header="t,tau")
        cfg = resolve({"delay": {"kind": "tabulated", "file": "tau.csv", "M": 3.0, "d": 0.5}})
        p = build_profile(cfg, tmp_path)
        assert p.tau(1.0) == pytest.approx(2 + 0.5 * np.sin(1.0), abs=1e-5)

    def test_certificate_variants(self, fig_toml):
        cfg = load_config(fig_toml)
        prof = build_profile(cfg)
        a = build_certificate_from(cfg, prof)
        cfg["certificate"]["variant"] = "theorem"
        b = build_certificate_from(cfg, prof)
        assert a.mu1 == b.mu1 and b.lam >= a.lam
        cfg["certificate"].update(mu1=0.04)
        assert build_certificate_from(cfg, prof).mu2 == pytest.approx(0.2, rel=1e-12)

    def test_build_simulation(self, fig_toml):
        sim = build_simulation(load_config(fig_toml, ["scheme.theta=0.55"], "coarse"))
        assert sim.nx == 64 and sim.scheme.theta == 0.55 and sim.profile.M == 3.0

    def test_sweep_axes(self):
        cfg = resolve({"sweep": {"alpha": ["linspace", 0.3, 2.0, 18], "beta": [0.5]}})
        axes = {a.name: a.values for a in sweep_axes(cfg)}
        assert len(axes["alpha"]) == 18 and axes["beta"] == (0.5,)
        with pytest.raises(ConfigError):
            sweep_axes(resolve({"sweep": {"d": ["logspace", 0, 1, 3]}}))


class TestSweep:
    def test_feasibility_threshold(self, fig_toml):
        cfg = load_config(fig_toml, ["sweep.alpha=[\"linspace\", 0.3, 2.0, 35]"])
        rows = run_sweep(cfg, workers=1)
        for r in rows:
            assert r["feasible"] == (r["alpha"] > 0.75)

    def test_lambda_collapses_at_delay_limit(self, fig_toml):
        # fixed gains admit d < 1 - |beta|/(2 alpha - |beta|) = 10/11 here
        cfg = load_config(fig_toml, ["gains.alpha=3.0", "sweep.d=[0.0, 0.3, 0.5, 0.7, 0.8, 0.85, 0.9, 0.909]"])
        lam = [r["lambda"] for r in run_sweep(cfg, workers=1)]
        assert all(np.diff(lam) < 0) and lam[-1] < 0.01 * lam[0]

    def test_cap(self, fig_toml):
        cfg = load_config(fig_toml, ["sweep.alpha=[\"linspace\", 1, 2, 200]",
                                     "sweep.beta=[\"linspace\", 0, 0.1, 200]"])
        with pytest.raises(ConfigError, match="cap"):
            sweep_points(cfg)

    def test_parallel_matches_serial(self, fig_toml):
        cfg = load_config(fig_toml, ["sweep.alpha=[1.2, 0.5, 2.0, 0.9]", "sweep.L=[4.0, 5.0]"])
        def fmt(rows):
            return [repr(sorted(r.items())) for r in rows]
        assert fmt(run_sweep(cfg, workers=2)) == fmt(run_sweep(cfg, workers=1))


class TestCli:
    def test_certify(self, fig_toml, tmp_path, capsys):
        assert _cli("certify", "--config", fig_toml, "--out", tmp_path / "c") == 0
        kv = read_kv(tmp_path / "c" / "certificate.txt")
        assert kv["feasible"] == "true" and float(kv["lambda"]) == pytest.approx(0.0071089, abs=1e-7)
        assert json.loads((tmp_path / "c" / "manifest.json").read_text())["command"] == "certify"

    def test_long_domain_is_infeasible(self, fig_toml, tmp_path):
        assert _cli("certify", "--config", fig_toml, "--out", tmp_path, "--override", "domain.L=6.0") == 1

    def test_unknown_key_exit_two(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[gains]\ngamma = 1.0\n")
        assert _cli("certify", "--config", p, "--out", tmp_path) == 2
        assert _cli("certify", "--config", tmp_path / "missing.toml", "--out", tmp_path) == 2

    def test_optimize(self, fig_toml, tmp_path):
        assert _cli("optimize", "--config", fig_toml, "--out", tmp_path) == 0
        data = np.loadtxt(tmp_path / "figure1.dat", comments="#")
        kv = read_kv(tmp_path / "optimum.txt")
        k = np.argmax(data[:, 3])
        assert abs(float(kv["mu1"]) - data[k, 0]) <= data[1, 0] - data[0, 0]
        assert (tmp_path / "figure1.gp").read_text().count("figure1.dat") == 3

    def test_optimize_beta_zero(self, fig_toml, tmp_path):
        assert _cli("optimize", "--config", fig_toml, "--out", tmp_path, "--override", "gains.beta=0.0") == 1

    def test_simulate_and_rerun_from_manifest(self, fig_toml, tmp_path):
        args = ["--config", fig_toml, "--override", "time.horizon=5.0", "--override", "grid.nx=32",
                "--override", "grid.nrho=32"]
        assert _cli("simulate", *args, "--out", tmp_path / "a") == 0
        kv = read_kv(tmp_path / "a" / "report.txt")
        assert kv["bound.pass"] == "true" and kv["label"] == "feedback"
        rec = read_record_csv(tmp_path / "a" / "record.csv")
        assert rec["t"][-1] == pytest.approx(5.0)
        assert _cli("simulate", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "record.csv").read_bytes() == (tmp_path / "b" / "record.csv").read_bytes()

    def test_simulate_conservative(self, fig_toml, tmp_path):
        code = _cli("simulate", "--config", fig_toml, "--out", tmp_path, "--override", "gains.alpha=0.0",
                    "--override", "gains.beta=0.0", "--override", "time.horizon=1.0",
                    "--override", "grid.nx=16", "--override", "grid.nrho=16")
        kv = read_kv(tmp_path / "report.txt")
        assert code == 0 and kv["label"] == "conservative" and kv["lambda_fit"] == "n/a"

    def test_simulate_nonlinear_reports_picard(self, fig_toml, tmp_path):
        assert _cli("simulate", "--config", fig_toml, "--out", tmp_path, "--override", "scheme.nonlinear=true",
                    "--override", "ic.amplitude=0.01", "--override", "time.horizon=1.0",
                    "--override", "grid.nx=16", "--override", "grid.nrho=16") == 0
        assert int(read_kv(tmp_path / "report.txt")["picard_max"]) <= 10

    def test_compare_channels_zero_ic(self, fig_toml, tmp_path):
        assert _cli("compare-channels", "--config", fig_toml, "--out", tmp_path, "--override", "ic.kind=zero",
                    "--override", "time.horizon=2.0", "--override", "grid.nx=16",
                    "--override", "grid.nrho=16") == 0
        kv = read_kv(tmp_path / "channels.txt")
        assert float(kv["trace_sup_abs"]) == 0.0 and float(kv["energy_sup_abs"]) == 0.0

    def test_sweep_determinism_and_empty(self, fig_toml, tmp_path):
        args = ["sweep", "--config", fig_toml, "--override", "sweep.alpha=[0.5, 1.0, 1.5]",
                "--override", "sweep.d=[0.2, 0.5]"]
        assert _cli(*args, "--out", tmp_path / "s1") == 0
        assert _cli(*args, "--out", tmp_path / "s2") == 0
        assert (tmp_path / "s1" / "sweep.csv").read_bytes() == (tmp_path / "s2" / "sweep.csv").read_bytes()
        assert _cli("sweep", "--config", fig_toml, "--override", "sweep.alpha=[]", "--out", tmp_path / "e") == 0
        lines = (tmp_path / "e" / "sweep.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("alpha,")
