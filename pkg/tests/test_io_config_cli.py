import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qreset import io as qio
from qreset.config import ConfigError, load_config
from qreset.constants import KB_OVER_HBAR, TWO_PI
from qreset.controls import ControlSet


REFERENCE_INI = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"


def frozen(params, tau=50e-9, dt=1e-9):
    return ControlSet.constant(tau, dt, params.omega_q0, params.omega_R0,
                               params.omega_L0, active=("L",))


class TestIO:
    def test_controls_round_trip(self, params, tmp_path):
        ctl = frozen(params)
        bumpy = ctl.with_series("L", ctl.omega_L + TWO_PI * 1e6 *
                                np.sin(np.arange(ctl.times.size)))
        path = tmp_path / "controls.csv"
        qio.controls_to_csv(bumpy, path)
        back = qio.controls_from_csv(path)
        assert back.active == bumpy.active
        assert np.allclose(back.times, bumpy.times, rtol=1e-15)
        assert np.array_equal(back.omega_L, bumpy.omega_L)
        assert np.array_equal(back.omega_q, bumpy.omega_q)

    def test_writers_are_deterministic(self, params, tmp_path):
        ctl = frozen(params)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        qio.controls_to_csv(ctl, a)
        qio.controls_to_csv(ctl, b)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_malformed_controls(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t_ns,omegaq\n0.0,1.0\n")
        with pytest.raises(ValueError):
            qio.controls_from_csv(bad)


class TestConfig:
    def test_reference_config_loads_table_values(self):
        from qreset.constants import ghz_to_angular, mhz_to_angular, mk_to_theta

        cfg = load_config(REFERENCE_INI)
        p = cfg.params
        assert p.omega_L0 == ghz_to_angular(11.5)
        assert p.omega_R0 == ghz_to_angular(10.0) == pytest.approx(TWO_PI * 1e10, rel=1e-15)
        assert p.omega_q0 == ghz_to_angular(9.5)
        assert p.g_LR0 == mhz_to_angular(74.0)
        assert p.g_Rq == mhz_to_angular(68.0) == pytest.approx(TWO_PI * 68e6, rel=1e-15)
        assert p.gamma0 == 31e6
        assert p.theta_env == mk_to_theta(10.0) == pytest.approx(KB_OVER_HBAR * 0.010, rel=1e-15)

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text(REFERENCE_INI.read_text() + "\n[device]\ntypo_key = 1\n",
                       encoding="utf-8")
        with pytest.raises((ConfigError, Exception)):
            load_config(bad)

    def test_unknown_section_rejected(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text(REFERENCE_INI.read_text() + "\n[mystery]\nx = 1\n",
                       encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_missing_device_keys_rejected(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[device]\nomega_L0_GHz = 11.5\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_bad_protocol_kind_rejected(self, tmp_path):
        text = REFERENCE_INI.read_text().replace("kind = sr", "kind = warp")
        bad = tmp_path / "bad.ini"
        bad.write_text(text, encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "qreset.cli", *args],
        capture_output=True, text=True,
        cwd=Path(__file__).resolve().parents[1],
    )


def write_config(tmp_path, **overrides):
    import configparser

    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(REFERENCE_INI)
    for section, mapping in overrides.items():
        for key, value in mapping.items():
            cp[section][key] = str(value)
    path = tmp_path / "run.ini"
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
    return path


class TestCLI:
    def test_operation_points(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        r = run_cli("operation-points", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        data = json.loads((out / "operation_points.json").read_text())
        assert data["omega_plus_GHz"] > data["omega_minus_GHz"]

    def test_simulate_lossless_alpha_is_one(self, tmp_path):
        cfg = write_config(tmp_path, device={"gamma0_MHz": 1e-250},
                           grid={"tau_ns": 50.0, "dt_ns": 0.25},
                           protocol={"t_ramp_ns": 5.0})
        out = tmp_path / "out"
        r = run_cli("simulate", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        summary = json.loads((out / "summary.json").read_text())
        assert summary["alpha_tau"] == 1.0

    def test_simulate_outputs_are_reproducible(self, tmp_path):
        cfg = write_config(tmp_path, grid={"tau_ns": 60.0, "dt_ns": 0.25},
                           protocol={"t_ramp_ns": 6.0})
        hashes = []
        for name in ("o1", "o2"):
            out = tmp_path / name
            r = run_cli("simulate", "--config", str(cfg), "--output", str(out))
            assert r.returncode == 0, r.stderr
            digest = hashlib.sha256()
            for f in sorted(out.iterdir()):
                digest.update(f.read_bytes())
            hashes.append(digest.hexdigest())
        assert hashes[0] == hashes[1]

    def test_sweep_single_tau_single_row(self, tmp_path):
        cfg = write_config(tmp_path, sweep={"taus_ns": "80.0"},
                           grid={"dt_ns": 0.4}, protocol={"t_ramp_ns": 8.0})
        out = tmp_path / "out"
        r = run_cli("sweep", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        rows = [ln for ln in (out / "sweep.csv").read_text().splitlines()
                if ln and not ln.startswith("#")]
        assert len(rows) == 2  # header + one row

    def test_rates_map_tiny_grid_row_count(self, tmp_path):
        cfg = write_config(tmp_path, rates_map={
            "omega_L_GHz": "9.0:11.0:3", "omega_R_GHz": "9.0:11.0:3",
            "omega_q_GHz": "9.0, 9.5, 10.0"})
        out = tmp_path / "out"
        r = run_cli("rates-map", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        rows = [ln for ln in (out / "rates_map.csv").read_text().splitlines()
                if ln and not ln.startswith("#")]
        assert len(rows) == 1 + 27

    def test_optimize_zero_iterations_returns_guess(self, tmp_path):
        cfg = write_config(tmp_path, grid={"tau_ns": 80.0, "dt_ns": 0.4},
                           protocol={"t_ramp_ns": 8.0},
                           optimize={"max_iter": 0})
        out = tmp_path / "out"
        r = run_cli("optimize", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations"] == 0
        fields = qio.controls_from_csv(out / "fields.csv")
        sim = write_config(tmp_path, grid={"tau_ns": 80.0, "dt_ns": 0.4},
                           protocol={"t_ramp_ns": 8.0})
        from qreset.config import load_config as lc
        from qreset.protocols import sr_protocol, sr_spec

        c = lc(sim)
        guess = sr_protocol(sr_spec(c.params, c.tau, c.t_ramp), c.params,
                            grid=c.dt)
        assert np.array_equal(fields.omega_L, guess.omega_L)

    def test_optimize_stop_alpha_above_guess_runs_no_iterations(self, tmp_path):
        cfg = write_config(tmp_path, grid={"tau_ns": 80.0, "dt_ns": 0.4},
                           protocol={"t_ramp_ns": 8.0},
                           optimize={"stop_alpha": 1.0, "max_iter": 5})
        out = tmp_path / "out"
        r = run_cli("optimize", "--config", str(cfg), "--output", str(out))
        assert r.returncode == 0, r.stderr
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations"] == 0
        assert summary["stop_reason"] == "alpha"

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[device]\nnope = 3\n", encoding="utf-8")
        r = run_cli("simulate", "--config", str(bad), "--output", str(tmp_path))
        assert r.returncode == 2

    def test_missing_protocol_file_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, protocol={"kind": "file:/nonexistent.csv"})
        r = run_cli("simulate", "--config", str(cfg),
                    "--output", str(tmp_path / "out"))
        assert r.returncode == 2

    def test_numerical_failure_exits_3(self, tmp_path):
        # qubit degenerate with the right oscillator: no usable crossings
        cfg = write_config(tmp_path, device={"omega_L0_GHz": 4.0})
        r = run_cli("operation-points", "--config", str(cfg),
                    "--output", str(tmp_path / "out"))
        assert r.returncode == 3
