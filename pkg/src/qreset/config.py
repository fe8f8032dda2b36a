"""Run configuration: flat key-value text with section headers, strict schema.

Laboratory units at the boundary (GHz for splittings as omega/2pi, MHz for
couplings and the static rate, mK for temperature, ns for times); angular
frequencies internally.  Unknown sections or keys are rejected before any
computation starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .constants import TWO_PI, ghz_to_angular
from .controls import CHANNELS
from .params import CircuitParams


class ConfigError(ValueError):
    pass


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _str_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _axis(s):
    """start:stop:count axis specification in lab units."""
    parts = s.split(":")
    if len(parts) != 3:
        raise ValueError(f"axis must be start:stop:count, got {s!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 2 or stop <= start:
        raise ValueError(f"bad axis {s!r}")
    return (start, stop, count)


_SCHEMA = {
    "device": {
        "omega_L0_GHz": _float, "omega_R0_GHz": _float, "omega_q0_GHz": _float,
        "g_LR0_MHz": _float, "g_Rq_MHz": _float, "gamma0_MHz": _float,
        "T_env_mK": _float,
    },
    "grid": {"dt_ns": _float, "tau_ns": _float},
    "protocol": {"kind": str, "t_ramp_ns": _float},
    "optimize": {
        "active": _str_list, "max_iter": _int, "stop_alpha": _float,
        "stop_delta_J": _float, "update_target_MHz": _float,
        "lambda_accel": _float, "lambda_backoff": _float,
        "update_gain_margin": _float, "step_bound": _float,
        "lambda_L": _float, "lambda_R": _float,
        "lambda_q": _float, "shape_ramp_ns": _float, "substeps": _int,
    },
    "sweep": {"taus_ns": _float_list, "optimize": _bool},
    "rates_map": {"omega_L_GHz": _axis, "omega_R_GHz": _axis,
                  "omega_q_GHz": _float_list},
    "spectrum": {"window_ns": _float_list, "channel": str},
    "run": {"seed": _int, "output_dir": str},
}

_DEFAULTS = {
    "grid": {"dt_ns": 0.05, "tau_ns": 1500.0},
    "protocol": {"kind": "sr", "t_ramp_ns": 1.0},
    "optimize": {"active": ["L"], "max_iter": 100, "stop_alpha": 1e-8,
                 "stop_delta_J": 1e-12, "update_target_MHz": 1.0,
                 "lambda_accel": 1.0, "lambda_backoff": 4.0,
                 "update_gain_margin": 1.05, "step_bound": 0.045,
                 "shape_ramp_ns": 5.0},
    "sweep": {"taus_ns": [500.0, 1000.0, 1500.0, 2000.0], "optimize": False},
    "rates_map": {"omega_L_GHz": (8.5, 12.5, 201),
                  "omega_R_GHz": (8.5, 12.5, 201),
                  "omega_q_GHz": [9.0, 9.5, 10.0]},
    "spectrum": {"window_ns": [], "channel": "L"},
    "run": {"seed": 0, "output_dir": "out"},
}


@dataclass
class RunConfig:
    """Validated configuration of one command invocation."""

    device: dict
    grid: dict
    protocol: dict
    optimize: dict
    sweep: dict
    rates_map: dict
    spectrum: dict
    run: dict = field(default_factory=dict)

    @property
    def params(self) -> CircuitParams:
        d = self.device
        return CircuitParams.from_lab_units(
            omega_L0_GHz=d["omega_L0_GHz"],
            omega_R0_GHz=d["omega_R0_GHz"],
            omega_q0_GHz=d["omega_q0_GHz"],
            g_LR0_MHz=d["g_LR0_MHz"],
            g_Rq_MHz=d["g_Rq_MHz"],
            gamma0_MHz=d["gamma0_MHz"],
            T_env_mK=d["T_env_mK"],
        )

    @property
    def tau(self) -> float:
        return self.grid["tau_ns"] * 1e-9

    @property
    def dt(self) -> float:
        return self.grid["dt_ns"] * 1e-9

    @property
    def t_ramp(self) -> float:
        return self.protocol["t_ramp_ns"] * 1e-9

    def map_axes(self):
        ax = self.rates_map
        import numpy as np

        wL = ghz_to_angular(1.0) * np.linspace(*ax["omega_L_GHz"][:2],
                                               ax["omega_L_GHz"][2])
        wR = ghz_to_angular(1.0) * np.linspace(*ax["omega_R_GHz"][:2],
                                               ax["omega_R_GHz"][2])
        wq = ghz_to_angular(1.0) * np.asarray(ax["omega_q_GHz"])
        return wL, wR, wq

    def krotov_config(self):
        from .krotov import KrotovConfig

        o = self.optimize
        lambdas = {}
        for ch in CHANNELS:
            key = f"lambda_{ch}"
            if key in o:
                lambdas[ch] = o[key]
        return KrotovConfig(
            lambdas=lambdas or None,
            update_target=TWO_PI * o["update_target_MHz"] * 1e6,
            shape_ramp=o["shape_ramp_ns"] * 1e-9,
            max_iter=o["max_iter"],
            stop_delta_J=o["stop_delta_J"],
            stop_alpha=o["stop_alpha"],
            substeps=o.get("substeps"),
            step_bound=o["step_bound"],
            lambda_accel=o["lambda_accel"],
            lambda_backoff=o["lambda_backoff"],
            update_gain_margin=o["update_gain_margin"],
        )


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (unit suffixes)
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    sections = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {path}")
        schema = _SCHEMA[section]
        values = {}
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[key] = schema[key](raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {key!r} in [{section}]: {exc}") from exc
        sections[section] = values
    if "device" not in sections:
        raise ConfigError("config must contain a [device] section")
    missing = set(_SCHEMA["device"]) - set(sections["device"])
    if missing:
        raise ConfigError(f"[device] is missing keys: {sorted(missing)}")
    merged = {}
    for name in _SCHEMA:
        merged[name] = dict(_DEFAULTS.get(name, {}))
        merged[name].update(sections.get(name, {}))
    active = merged["optimize"]["active"]
    unknown = set(active) - set(CHANNELS)
    if unknown:
        raise ConfigError(f"unknown active channels {sorted(unknown)}")
    kind = merged["protocol"]["kind"]
    if kind not in ("sr", "cp") and not kind.startswith("file:"):
        raise ConfigError(f"protocol kind must be sr, cp or file:<path>, got {kind!r}")
    return RunConfig(**merged)
