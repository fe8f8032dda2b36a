"""Batch front-end: config-driven subcommands emitting CSV/JSON artifacts.

Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io as qio
from .analysis import (
    SweepResult,
    field_spectrum,
    integrated_rates,
    rates_map,
    threshold_crossing,
)
from .config import ConfigError, RunConfig, load_config
from .constants import TWO_PI
from .controls import ControlSet
from .kernels import NearDegeneracyError
from .krotov import MonotonicityError, optimize
from .propagation import StepSizeError, excited_basis_projectors, propagate_forward
from .protocols import (
    OperationPointError,
    cp_protocol,
    solve_operation_points,
    sr_protocol,
    sr_spec,
)

_NUMERICAL_ERRORS = (
    NearDegeneracyError, OperationPointError, MonotonicityError, StepSizeError,
    FloatingPointError,
)


def _build_protocol(cfg: RunConfig, tau=None) -> ControlSet:
    kind = cfg.protocol["kind"]
    tau = cfg.tau if tau is None else tau
    params = cfg.params
    active = tuple(cfg.optimize["active"])
    if kind == "sr":
        spec = sr_spec(params, tau, cfg.t_ramp)
        return sr_protocol(spec, params, grid=cfg.dt, active=active)
    if kind == "cp":
        return cp_protocol(params, tau, cfg.t_ramp, grid=cfg.dt, active=active)
    path = kind[len("file:"):]
    try:
        controls = qio.controls_from_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read protocol file {path!r}: {exc}") from exc
    return controls


def cmd_simulate(cfg: RunConfig, out: str, threads: int) -> int:
    controls = _build_protocol(cfg)
    traj = propagate_forward(excited_basis_projectors(), controls, cfg.params,
                             substeps=cfg.optimize.get("substeps"))
    alpha = float(1.0 - traj.final[:, 0, 0].real.mean())
    qio.trajectory_to_csv(traj, f"{out}/trajectory.csv")
    qio.controls_to_csv(controls, f"{out}/controls.csv")
    qio.write_json(f"{out}/summary.json", {
        "alpha_tau": alpha,
        "tau_ns": cfg.grid["tau_ns"],
        "protocol": cfg.protocol["kind"],
        "integrated_rates": integrated_rates(controls, cfg.params).tolist(),
    })
    return 0


def cmd_optimize(cfg: RunConfig, out: str, threads: int) -> int:
    guess = _build_protocol(cfg)
    record = optimize(guess, cfg.krotov_config(), cfg.params)
    qio.record_to_json(record, f"{out}/record.json")
    qio.controls_to_csv(record.final_controls, f"{out}/fields.csv")
    qio.write_json(f"{out}/summary.json", {
        "guess_alpha": record.guess_alpha,
        "alpha_tau": record.alpha,
        "iterations": len(record.iterations),
        "stop_reason": record.stop_reason,
        "monotonic": record.is_monotonic(),
    })
    return 0


def cmd_sweep(cfg: RunConfig, out: str, threads: int) -> int:
    taus = [t * 1e-9 for t in cfg.sweep["taus_ns"]]
    params = cfg.params

    def one(tau):
        controls = _build_protocol(cfg, tau=tau)
        from .propagation import reset_error

        alpha = reset_error(controls, params,
                            substeps=cfg.optimize.get("substeps"))
        if cfg.sweep["optimize"]:
            rec = optimize(controls, cfg.krotov_config(), params)
            return alpha, rec.alpha
        return alpha, None

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        results = list(pool.map(one, taus))
    label = cfg.protocol["kind"]
    alpha = {label: np.array([r[0] for r in results])}
    if cfg.sweep["optimize"]:
        alpha[f"{label}-optimized"] = np.array([r[1] for r in results])
    sweep = SweepResult(taus=np.asarray(taus), alpha=alpha)
    qio.sweep_to_csv(sweep, f"{out}/sweep.csv")
    qio.write_json(f"{out}/crossings.json", {
        "level": 1e-4,
        "tau_star_ns": {
            lbl: (None if v is None else v * 1e9)
            for lbl, v in threshold_crossing(sweep, 1e-4).items()
        },
    })
    return 0


def cmd_rates_map(cfg: RunConfig, out: str, threads: int) -> int:
    wL, wR, wq = cfg.map_axes()
    params = cfg.params

    def panel(w):
        return rates_map(wL, wR, [w], params)[0]

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        panels = list(pool.map(panel, wq))
    gam = np.stack(panels)
    qio.rates_map_to_csv(gam, wL, wR, wq, f"{out}/rates_map.csv")
    qio.write_json(f"{out}/rates_map_meta.json", {
        "per_rate_max": gam.reshape(-1, 3).max(axis=0).tolist(),
        "omega_q_GHz": (wq / TWO_PI / 1e9).tolist(),
    })
    return 0


def cmd_spectrum(cfg: RunConfig, out: str, threads: int) -> int:
    controls = _build_protocol(cfg)
    window_ns = cfg.spectrum["window_ns"]
    if len(window_ns) != 2:
        raise ConfigError("[spectrum] window_ns must be 'start,stop'")
    window = (window_ns[0] * 1e-9, window_ns[1] * 1e-9)
    spec = field_spectrum(controls, window, cfg.params,
                          channel=cfg.spectrum["channel"])
    qio.spectrum_to_csv(spec, f"{out}/spectrum.csv",
                        sidecar_path=f"{out}/spectrum_markers.json")
    return 0


def cmd_operation_points(cfg: RunConfig, out: str, threads: int) -> int:
    wp, wm = solve_operation_points(cfg.params)
    qio.write_json(f"{out}/operation_points.json", {
        "omega_plus_GHz": wp / TWO_PI / 1e9,
        "omega_minus_GHz": wm / TWO_PI / 1e9,
        "omega_plus_rad_s": wp,
        "omega_minus_rad_s": wm,
    })
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "rates-map": cmd_rates_map,
    "spectrum": cmd_spectrum,
    "operation-points": cmd_operation_points,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qreset",
        description="Reset-protocol simulation and optimal control studies",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="configuration file")
    parser.add_argument("--output", default=None,
                        help="output directory (overrides [run] output_dir)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweeps and maps")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.output or cfg.run["output_dir"]
    try:
        return _COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
