"""Deterministic file emitters and the control-file schema.

All writers produce byte-identical output for identical inputs (fixed float
formatting, no timestamps) and write atomically via a temporary file and
rename.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .controls import CHANNELS, ControlSet

_FMT = "%.17g"


def _fmt(x) -> str:
    return _FMT % float(x)


def _atomic_write(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows, comments=()):
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def trajectory_to_csv(traj, path):
    """Mean populations, rates and controls along the grid.

    Populations are averaged over the propagated stack (for the reset
    ensemble the mean ground population is 1 - alpha(t)).
    """
    pops = traj.populations.mean(axis=1)
    ctl = traj.controls
    rows = []
    for k in range(traj.times.size):
        rows.append([
            traj.times[k] * 1e9,
            pops[k, 0], pops[k, 1], pops[k, 2], pops[k, 3],
            traj.rates[k, 0], traj.rates[k, 1], traj.rates[k, 2],
            ctl.omega_L[k], ctl.omega_R[k], ctl.omega_q[k],
        ])
    write_csv(
        path,
        ["t_ns", "p0", "p1", "p2", "p3",
         "Gamma10", "Gamma20", "Gamma30", "omegaL", "omegaR", "omegaq"],
        rows,
        comments=["units: t in ns; rates in 1/s; splittings in rad/s",
                  "populations averaged over the propagated initial states"],
    )


def controls_to_csv(controls: ControlSet, path):
    active = ",".join(sorted(controls.active))
    rows = []
    for k in range(controls.times.size):
        rows.append([
            controls.times[k] * 1e9,
            controls.omega_q[k], controls.omega_R[k], controls.omega_L[k],
        ])
    write_csv(
        path,
        ["t_ns", "omegaq", "omegaR", "omegaL"],
        rows,
        comments=["units: t in ns; splittings in rad/s",
                  f"active: {active}"],
    )


def controls_from_csv(path) -> ControlSet:
    active = frozenset({"L"})
    header = None
    data = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("active:"):
                    names = [s.strip() for s in body[len("active:"):].split(",")]
                    active = frozenset(n for n in names if n)
                continue
            if header is None:
                header = [h.strip() for h in line.split(",")]
                continue
            data.append([float(x) for x in line.split(",")])
    if header is None or not data:
        raise ValueError(f"control file {path!r} has no data")
    expected = ["t_ns", "omegaq", "omegaR", "omegaL"]
    if header != expected:
        raise ValueError(f"control file columns must be {expected}, got {header}")
    arr = np.asarray(data)
    unknown = active - set(CHANNELS)
    if unknown:
        raise ValueError(f"control file marks unknown channels {sorted(unknown)}")
    return ControlSet(arr[:, 0] * 1e-9, arr[:, 1], arr[:, 2], arr[:, 3], active)


def sweep_to_csv(result, path):
    labels = sorted(result.alpha)
    rows = []
    for i, tau in enumerate(result.taus):
        rows.append([tau * 1e9] + [result.alpha[lbl][i] for lbl in labels])
    write_csv(path, ["tau_ns"] + [f"alpha_{lbl}" for lbl in labels], rows)


def rates_map_to_csv(gam, omega_L_grid, omega_R_grid, omega_q_values, path):
    rows = []
    for iq, wq in enumerate(omega_q_values):
        for ir, wr in enumerate(omega_R_grid):
            for il, wl in enumerate(omega_L_grid):
                g = gam[iq, ir, il]
                rows.append([wl, wr, wq, g[0], g[1], g[2]])
    write_csv(
        path,
        ["omegaL", "omegaR", "omegaq", "Gamma10", "Gamma20", "Gamma30"],
        rows,
        comments=["units: splittings in rad/s; rates in 1/s"],
    )


def spectrum_to_csv(spec, path, sidecar_path=None):
    rows = [[f * 1e-6, a] for f, a in zip(spec.freqs, spec.amplitude)]
    write_csv(path, ["freq_MHz", "amplitude"], rows,
              comments=[f"channel: {spec.channel}"])
    if sidecar_path is not None:
        write_json(sidecar_path, {
            "channel": spec.channel,
            "markers_MHz": [f * 1e-6 for f in spec.markers.tolist()],
            "n_samples": spec.n_samples,
        })


def record_to_json(record, path):
    write_json(path, record.to_dict())
