"""Sampled control fields on a uniform time grid."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

#: Canonical ordering of the control channels everywhere in the package:
#: index 0 = qubit splitting, 1 = right oscillator, 2 = left oscillator.
CHANNELS = ("q", "R", "L")


def uniform_grid(tau: float, dt: float) -> np.ndarray:
    """Time grid t_0 = 0 ... t_N = tau with step dt (N = round(tau/dt))."""
    n = int(round(tau / dt))
    if n < 1:
        raise ValueError("grid must contain at least one step")
    if abs(n * dt - tau) > 1e-9 * tau:
        raise ValueError(f"tau={tau} is not an integer multiple of dt={dt}")
    return np.linspace(0.0, tau, n + 1)


@dataclass(frozen=True)
class ControlSet:
    """Time series of the three level splittings omega_q/R/L(t).

    ``active`` marks the channels an optimizer may modify; inactive channels
    must be constant over the grid.
    """

    times: np.ndarray
    omega_q: np.ndarray
    omega_R: np.ndarray
    omega_L: np.ndarray
    active: frozenset = field(default_factory=lambda: frozenset({"L"}))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("times must be a 1-d grid with at least two points")
        steps = np.diff(times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("time grid must be uniform")
        for name in ("omega_q", "omega_R", "omega_L"):
            series = np.asarray(getattr(self, name), dtype=float)
            if series.ndim == 0:
                series = np.full(times.size, float(series))
            object.__setattr__(self, name, series)
            if series.shape != times.shape:
                raise ValueError(f"{name} must share the grid length")
            if not np.all(series > 0.0):
                raise ValueError(f"{name} must be strictly positive everywhere")
        unknown = set(self.active) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown active channels: {sorted(unknown)}")
        object.__setattr__(self, "active", frozenset(self.active))
        for ch in CHANNELS:
            if ch not in self.active:
                series = self.series(ch)
                if np.ptp(series) != 0.0:
                    raise ValueError(f"inactive control {ch} must be constant")

    @classmethod
    def constant(cls, tau, dt, omega_q, omega_R, omega_L, active=()):
        times = uniform_grid(tau, dt)
        return cls(times, omega_q, omega_R, omega_L, frozenset(active))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def tau(self) -> float:
        return float(self.times[-1])

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    def series(self, channel: str) -> np.ndarray:
        return getattr(self, f"omega_{channel}")

    def stacked(self) -> np.ndarray:
        """(3, N+1) array in channel order (q, R, L), C-contiguous."""
        return np.ascontiguousarray(
            np.vstack([self.omega_q, self.omega_R, self.omega_L])
        )

    def at(self, t: float) -> tuple[float, float, float]:
        """Linearly interpolated (omega_q, omega_R, omega_L) at time t."""
        return (
            float(np.interp(t, self.times, self.omega_q)),
            float(np.interp(t, self.times, self.omega_R)),
            float(np.interp(t, self.times, self.omega_L)),
        )

    def with_series(self, channel: str, series: np.ndarray) -> "ControlSet":
        series = np.asarray(series, dtype=float)
        return replace(self, **{f"omega_{channel}": series})

    @classmethod
    def from_stacked(cls, times, stacked, active=("L",)) -> "ControlSet":
        return cls(times, stacked[0], stacked[1], stacked[2], frozenset(active))
