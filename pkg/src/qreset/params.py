"""Static device parameters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .constants import ghz_to_angular, mhz_to_angular, mk_to_theta


class ModelValidityWarning(UserWarning):
    """Parameter regime strains an approximation baked into the model."""


@dataclass(frozen=True)
class CircuitParams:
    """Device constants of the qubit + two-resonator reset circuit.

    All frequencies and couplings are angular (rad/s).  ``gamma0`` is the
    static decay-rate prefactor in 1/s.  ``theta_env`` is the bath temperature
    expressed as k_B*T/hbar in rad/s.
    """

    omega_L0: float
    omega_R0: float
    omega_q0: float
    g_LR0: float
    g_Rq: float
    gamma0: float
    theta_env: float

    def __post_init__(self):
        for name in ("omega_L0", "omega_R0", "omega_q0", "g_LR0", "g_Rq",
                     "gamma0", "theta_env"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"CircuitParams.{name} must be strictly positive")
        # Rotating-wave validity: g_Rq < g_LR0 and both far below omega_R0.
        if self.g_Rq >= self.g_LR0 or self.g_LR0 >= self.omega_R0 / 10.0:
            warnings.warn(
                "coupling hierarchy g_Rq < g_LR0 << omega_R0 violated; the "
                "excitation-conserving model may not be adequate",
                ModelValidityWarning,
                stacklevel=2,
            )

    @classmethod
    def from_lab_units(
        cls,
        omega_L0_GHz: float,
        omega_R0_GHz: float,
        omega_q0_GHz: float,
        g_LR0_MHz: float,
        g_Rq_MHz: float,
        gamma0_MHz: float,
        T_env_mK: float,
    ) -> "CircuitParams":
        """Build from laboratory units.

        Oscillator/qubit frequencies and couplings are given as (omega/2pi);
        gamma0 is a plain rate in MHz (no 2pi factor); temperature in mK.
        """
        return cls(
            omega_L0=ghz_to_angular(omega_L0_GHz),
            omega_R0=ghz_to_angular(omega_R0_GHz),
            omega_q0=ghz_to_angular(omega_q0_GHz),
            g_LR0=mhz_to_angular(g_LR0_MHz),
            g_Rq=mhz_to_angular(g_Rq_MHz),
            gamma0=gamma0_MHz * 1e6,
            theta_env=mk_to_theta(T_env_mK),
        )

    @classmethod
    def defaults(cls) -> "CircuitParams":
        """Reference circuit-QED operating point used throughout the tests."""
        return cls.from_lab_units(
            omega_L0_GHz=11.5,
            omega_R0_GHz=10.0,
            omega_q0_GHz=9.5,
            g_LR0_MHz=74.0,
            g_Rq_MHz=68.0,
            gamma0_MHz=31.0,
            T_env_mK=10.0,
        )
