"""Physical constants and unit helpers.

All internal frequencies are angular (rad/s); bath temperature is stored
pre-converted to an angular frequency scale theta = k_B * T / hbar so that no
physical constants appear in numerical hot paths.
"""

TWO_PI = 6.283185307179586476925287

# CODATA / exact-SI values, fixed here so unit conversion is reproducible.
K_BOLTZMANN = 1.380649e-23  # J/K (exact)
HBAR = 1.054571817e-34  # J*s (CODATA 2018)
KB_OVER_HBAR = K_BOLTZMANN / HBAR  # rad/s per kelvin


def ghz_to_angular(f_ghz: float) -> float:
    """Convert a frequency given as (omega / 2 pi) in GHz to rad/s."""
    return TWO_PI * f_ghz * 1e9


def mhz_to_angular(f_mhz: float) -> float:
    """Convert a frequency given as (omega / 2 pi) in MHz to rad/s."""
    return TWO_PI * f_mhz * 1e6


def mk_to_theta(t_mk: float) -> float:
    """Convert a temperature in mK to k_B*T/hbar in rad/s."""
    return KB_OVER_HBAR * t_mk * 1e-3
