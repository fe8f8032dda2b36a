"""Optimal reset of a superconducting qubit through a tunable dissipative bath.

A four-level model (joint ground state plus one-excitation subspace of a
qubit and two tunable resonators) evolves under a master equation whose decay
rates and jump operators follow the instantaneous eigensystem of the
controllable Hamiltonian.  The package provides the analytic reset protocols,
their optimization by a sequential monotonically convergent method, and the
derived studies (duration sweeps, rate maps, field spectra).
"""

from .controls import ControlSet, uniform_grid
from .kernels import BACKEND as kernel_backend
from .model import (
    EigenSystem,
    RateSet,
    build_hamiltonian,
    coupling_elements,
    decay_rates,
    detailed_balance_ratio,
    eigen_derivatives,
    eigensystem,
    eigensystem_at,
)
from .params import CircuitParams
from .propagation import (
    DensityMatrix,
    Trajectory,
    excited_basis_projectors,
    lindbladian_apply,
    propagate_adjoint,
    propagate_forward,
    reset_error,
)
from .protocols import (
    SRSpec,
    cp_protocol,
    smoothstep,
    solve_operation_points,
    sr_protocol,
    sr_spec,
)

__version__ = "0.1.0"

__all__ = [
    "CircuitParams", "ControlSet", "DensityMatrix", "EigenSystem", "RateSet",
    "SRSpec", "Trajectory", "build_hamiltonian", "coupling_elements",
    "cp_protocol", "decay_rates", "detailed_balance_ratio",
    "eigen_derivatives", "eigensystem", "eigensystem_at",
    "excited_basis_projectors", "kernel_backend", "lindbladian_apply",
    "propagate_adjoint", "propagate_forward", "reset_error", "smoothstep",
    "solve_operation_points", "sr_protocol", "sr_spec", "uniform_grid",
]
