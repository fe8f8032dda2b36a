"""Density-matrix propagation under the control-dependent dissipative generator.

Forward propagation integrates the master equation; adjoint propagation
integrates the co-state equation (minus the Hilbert-Schmidt adjoint of the
forward generator) backward from the final time, so that the pairing
<chi(t), rho(t)> is conserved between the two.

The integrator is fixed-step RK4 on each control-grid interval, with controls
interpolated linearly at the stage times and the substep count chosen so that
(eigenvalue spread) * substep <= 0.045.  States that carry ground-excited
coherences rotate at the absolute eigenfrequencies instead of the spread;
the substep rule switches to the full band for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .controls import ControlSet
from .params import CircuitParams

GROUND_PROJECTOR = np.zeros((4, 4), dtype=complex)
GROUND_PROJECTOR[0, 0] = 1.0


class StepSizeError(ValueError):
    """Requested step size violates the integrator's resolution bound."""

    def __init__(self, msg, required_dt):
        super().__init__(msg)
        self.required_dt = required_dt


def excited_basis_projectors() -> np.ndarray:
    """The three bare excited-state projectors spanning the reset average."""
    out = np.zeros((3, 4, 4), dtype=complex)
    for l in range(3):
        out[l, l + 1, l + 1] = 1.0
    return out


@dataclass(frozen=True)
class DensityMatrix:
    """4x4 state in the basis (|0,0,g>, |0,0,e>, |0,1,g>, |1,0,g>)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError("state must be a 4x4 matrix")
        object.__setattr__(self, "matrix", m)

    def validate(self, herm_tol=1e-12, trace_tol=1e-10, eig_tol=1e-10):
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("state is not Hermitian")
        if abs(np.trace(m).real - 1.0) > trace_tol or abs(np.trace(m).imag) > trace_tol:
            raise ValueError("state trace differs from one")
        if np.linalg.eigvalsh(m).min() < -eig_tol:
            raise ValueError("state is not positive semidefinite")
        return self

    @classmethod
    def ground(cls):
        return cls(GROUND_PROJECTOR.copy())

    @classmethod
    def basis_excited(cls, l: int):
        """Projector on the l-th bare excited state, l = 1, 2, 3."""
        if l not in (1, 2, 3):
            raise ValueError("excited basis index must be 1, 2 or 3")
        m = np.zeros((4, 4), dtype=complex)
        m[l, l] = 1.0
        return cls(m)


@dataclass(frozen=True)
class Trajectory:
    """Grid-sampled history of a propagated stack of states.

    populations[k, s] holds (p0, p1, p2, p3) for state s at time times[k]:
    ground population followed by the three instantaneous-eigenstate
    populations.  rates[k] are the decay rates at the grid point.  states is
    only filled when requested (memory).
    """

    times: np.ndarray
    populations: np.ndarray
    rates: np.ndarray
    final: np.ndarray
    controls: ControlSet
    states: np.ndarray | None = None

    @property
    def traces(self) -> np.ndarray:
        return self.populations.sum(axis=2)


def _to_internal(rho: np.ndarray) -> np.ndarray:
    out = np.array(rho, dtype=complex, order="C")
    out[..., 1, :] *= 1j
    out[..., :, 1] *= -1j
    return out


def _from_internal(rho: np.ndarray) -> np.ndarray:
    out = np.array(rho, dtype=complex, order="C")
    out[..., 1, :] *= -1j
    out[..., :, 1] *= 1j
    return out


def _as_stack(rho0) -> np.ndarray:
    if isinstance(rho0, DensityMatrix):
        rho0 = rho0.matrix
    rho0 = np.asarray(rho0, dtype=complex)
    single = rho0.ndim == 2
    stack = rho0[None] if single else rho0
    if stack.ndim != 3 or stack.shape[1:] != (4, 4):
        raise ValueError("expected a (4,4) state or an (m,4,4) stack")
    scale = max(np.max(np.abs(stack)), 1e-300)
    if np.max(np.abs(stack - stack.conj().transpose(0, 2, 1))) > 1e-9 * scale:
        raise ValueError("states must be Hermitian")
    return np.ascontiguousarray(stack)


def grid_substeps(controls: ControlSet, params: CircuitParams,
                  full_band: bool = False,
                  step_bound: float = kernels.STEP_BOUND) -> int:
    """Substeps per control interval needed to respect the resolution bound."""
    gam, w = kernels.rates_grid(
        controls.omega_q, controls.omega_R, controls.omega_L,
        params.g_Rq, params.g_LR0, params.gamma0, params.theta_env,
    )
    scale = float(np.max(w[:, 2])) if full_band else float(np.max(w[:, 2] - w[:, 0]))
    scale = max(scale, float(np.max(gam)))
    return int(scale * controls.dt / step_bound) + 1


def _resolve_substeps(controls, params, substeps, stack,
                      step_bound=kernels.STEP_BOUND) -> int:
    full_band = bool(np.max(np.abs(stack[:, 0, 1:])) > 1e-12)
    if substeps is None:
        return grid_substeps(controls, params, True, step_bound) if full_band else 0
    required = grid_substeps(controls, params, full_band, step_bound)
    if substeps < required:
        raise StepSizeError(
            f"substeps={substeps} too coarse for this grid; need >= {required} "
            f"(integration step <= {controls.dt / required:.3e} s)",
            required_dt=controls.dt / required,
        )
    return substeps


def propagate_forward(rho0, controls: ControlSet, params: CircuitParams, *,
                      substeps: int | None = None, store_states: bool = False,
                      step_bound: float = kernels.STEP_BOUND) -> Trajectory:
    """Propagate one state or an (m,4,4) stack from t=0 to tau."""
    return _propagate(rho0, controls, params, False, substeps, store_states,
                      step_bound)


def propagate_adjoint(chi_tau, controls: ControlSet, params: CircuitParams, *,
                      substeps: int | None = None, store_states: bool = True,
                      step_bound: float = kernels.STEP_BOUND) -> Trajectory:
    """Propagate co-states backward from t=tau to 0.

    The generator is minus the Hilbert-Schmidt adjoint of the forward one:
    the commutator keeps its sign and the dissipator is transposed, so the
    pairing <chi(t), rho(t)> with any forward trajectory is constant.
    """
    return _propagate(chi_tau, controls, params, True, substeps, store_states,
                      step_bound)


def _propagate(rho0, controls, params, adjoint, substeps, store_states,
               step_bound=kernels.STEP_BOUND):
    stack = _as_stack(rho0)
    n_sub = _resolve_substeps(controls, params, substeps, stack, step_bound)
    m = stack.shape[0]
    n = controls.n_intervals
    pops = np.empty((n + 1, m, 4))
    rates = np.empty((n + 1, 3))
    states = np.empty((n + 1, m, 4, 4), dtype=complex) if store_states else None
    work = _to_internal(stack)
    kernels.propagate(
        work, controls.stacked(), controls.dt, n_sub,
        params.g_Rq, params.g_LR0, params.gamma0, params.theta_env,
        adjoint, pops, rates, states, step_bound,
    )
    return Trajectory(
        times=controls.times.copy(),
        populations=pops,
        rates=rates,
        final=_from_internal(work),
        controls=controls,
        states=_from_internal(states) if store_states else None,
    )


def lindbladian_apply(rho, controls_at_t, params: CircuitParams,
                      adjoint: bool = False) -> np.ndarray:
    """Generator applied to a state at one instant (time derivative)."""
    if isinstance(rho, DensityMatrix):
        rho = rho.matrix
    wq, wR, wL = controls_at_t
    out = kernels.liouvillian_apply(
        _to_internal(np.asarray(rho, dtype=complex)), wq, wR, wL,
        params.g_Rq, params.g_LR0, params.gamma0, params.theta_env, adjoint,
    )
    return _from_internal(out)


def reset_error(controls: ControlSet, params: CircuitParams, *,
                substeps: int | None = None,
                step_bound: float = kernels.STEP_BOUND,
                return_trajectory: bool = False):
    """Mean population left in the excited subspace at final time.

    Averages <rho_trg, D(tau,0) rho_l> over the three bare excited initial
    states; equals 1 exactly when nothing decays.
    """
    traj = propagate_forward(
        excited_basis_projectors(), controls, params, substeps=substeps,
        step_bound=step_bound,
    )
    alpha = float(1.0 - traj.final[:, 0, 0].real.mean())
    if return_trajectory:
        return alpha, traj
    return alpha
