"""Sequential, monotonically convergent optimization of the control fields.

Each iteration backward-propagates co-states under the current fields, then
sweeps forward in time, updating every active field sample from the pairing
between co-state and state while propagating the states under the already
updated fields.  The generator's full control dependence enters the update:
the Hamiltonian commutator and the dissipator (rates, eigenvectors and the
explicit prefactors all differentiate).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .constants import TWO_PI
from .controls import CHANNELS, ControlSet
from .model import decay_rates, eigen_derivatives, eigensystem_at
from .params import CircuitParams
from .propagation import (
    GROUND_PROJECTOR,
    _resolve_substeps,
    _to_internal,
    excited_basis_projectors,
    propagate_adjoint,
    propagate_forward,
    reset_error,
)
from .protocols import smoothstep

#: Shape functions below this are still used for the update gating as given
#: (exact zeros gate exactly); the floor only protects the running-cost
#: division.
SHAPE_FLOOR = 1e-6


class MonotonicityError(RuntimeError):
    """The functional increased beyond the allowed slack.

    The update step was too large for the quasi-linear regime; retry with a
    larger lambda (smaller updates).
    """


@dataclass
class KrotovConfig:
    """Weights, shapes and stopping rules for the optimization.

    lambdas maps active channel names to the update weight lambda_k; None
    selects auto-calibration so the first-iteration peak update is about
    ``update_target``.  Shape functions default to smoothstep switch-on/off
    ramps of ``shape_ramp`` seconds, exactly zero at the grid end points.
    """

    lambdas: dict | None = None
    update_target: float = TWO_PI * 1e6
    shape_ramp: float = 5e-9
    shapes: dict | None = None
    max_iter: int = 500
    stop_delta_J: float = 1e-12
    stop_alpha: float = 1e-8
    substeps: int | None = None
    step_bound: float = 0.045
    fixed_point_iters: int = 2
    monotonic_slack: float = 1e-12
    lambda_backoff: float = 4.0
    max_backoffs: int = 12
    update_gain_margin: float = 1.05
    lambda_accel: float = 1.0

    def __post_init__(self):
        if self.lambdas is not None:
            for name, lam in self.lambdas.items():
                if name not in CHANNELS:
                    raise ValueError(f"unknown control channel {name!r}")
                if not lam > 0.0:
                    raise ValueError("lambda weights must be positive")


@dataclass(frozen=True)
class KrotovIteration:
    J: float
    alpha: float
    running_cost: float
    max_update: float


@dataclass
class OptimizationRecord:
    guess_alpha: float
    iterations: list = field(default_factory=list)
    final_controls: ControlSet | None = None
    lambdas: dict | None = None
    stop_reason: str = ""

    @property
    def alpha(self) -> float:
        return self.iterations[-1].alpha if self.iterations else self.guess_alpha

    @property
    def J_series(self) -> np.ndarray:
        return np.array([self.guess_alpha] + [it.J for it in self.iterations])

    def is_monotonic(self, slack: float = 1e-12) -> bool:
        J = self.J_series
        return bool(np.all(np.diff(J) <= slack))

    def to_dict(self) -> dict:
        return {
            "guess_alpha": self.guess_alpha,
            "lambdas": self.lambdas,
            "stop_reason": self.stop_reason,
            "iterations": [
                {"J": it.J, "alpha": it.alpha, "running_cost": it.running_cost,
                 "max_update": it.max_update}
                for it in self.iterations
            ],
        }


def default_shape(times: np.ndarray, ramp: float) -> np.ndarray:
    """Smooth switch-on/off window, exactly zero at both grid end points."""
    tau = times[-1]
    s = np.ones_like(times)
    head = times < ramp
    s[head] = smoothstep(times[head] / ramp)
    tail = times > tau - ramp
    s[tail] = np.minimum(s[tail], smoothstep((tau - times[tail]) / ramp))
    return s


def _shape_matrix(controls: ControlSet, cfg: KrotovConfig) -> np.ndarray:
    shapes = np.zeros((3, controls.times.size))
    for c, name in enumerate(CHANNELS):
        if name not in controls.active:
            continue
        if cfg.shapes is not None and name in cfg.shapes:
            s = np.asarray(cfg.shapes[name], dtype=float)
            if s.shape != controls.times.shape:
                raise ValueError(f"shape function for {name!r} must match the grid")
            if np.any(s < 0.0) or np.any(s > 1.0):
                raise ValueError("shape functions must lie in [0, 1]")
            shapes[c] = s
        else:
            shapes[c] = default_shape(controls.times, cfg.shape_ramp)
    return shapes


def _lambda_vector(controls: ControlSet, lambdas: dict) -> np.ndarray:
    lam = np.ones(3)
    for c, name in enumerate(CHANNELS):
        if name in controls.active:
            lam[c] = lambdas[name]
    return lam


def _active_mask(controls: ControlSet) -> np.ndarray:
    return np.array(
        [1 if name in controls.active else 0 for name in CHANNELS],
        dtype=np.uint8,
    )


def running_cost(controls: ControlSet, reference: ControlSet,
                 cfg: KrotovConfig) -> float:
    """Shape-gated quadratic penalty on the change from the reference fields."""
    if controls.times.shape != reference.times.shape:
        raise ValueError("controls and reference must share one grid")
    if cfg.lambdas is None:
        raise ValueError("running_cost needs concrete lambda weights")
    lam = cfg.lambdas
    shapes = _shape_matrix(controls, cfg)
    total = 0.0
    for c, name in enumerate(CHANNELS):
        if name not in controls.active:
            continue
        dev = controls.series(name) - reference.series(name)
        if not np.any(dev):
            continue
        integrand = (lam[name] / np.maximum(shapes[c], SHAPE_FLOOR)) * dev ** 2
        total += float(np.trapezoid(integrand, controls.times))
    return total


def total_functional(controls: ControlSet, reference: ControlSet,
                     cfg: KrotovConfig, params: CircuitParams) -> float:
    """Reset error plus the running cost against the reference fields."""
    return reset_error(controls, params, substeps=cfg.substeps) \
        + running_cost(controls, reference, cfg)


_DIAG_UNIT = {c: np.diag([0.0, 1.0 if c == 0 else 0.0,
                          1.0 if c == 1 else 0.0,
                          1.0 if c == 2 else 0.0]).astype(complex)
              for c in range(3)}


def liouvillian_gradient(rho, controls_at_t, params: CircuitParams,
                         which: str, es=None) -> np.ndarray:
    """Derivative of the generator along one control, applied to a state.

    Returns -i [dH/d eps, rho] + dL_D/d eps [rho], where the dissipator
    derivative expands over the rates (eigenvalues, bath-coupling weights,
    thermal factor and explicit omega_L/omega_R prefactors) and over the
    Lindblad projectors (eigenvector derivatives).  The result does not
    depend on the eigenvector gauge; `es` lets tests supply a re-gauged
    eigensystem to verify that.
    """
    c = CHANNELS.index(which)
    rho = np.asarray(rho, dtype=complex)
    wq, wR, wL = controls_at_t
    if es is None:
        es = eigensystem_at(controls_at_t, params)
    dH = _DIAG_UNIT[c]
    out = -1j * (dH @ rho - rho @ dH)
    domega, dpsi3 = eigen_derivatives(es, dH)
    gam = decay_rates(es, controls_at_t, params).gamma
    dgam = kernels.rate_control_derivatives(
        es.omegas, es.states_internal,
        domega, _internal_dpsi(es, dpsi3),
        wL, wR, params.gamma0, params.theta_env, c,
    )
    for i in range(3):
        psi = np.zeros(4, dtype=complex)
        psi[1:] = es.states[:, i]
        dpsi = np.zeros(4, dtype=complex)
        dpsi[1:] = dpsi3[:, i]
        P = np.outer(psi, psi.conj())
        dP = np.outer(dpsi, psi.conj()) + np.outer(psi, dpsi.conj())
        pop = float(np.real(psi.conj() @ rho @ psi))
        dpop = 2.0 * float(np.real(dpsi.conj() @ rho @ psi))
        out += dgam[i] * (pop * GROUND_PROJECTOR - 0.5 * (P @ rho + rho @ P))
        out += gam[i] * (dpop * GROUND_PROJECTOR - 0.5 * (dP @ rho + rho @ dP))
    return out


def _internal_dpsi(es, dpsi3):
    """Eigenvector derivatives mapped to the kernels' internal real frame."""
    dV = np.empty((3, 3))
    for i in range(3):
        vec = np.array([1j * dpsi3[0, i], dpsi3[1, i], dpsi3[2, i]])
        # remove the lab-gauge phase so the derivative is real like states_internal
        lab = np.array([1j * es.states[0, i], es.states[1, i], es.states[2, i]])
        k = int(np.argmax(np.abs(es.states_internal[:, i])))
        phase = lab[k] / es.states_internal[k, i]
        dV[:, i] = np.real(vec / phase)
    return dV


def update_pairing(rho, chi, controls_at_t, params: CircuitParams,
                   which: str) -> float:
    """Re <chi, dM/d eps [rho]>: the update integrand at one grid point."""
    c = CHANNELS.index(which)
    wq, wR, wL = controls_at_t
    return float(kernels.update_integrand(
        _to_internal(np.asarray(rho, dtype=complex)),
        _to_internal(np.asarray(chi, dtype=complex)),
        wq, wR, wL, params.g_Rq, params.g_LR0, params.gamma0,
        params.theta_env, c,
    ))


def functional_gradient(controls: ControlSet, params: CircuitParams,
                        which: str = "L", refine: int = 2,
                        substeps: int | None = None) -> np.ndarray:
    """Exact-to-quadrature gradient of the reset error in the field samples.

    dalpha/d eps_k for the piecewise-linear field parameterization equals the
    integral of the pairing -sum_l <chi_l, dM/d eps rho_l> against the k-th
    hat basis function.  The pairing is sampled on a grid refined by
    ``refine`` (even) and integrated with composite Simpson weights, which
    resolves the oscillation of the integrand at the eigen-gap frequencies.
    Diagnostic companion to the sequential update (which uses the pointwise
    pairing).
    """
    if refine < 2 or refine % 2:
        raise ValueError("refine must be a positive even integer")
    c = CHANNELS.index(which)
    n = controls.times.size
    # the refined grid represents the same piecewise-linear field exactly
    frac = np.arange(1, refine) / refine
    times_f = np.empty(refine * (n - 1) + 1)
    times_f[0::refine] = controls.times
    stacked = controls.stacked()
    stacked_f = np.empty((3, times_f.size))
    stacked_f[:, 0::refine] = stacked
    for j, x in enumerate(frac):
        times_f[j + 1::refine] = (1 - x) * controls.times[:-1] + x * controls.times[1:]
        stacked_f[:, j + 1::refine] = (1 - x) * stacked[:, :-1] + x * stacked[:, 1:]
    fine = ControlSet.from_stacked(times_f, stacked_f, controls.active)
    fw = propagate_forward(excited_basis_projectors(), fine, params,
                           substeps=substeps, store_states=True)
    bw = propagate_adjoint(GROUND_PROJECTOR / 3.0, fine, params,
                           substeps=substeps, store_states=True)
    rho_t = _to_internal(fw.states)
    chi_t = _to_internal(bw.states[:, 0])
    pairing = np.empty(times_f.size)
    for j in range(times_f.size):
        wq, wR, wL = stacked_f[:, j]
        pairing[j] = sum(
            kernels.update_integrand(
                rho_t[j, l], chi_t[j], wq, wR, wL, params.g_Rq, params.g_LR0,
                params.gamma0, params.theta_env, c,
            )
            for l in range(3)
        )
    # composite Simpson of hat_k * pairing over each adjacent interval
    h = controls.dt / refine
    simpson = np.ones(refine + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    rising = simpson * (np.arange(refine + 1) / refine)
    falling = simpson * (1.0 - np.arange(refine + 1) / refine)
    grad = np.empty(n)
    for k in range(n):
        acc = 0.0
        if k > 0:
            acc += rising @ pairing[refine * (k - 1): refine * k + 1]
        if k < n - 1:
            acc += falling @ pairing[refine * k: refine * (k + 1) + 1]
        grad[k] = -acc * h / 3.0
    return grad


def resolve_lambdas(controls: ControlSet, cfg: KrotovConfig,
                    params: CircuitParams) -> dict:
    """Auto-calibrated lambda weights from a dry run.

    One backward pass plus a no-update sweep records the peak shape-weighted
    update integrand per channel; lambda is set so the first-iteration peak
    update is about cfg.update_target.
    """
    if cfg.lambdas is not None:
        missing = [n for n in controls.active if n not in cfg.lambdas]
        if missing:
            raise ValueError(f"lambdas missing for active channels {missing}")
        return dict(cfg.lambdas)
    shapes = _shape_matrix(controls, cfg)
    chi, rho0, n_sub = _sweep_inputs(controls, cfg, params)
    old = controls.stacked()
    new = np.empty_like(old)
    integ_max = np.zeros(3)
    kernels.krotov_sweep(
        rho0, chi, old, new, _active_mask(controls), shapes, np.ones(3),
        controls.dt, n_sub, params.g_Rq, params.g_LR0, params.gamma0,
        params.theta_env, cfg.fixed_point_iters, True, integ_max,
        cfg.step_bound,
    )
    lambdas = {}
    for c, name in enumerate(CHANNELS):
        if name in controls.active:
            peak = integ_max[c]
            lambdas[name] = peak / cfg.update_target if peak > 0.0 else 1.0
    return lambdas


def _sweep_inputs(controls, cfg, params):
    """Backward co-state trajectory (internal frame), initial states, substeps."""
    chi_tau = GROUND_PROJECTOR / 3.0
    back = propagate_adjoint(chi_tau, controls, params,
                             substeps=cfg.substeps, store_states=True,
                             step_bound=cfg.step_bound)
    chi_one = _to_internal(back.states[:, 0])
    n_pts = chi_one.shape[0]
    chi = np.empty((n_pts, 3, 4, 4), dtype=complex)
    chi[:] = chi_one[:, None]
    rho0 = _to_internal(excited_basis_projectors())
    n_sub = _resolve_substeps(controls, params, cfg.substeps, rho0,
                              cfg.step_bound)
    return chi, rho0, n_sub


def krotov_step(controls: ControlSet, cfg: KrotovConfig,
                params: CircuitParams, *, lambdas: dict | None = None,
                j_reference: float | None = None):
    """One sequential update pass.

    Backward-propagates the co-states under the present fields, then updates
    the active fields point by point while re-propagating the states under
    the new fields.  Returns (new_controls, KrotovIteration).  Raises
    MonotonicityError when the functional rises beyond cfg.monotonic_slack
    above ``j_reference`` (defaults to the reset error of ``controls``, which
    the theory guarantees the new J cannot exceed).
    """
    lambdas = lambdas or resolve_lambdas(controls, cfg, params)
    shapes = _shape_matrix(controls, cfg)
    chi, rho0, n_sub = _sweep_inputs(controls, cfg, params)
    old = controls.stacked()
    new = np.empty_like(old)
    # the update gain carries a small margin over the cost weight: it absorbs
    # the O((omega*dt)^2) mismatch between the pointwise integrand and the
    # discrete gradient of the sampled fields, keeping every step descent
    lam_update = _lambda_vector(controls, lambdas) * cfg.update_gain_margin
    try:
        kernels.krotov_sweep(
            rho0, chi, old, new, _active_mask(controls), shapes,
            lam_update, controls.dt, n_sub,
            params.g_Rq, params.g_LR0, params.gamma0, params.theta_env,
            cfg.fixed_point_iters, False, None, cfg.step_bound,
        )
    except ValueError as exc:
        # an oversized update can push a splitting out of the model's domain
        # mid-sweep; treat it like any other too-large step
        raise MonotonicityError(
            f"update left the model's validity domain ({exc}); "
            "increase lambda_k"
        ) from exc
    new_controls = ControlSet.from_stacked(controls.times.copy(), new,
                                           controls.active)
    cfg_l = replace(cfg, lambdas=lambdas)
    # the sweep's second pass re-propagates every interval with the final
    # fields, so its terminal states ARE the clean propagation of new_controls
    alpha = float(1.0 - rho0[:, 0, 0].real.mean())
    cost = running_cost(new_controls, controls, cfg_l)
    J = alpha + cost
    if j_reference is None:
        j_reference = reset_error(controls, params, substeps=cfg.substeps,
                                  step_bound=cfg.step_bound)
    if J > j_reference + cfg.monotonic_slack:
        raise MonotonicityError(
            f"functional rose from {j_reference:.6e} to {J:.6e}; increase "
            f"lambda_k (updates too large for the quasi-linear regime)"
        )
    info = KrotovIteration(
        J=J, alpha=alpha, running_cost=cost,
        max_update=float(np.max(np.abs(new - old))),
    )
    return new_controls, info


def optimize(guess: ControlSet, cfg: KrotovConfig,
             params: CircuitParams) -> OptimizationRecord:
    """Iterate Krotov steps until a stopping rule fires.

    The recorded J series is non-increasing; a step that would raise it is
    discarded and retried with lambda scaled up by cfg.lambda_backoff.
    """
    if not guess.active:
        raise ValueError("guess has no active control channels")
    alpha0 = reset_error(guess, params, substeps=cfg.substeps,
                         step_bound=cfg.step_bound)
    record = OptimizationRecord(guess_alpha=alpha0)
    if alpha0 <= cfg.stop_alpha:
        record.final_controls = guess
        record.stop_reason = "alpha"
        return record
    lambdas = resolve_lambdas(guess, cfg, params)
    record.lambdas = dict(lambdas)
    controls = guess
    alpha_ref = alpha0  # Krotov guarantees J_new <= previous alpha
    last_j = alpha0
    backoffs = 0
    while len(record.iterations) < cfg.max_iter:
        try:
            controls_new, info = krotov_step(
                controls, cfg, params, lambdas=lambdas, j_reference=alpha_ref
            )
        except MonotonicityError:
            backoffs += 1
            if backoffs > cfg.max_backoffs:
                record.stop_reason = "monotonicity"
                break
            lambdas = {k: v * cfg.lambda_backoff for k, v in lambdas.items()}
            record.lambdas = dict(lambdas)
            continue
        backoffs = 0
        controls = controls_new
        record.iterations.append(info)
        if info.alpha <= cfg.stop_alpha:
            record.stop_reason = "alpha"
            break
        if abs(last_j - info.J) < cfg.stop_delta_J:
            record.stop_reason = "delta_J"
            break
        alpha_ref = info.alpha
        last_j = info.J
        if cfg.lambda_accel != 1.0:
            lambdas = {k: v * cfg.lambda_accel for k, v in lambdas.items()}
            record.lambdas = dict(lambdas)
    if not record.stop_reason:
        record.stop_reason = "max_iter"
    record.final_controls = controls
    return record
