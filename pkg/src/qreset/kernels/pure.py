"""Pure-NumPy implementation of the numerical kernels.

This backend mirrors the compiled extension (`qreset.kernels._core`) function
for function and is selected automatically when the extension is unavailable.

All kernels work in the internal frame in which the single-excitation block of
the Hamiltonian is real symmetric (basis phase |0,0,e> -> i|0,0,e>); callers
own the conversion from the lab basis.  Basis order: index 0 is the joint
ground state, indices 1..3 are the qubit, right-oscillator and left-oscillator
single-excitation states.  Control channels are ordered (q, R, L).
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"

#: Eigenvalue gap (relative to the block norm) below which an eigensystem is
#: flagged as effectively degenerate.
DEGENERACY_FLAG_TOL = 1e-9

#: Gap (relative to the block norm) below which first-order perturbation
#: formulas are refused.
PERTURBATION_GAP_TOL = 1e-6

_E00 = np.zeros((4, 4))
_E00[0, 0] = 1.0


class NearDegeneracyError(ValueError):
    """Eigenvalue gap too small for first-order perturbation formulas."""


def thermal_factor(x):
    """1 / (1 - exp(-x)), stable for small positive x."""
    return 1.0 / (-np.expm1(-x))


def eigh3(wq, wR, wL, g, G):
    """Eigensystem of [[wq, g, 0], [g, wR, G], [0, G, wL]].

    Returns (w, V, degenerate): ascending eigenvalues, orthonormal
    eigenvector columns with the largest-magnitude component positive, and a
    flag marking a gap below DEGENERACY_FLAG_TOL * norm.
    """
    A = np.array([[wq, g, 0.0], [g, wR, G], [0.0, G, wL]])
    w, V = np.linalg.eigh(A)
    for i in range(3):
        k = np.argmax(np.abs(V[:, i]))
        if V[k, i] < 0.0:
            V[:, i] = -V[:, i]
    norm = max(abs(w[0]), abs(w[2]))
    degenerate = bool(min(w[1] - w[0], w[2] - w[1]) < DEGENERACY_FLAG_TOL * norm)
    return w, np.ascontiguousarray(V), degenerate


def decay_rates_from_eig(w, V, wL, wR, gamma0, theta):
    """Engineered decay rates of the three eigenstates into the ground state."""
    if w[0] <= 0.0:
        raise ValueError(
            "non-positive excitation energy: the restricted model assumes "
            "positive eigenvalues"
        )
    return gamma0 * V[2, :] ** 2 * (wL * w / wR ** 2) * thermal_factor(w / theta)


def rates_grid(wq, wR, wL, g, G, gamma0, theta):
    """Vectorized decay rates for arrays of control triples.

    Returns (gam, w): arrays of shape (n, 3) with rates and eigenvalues.
    """
    wq, wR, wL = (np.array(x, dtype=float) for x in
                  np.broadcast_arrays(wq, wR, wL))
    n = wq.size
    A = np.zeros((n, 3, 3))
    A[:, 0, 0] = wq.ravel()
    A[:, 1, 1] = wR.ravel()
    A[:, 2, 2] = wL.ravel()
    A[:, 0, 1] = A[:, 1, 0] = g
    A[:, 1, 2] = A[:, 2, 1] = G
    w, V = np.linalg.eigh(A)
    if np.any(w[:, 0] <= 0.0):
        raise ValueError("non-positive excitation energy on the grid")
    vL2 = V[:, 2, :] ** 2
    gam = gamma0 * vL2 * (wL.ravel()[:, None] * w / wR.ravel()[:, None] ** 2)
    gam *= thermal_factor(w / theta)
    return gam.reshape(wq.shape + (3,)), w.reshape(wq.shape + (3,))


def _hamiltonian(wq, wR, wL, g, G):
    H = np.zeros((4, 4))
    H[1, 1], H[2, 2], H[3, 3] = wq, wR, wL
    H[1, 2] = H[2, 1] = g
    H[2, 3] = H[3, 2] = G
    return H


def liouvillian_apply(rho, wq, wR, wL, g, G, gamma0, theta, adjoint=False):
    """Generator of the dissipative evolution applied to a (..., 4, 4) stack.

    adjoint=False: drho/dt of the master equation.
    adjoint=True: dchi/dt of the co-state equation, i.e. minus the
    Hilbert-Schmidt adjoint of the forward generator (so that <chi, rho> is
    conserved when both are integrated in the same time direction).
    """
    w, V, _ = eigh3(wq, wR, wL, g, G)
    gam = decay_rates_from_eig(w, V, wL, wR, gamma0, theta)
    H = _hamiltonian(wq, wR, wL, g, G)
    out = -1j * (H @ rho - rho @ H)
    # quadratic forms stay complex so the map is linear on all matrices,
    # not only Hermitian ones (their imaginary part vanishes for states)
    for i in range(3):
        P = np.zeros((4, 4))
        P[1:, 1:] = np.outer(V[:, i], V[:, i])
        anti = P @ rho + rho @ P
        if adjoint:
            out -= gam[i] * (rho[..., 0, 0][..., None, None] * P - 0.5 * anti)
        else:
            pop = np.einsum("a,...ab,b->...", V[:, i], rho[..., 1:, 1:], V[:, i])
            out += gam[i] * (pop[..., None, None] * _E00 - 0.5 * anti)
    return out


def eigen_control_derivatives(w, V, which):
    """First-order derivatives of (w, V) for a unit shift of one channel.

    `which` is the channel index (0=q, 1=R, 2=L); the Hamiltonian direction is
    the matching diagonal unit matrix.  Gauge: <psi_i | d psi_i> = 0.
    """
    norm = max(abs(w[0]), abs(w[2]))
    if min(w[1] - w[0], w[2] - w[1]) < PERTURBATION_GAP_TOL * norm:
        raise NearDegeneracyError(
            "eigenvalue gap below 1e-6 of the block norm; refine the control "
            "step instead of using first-order perturbation theory"
        )
    row = V[which, :]
    dw = row ** 2
    dV = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if j != i:
                dV[:, i] += (row[j] * row[i] / (w[i] - w[j])) * V[:, j]
    return dw, dV


def rate_control_derivatives(w, V, dw, dV, wL, wR, gamma0, theta, which):
    """Derivatives of the three decay rates for a unit shift of one channel."""
    vL2 = V[2, :] ** 2
    dvL2 = 2.0 * V[2, :] * dV[2, :]
    x = w / theta
    therm = thermal_factor(x)
    # d/domega of 1/(1-exp(-omega/theta))
    dtherm = -np.exp(-x) * therm ** 2 / theta
    pref = wL * w / wR ** 2
    dpref = wL * dw / wR ** 2
    if which == 2:  # explicit omega_L prefactor
        dpref += w / wR ** 2
    elif which == 1:  # explicit omega_R prefactor
        dpref -= 2.0 * wL * w / wR ** 3
    return gamma0 * (dvL2 * pref * therm + vL2 * dpref * therm
                     + vL2 * pref * dtherm * dw)


def update_integrand(rho, chi, wq, wR, wL, g, G, gamma0, theta, which):
    """Re <chi, dM/d eps_which [rho]> for 4x4 Hermitian rho and chi."""
    w, V, _ = eigh3(wq, wR, wL, g, G)
    gam = decay_rates_from_eig(w, V, wL, wR, gamma0, theta)
    dw, dV = eigen_control_derivatives(w, V, which)
    dgam = rate_control_derivatives(w, V, dw, dV, wL, wR, gamma0, theta, which)
    C = rho @ chi
    C11 = C[1:, 1:]
    r11 = rho[1:, 1:]
    chi00 = chi[0, 0].real
    total = 2.0 * C[which + 1, which + 1].imag
    for i in range(3):
        v = V[:, i]
        dv = dV[:, i]
        pop = (v @ r11 @ v).real
        a_i = pop * chi00 - (v @ C11 @ v).real
        b_i = 2.0 * (dv @ r11 @ v).real * chi00 \
            - (dv @ C11 @ v + v @ C11 @ dv).real
        total += dgam[i] * a_i + gam[i] * b_i
    return float(total)


#: Max (eigenvalue spread) * dt per RK4 substep when choosing steps adaptively.
STEP_BOUND = 0.005


def _rk4_delta(rho, h, fields_a, fields_m, fields_b, g, G, gamma0, theta, adjoint):
    k1 = liouvillian_apply(rho, *fields_a, g, G, gamma0, theta, adjoint)
    k2 = liouvillian_apply(rho + 0.5 * h * k1, *fields_m, g, G, gamma0, theta, adjoint)
    k3 = liouvillian_apply(rho + 0.5 * h * k2, *fields_m, g, G, gamma0, theta, adjoint)
    k4 = liouvillian_apply(rho + h * k3, *fields_b, g, G, gamma0, theta, adjoint)
    return (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_interval(rho, c0, c1, dt, n_sub, g, G, gamma0, theta, adjoint,
                   step_bound=STEP_BOUND):
    """Advance across one control interval; n_sub=0 picks steps adaptively.

    The state update uses Kahan-compensated accumulation so rounding does not
    bias long fixed-step runs.
    """
    if n_sub == 0:
        wa, _, _ = eigh3(c0[0], c0[1], c0[2], g, G)
        wb, _, _ = eigh3(c1[0], c1[1], c1[2], g, G)
        spread = max(wa[2] - wa[0], wb[2] - wb[0])
        n_sub = min(int(spread * abs(dt) / step_bound) + 1, 65536)
    h = dt / n_sub
    dc = c1 - c0
    comp = np.zeros_like(rho)
    for s in range(n_sub):
        fa = s / n_sub
        fm = (s + 0.5) / n_sub
        fb = (s + 1.0) / n_sub
        delta = _rk4_delta(
            rho, h, c0 + dc * fa, c0 + dc * fm, c0 + dc * fb,
            g, G, gamma0, theta, adjoint,
        )
        y = delta - comp
        t = rho + y
        comp[...] = (t - rho) - y
        rho[...] = t


def _record(ctrl, k, rho, g, G, gamma0, theta, pops_out, rates_out, states_out):
    wq, wR, wL = ctrl[:, k]
    w, V, _ = eigh3(wq, wR, wL, g, G)
    if pops_out is not None:
        pops_out[k, :, 0] = rho[:, 0, 0].real
        pops_out[k, :, 1:] = np.einsum(
            "ai,sab,bi->si", V, rho[:, 1:, 1:], V
        ).real
    if rates_out is not None:
        rates_out[k] = decay_rates_from_eig(w, V, wL, wR, gamma0, theta)
    if states_out is not None:
        states_out[k] = rho


def propagate(rho, ctrl, dt, n_sub, g, G, gamma0, theta, adjoint=False,
              pops_out=None, rates_out=None, states_out=None,
              step_bound=STEP_BOUND):
    """Integrate a (m, 4, 4) stack over the whole control grid, in place.

    Forward runs t=0 -> tau; adjoint runs tau -> 0 (recording arrays are
    always indexed by grid point).  Controls are interpolated linearly at the
    RK4 stage times.
    """
    n = ctrl.shape[1] - 1
    rec = (pops_out, rates_out, states_out)
    steps = range(n) if not adjoint else range(n, 0, -1)
    for k in steps:
        _record(ctrl, k, rho, g, G, gamma0, theta, *rec)
        if not adjoint:
            c0, c1 = ctrl[:, k], ctrl[:, k + 1]
        else:
            c0, c1 = ctrl[:, k], ctrl[:, k - 1]
        _step_interval(rho, c0, c1, (-dt if adjoint else dt), n_sub,
                       g, G, gamma0, theta, adjoint, step_bound)
    _record(ctrl, 0 if adjoint else n, rho, g, G, gamma0, theta, *rec)


def _field_update(k, rho, chi_k, ctrl_old, active, shape_fn, lam,
                  g, G, gamma0, theta, reps, calibrate, integ_max_out):
    """Fixed-point field update at grid point k from the (rho, chi) pairing."""
    delta = np.zeros(3)
    for _ in range(reps):
        fields = ctrl_old[:, k] + delta
        integ = np.zeros(3)
        for c in range(3):
            if not active[c]:
                continue
            for l in range(rho.shape[0]):
                integ[c] += update_integrand(
                    rho[l], chi_k[l], *fields, g, G, gamma0, theta, c
                )
            if calibrate:
                if integ_max_out is not None:
                    integ_max_out[c] = max(
                        integ_max_out[c], shape_fn[c, k] * abs(integ[c])
                    )
            else:
                delta[c] = shape_fn[c, k] / lam[c] * integ[c]
    return delta


def krotov_sweep(rho, chi, ctrl_old, ctrl_new, active, shape_fn, lam,
                 dt, n_sub, g, G, gamma0, theta,
                 fp_iters=2, calibrate=False, integ_max_out=None,
                 step_bound=STEP_BOUND):
    """Sequential update sweep with two-pass interval propagation.

    rho: (3, 4, 4) initial states, replaced by the final states.
    chi: (N+1, 3, 4, 4) co-states stored at the grid points (old fields).
    ctrl_old/ctrl_new: (3, N+1); ctrl_new is written.

    The implicit dependence of the update on the new field value at the same
    grid point is resolved with `fp_iters` fixed-point evaluations.  Each
    interval is propagated twice: once with a predictor for the right
    endpoint to obtain the states there, then again with the updated endpoint
    so the stored states correspond to the stored fields.  With
    calibrate=True no update is applied; integ_max_out records the largest
    shape-weighted update integrand per channel, for calibrating lambda.
    """
    n = ctrl_old.shape[1] - 1
    reps = 1 if calibrate else fp_iters
    args = (ctrl_old, active, shape_fn, lam, g, G, gamma0, theta, reps,
            calibrate, integ_max_out)
    delta = _field_update(0, rho, chi[0], *args)
    ctrl_new[:, 0] = ctrl_old[:, 0] + delta
    for k in range(n):
        buf = rho.copy()
        c0 = ctrl_new[:, k].copy()
        c1 = ctrl_old[:, k + 1] + delta  # predictor
        _step_interval(rho, c0, c1, dt, n_sub, g, G, gamma0, theta, False,
                       step_bound)
        delta = _field_update(k + 1, rho, chi[k + 1], *args)
        ctrl_new[:, k + 1] = ctrl_old[:, k + 1] + delta
        if not calibrate:
            rho[...] = buf
            _step_interval(rho, c0, ctrl_new[:, k + 1].copy(), dt, n_sub,
                           g, G, gamma0, theta, False, step_bound)
