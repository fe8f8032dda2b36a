"""Restricted Hamiltonian, instantaneous eigensystem and engineered decay rates.

The Hilbert space is the ground state plus the single-excitation subspace in
the basis (|0,0,g>, |0,0,e>, |0,1,g>, |1,0,g>).  The ground state decouples
from the Hamiltonian; dissipation connects the three excited eigenstates to it
with control-dependent rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import NearDegeneracyError  # noqa: F401  (public error type)
from .params import CircuitParams

BASIS_LABELS = ("|0,0,g>", "|0,0,e>", "|0,1,g>", "|1,0,g>")


class ModelValidityError(ValueError):
    """Inputs outside the regime where the restricted model applies."""


def build_hamiltonian(controls_at_t, params: CircuitParams) -> np.ndarray:
    """4x4 Hamiltonian at one instant; controls_at_t = (omega_q, omega_R, omega_L).

    The couplings are held at their static values: the right oscillator
    couples to the qubit through -i*g_Rq (quadrature coupling phase) and to
    the left oscillator through g_LR0.
    """
    wq, wR, wL = controls_at_t
    if not (wq > 0.0 and wR > 0.0 and wL > 0.0):
        raise ValueError("all level splittings must be strictly positive")
    H = np.zeros((4, 4), dtype=complex)
    H[1, 1], H[2, 2], H[3, 3] = wq, wR, wL
    H[1, 2] = -1j * params.g_Rq
    H[2, 1] = 1j * params.g_Rq
    H[2, 3] = H[3, 2] = params.g_LR0
    return H


@dataclass(frozen=True)
class EigenSystem:
    """Instantaneous eigensystem of the single-excitation block.

    ``states[:, i]`` is |Psi_i> in the basis (|0,0,e>, |0,1,g>, |1,0,g>),
    eigenvalues ascending.  ``states_internal`` holds real representatives of
    the same eigenvectors in the kernels' internal frame; they may differ from
    ``states`` by a per-column global phase, which no rate or projector
    formula depends on.
    """

    omegas: np.ndarray
    states: np.ndarray
    gauge: str
    degenerate: bool
    states_internal: np.ndarray

    @property
    def block_norm(self) -> float:
        return float(max(abs(self.omegas[0]), abs(self.omegas[2])))


def _materialize_states(V: np.ndarray) -> np.ndarray:
    """Map real internal-frame eigenvectors to the lab basis and fix the gauge.

    Lab components are (-i*V[0,i], V[1,i], V[2,i]); the canonical gauge makes
    the largest-magnitude component real and positive.
    """
    states = np.empty((3, 3), dtype=complex)
    for i in range(3):
        vec = np.array([-1j * V[0, i], V[1, i], V[2, i]])
        k = int(np.argmax(np.abs(vec)))
        if k == 0:
            vec = vec * 1j * np.sign(V[0, i])
        elif vec[k].real < 0.0:
            vec = -vec
        states[:, i] = vec
    return states


def _block_params(H: np.ndarray):
    """Extract (wq, wR, wL, g, G) from a Hamiltonian in the model block form."""
    H = np.asarray(H, dtype=complex)
    if H.shape != (4, 4):
        raise ValueError("expected a 4x4 Hamiltonian")
    scale = float(np.max(np.abs(H)))
    if np.max(np.abs(H - H.conj().T)) > 1e-9 * scale:
        raise ValueError("Hamiltonian must be Hermitian")
    if np.max(np.abs(H[0, :])) > 1e-9 * scale or np.max(np.abs(H[:, 0])) > 1e-9 * scale:
        raise ValueError("ground-state row/column must vanish")
    if abs(H[1, 3]) > 1e-9 * scale or abs(H[1, 2].real) > 1e-9 * scale \
            or abs(H[2, 3].imag) > 1e-9 * scale:
        raise ValueError("Hamiltonian is not in the model block form")
    return (H[1, 1].real, H[2, 2].real, H[3, 3].real,
            -H[1, 2].imag, H[2, 3].real)


def eigensystem(H: np.ndarray, previous: EigenSystem | None = None) -> EigenSystem:
    """Eigendecomposition of the excited block with a reproducible gauge.

    Without `previous`, eigenvalues are ascending and each eigenvector's
    largest-magnitude component is made real and positive.  With `previous`,
    branches are matched to the previous eigenvectors by largest overlap and
    signs are aligned so Re<prev_i|new_i> > 0.
    """
    wq, wR, wL, g, G = _block_params(H)
    w, V, degenerate = kernels.eigh3(wq, wR, wL, g, G)
    if previous is None:
        return EigenSystem(omegas=w, states=_materialize_states(V),
                           gauge="canonical", degenerate=degenerate,
                           states_internal=V)
    Vp = previous.states_internal
    overlaps = Vp.T @ V  # overlaps[i, j] = <prev_i | new_j> (internal frame)
    order = _assign_branches(np.abs(overlaps))
    if order is None:
        degenerate = True
        order = np.arange(3)
    w = w[order]
    V = V[:, order]
    signs = np.sign(np.sum(Vp * V, axis=0))
    signs[signs == 0.0] = 1.0
    V = V * signs
    # phase-lock the lab-basis vectors to the previous ones so that
    # <prev_i|new_i> is real and positive whatever gauge `previous` used
    states = _states_from_internal(V)
    for i in range(3):
        z = np.vdot(previous.states[:, i], states[:, i])
        if abs(z) > 1e-12:
            states[:, i] *= z.conjugate() / abs(z)
    return EigenSystem(omegas=w, states=states, gauge="continuity",
                       degenerate=degenerate, states_internal=V)


def _states_from_internal(V: np.ndarray) -> np.ndarray:
    states = np.empty((3, 3), dtype=complex)
    states[0, :] = -1j * V[0, :]
    states[1, :] = V[1, :]
    states[2, :] = V[2, :]
    return states


def _assign_branches(absov: np.ndarray):
    """Greedy branch assignment from a 3x3 |overlap| matrix; None if ambiguous."""
    order = -np.ones(3, dtype=int)
    taken = np.zeros(3, dtype=bool)
    for i in np.argsort(-absov.max(axis=1)):
        row = absov[i].copy()
        row[taken] = -1.0
        j = int(np.argmax(row))
        if row[j] < 0.4:  # no clearly dominant partner
            return None
        order[j] = i
        taken[j] = True
    # order maps new index -> previous branch; invert to reorder new columns
    inv = np.empty(3, dtype=int)
    for j in range(3):
        inv[order[j]] = j
    return inv


def eigensystem_at(controls_at_t, params: CircuitParams,
                   previous: EigenSystem | None = None) -> EigenSystem:
    """Eigensystem directly from a control triple (omega_q, omega_R, omega_L)."""
    return eigensystem(build_hamiltonian(controls_at_t, params), previous)


def coupling_elements(es: EigenSystem) -> np.ndarray:
    """Bath-quadrature matrix elements v_i0 = <Psi_0|(a_L^dag + a_L)|Psi_i>.

    In the restricted space this is the |1,0,g> component of each eigenvector;
    completeness gives sum |v_i0|^2 = 1.
    """
    return es.states[2, :].copy()


@dataclass(frozen=True)
class RateSet:
    """Decay rates (Gamma_10, Gamma_20, Gamma_30) in 1/s."""

    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        if np.any(self.gamma < 0.0):
            raise ValueError("decay rates must be non-negative")


def decay_rates(es: EigenSystem, controls_at_t, params: CircuitParams) -> RateSet:
    """Engineered decay rates Gamma_i0 of the three excited eigenstates.

    Gamma_i0 = gamma0 * |v_i0|^2 * (omega_L * omega_i / omega_R^2) / (1 - exp(-omega_i/theta)).
    """
    _, wR, wL = controls_at_t
    if es.omegas[0] <= 0.0:
        raise ModelValidityError(
            "non-positive excitation energy; the restricted model assumes "
            "positive eigenvalues"
        )
    gam = kernels.decay_rates_from_eig(
        es.omegas, es.states_internal, wL, wR, params.gamma0, params.theta_env
    )
    return RateSet(gamma=gam)


def detailed_balance_ratio(omega_mn: float, params: CircuitParams) -> float:
    """Boltzmann ratio of upward to downward rates across a splitting omega_mn."""
    return float(np.exp(-omega_mn / params.theta_env))


def eigen_derivatives(es: EigenSystem, dH: np.ndarray):
    """First-order derivatives of the eigensystem along a Hermitian direction.

    Returns (domega, dstates): domega[i] = <Psi_i|dH|Psi_i> and dstates[:, i] =
    sum_{j != i} <Psi_j|dH|Psi_i>/(omega_i - omega_j) |Psi_j> (the gauge with
    <Psi_i|dPsi_i> = 0).  Raises NearDegeneracyError when an eigenvalue gap is
    below 1e-6 of the block norm.
    """
    dH = np.asarray(dH, dtype=complex)
    if dH.shape == (4, 4):
        block = dH[1:, 1:]
    elif dH.shape == (3, 3):
        block = dH
    else:
        raise ValueError("dH must be 4x4 (full) or 3x3 (excited block)")
    if np.max(np.abs(block - block.conj().T)) > 1e-9 * (np.max(np.abs(block)) + 1e-300):
        raise ValueError("dH must be Hermitian")
    w = es.omegas
    gaps = (w[1] - w[0], w[2] - w[1])
    if min(gaps) < kernels.PERTURBATION_GAP_TOL * es.block_norm:
        raise NearDegeneracyError(
            "eigenvalue gap below 1e-6 of the block norm; subdivide the "
            "control step instead of using first-order perturbation theory"
        )
    psi = es.states
    mat = psi.conj().T @ block @ psi  # mat[j, i] = <Psi_j|dH|Psi_i>
    domega = mat.diagonal().real.copy()
    dstates = np.zeros((3, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            if j != i:
                dstates[:, i] += (mat[j, i] / (w[i] - w[j])) * psi[:, j]
    return domega, dstates
