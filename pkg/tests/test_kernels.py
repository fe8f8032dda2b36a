"""Cross-checks between the compiled extension and the pure-NumPy fallback."""

import numpy as np
import pytest

from qreset.constants import TWO_PI
from qreset.kernels import available_backends, get_backend

from .conftest import random_controls, random_hermitian

pytestmark = pytest.mark.skipif(
    "compiled" not in available_backends(),
    reason="compiled kernel not built",
)

P = dict(g=TWO_PI * 68e6, G=TWO_PI * 74e6, gamma0=31e6, theta=1.3092e9)


@pytest.fixture(scope="module")
def backends():
    return get_backend("compiled"), get_backend("pure")


def test_eigensystems_agree(backends, rng):
    comp, pure = backends
    for _ in range(500):
        wq, wR, wL = random_controls(rng)
        g = rng.uniform(1e7, 2e9)
        G = rng.uniform(1e7, 2e9)
        w1, V1, d1 = comp.eigh3(wq, wR, wL, g, G)
        w2, V2, d2 = pure.eigh3(wq, wR, wL, g, G)
        norm = max(abs(w1[0]), abs(w1[2]))
        assert np.max(np.abs(w1 - w2)) <= 1e-12 * norm
        assert np.max(np.abs(V1 - V2)) <= 1e-8
        assert d1 == d2


def test_generators_agree(backends, rng):
    comp, pure = backends
    ctl = (TWO_PI * 9.5e9, TWO_PI * 10e9, TWO_PI * 10.6e9)
    for adjoint in (False, True):
        for _ in range(50):
            rho = random_hermitian(rng)
            a = comp.liouvillian_apply(rho, *ctl, **P, adjoint=adjoint)
            b = pure.liouvillian_apply(rho, *ctl, **P, adjoint=adjoint)
            assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_update_integrands_agree(backends, rng):
    comp, pure = backends
    ctl = (TWO_PI * 9.5e9, TWO_PI * 10e9, TWO_PI * 10.6e9)
    for _ in range(50):
        rho = random_hermitian(rng)
        chi = random_hermitian(rng)
        for c in range(3):
            a = comp.update_integrand(rho, chi, *ctl, **P, which=c)
            b = pure.update_integrand(rho, chi, *ctl, **P, which=c)
            assert a == pytest.approx(b, rel=1e-10, abs=1e-18)


def _ramp_controls(n=120):
    t = np.linspace(0.0, 12e-9, n + 1)
    return np.ascontiguousarray(np.vstack([
        np.full(n + 1, TWO_PI * 9.5e9),
        np.full(n + 1, TWO_PI * 10e9),
        TWO_PI * (11.5e9 - 1.2e9 * t / t[-1]),
    ])), t[1] - t[0]


def test_propagation_agrees(backends, rng):
    comp, pure = backends
    ctrl, dt = _ramp_controls()
    rho0 = np.zeros((3, 4, 4), dtype=complex)
    for l in range(3):
        rho0[l, l + 1, l + 1] = 1.0
    for adjoint in (False, True):
        r1, r2 = rho0.copy(), rho0.copy()
        n = ctrl.shape[1]
        pops1 = np.zeros((n, 3, 4))
        pops2 = np.zeros((n, 3, 4))
        comp.propagate(r1, ctrl, dt, 40, **P, adjoint=adjoint, pops_out=pops1)
        pure.propagate(r2, ctrl, dt, 40, **P, adjoint=adjoint, pops_out=pops2)
        assert np.max(np.abs(r1 - r2)) <= 1e-12
        assert np.max(np.abs(pops1 - pops2)) <= 1e-12


def test_sweeps_agree(backends, rng):
    comp, pure = backends
    ctrl, dt = _ramp_controls(60)
    n = ctrl.shape[1]
    rho0 = np.zeros((3, 4, 4), dtype=complex)
    for l in range(3):
        rho0[l, l + 1, l + 1] = 1.0
    chi = np.empty((n, 3, 4, 4), dtype=complex)
    chi[:] = np.eye(4) / 3.0
    chi[:, :, 0, 0] += np.linspace(0.0, 0.3, n)[:, None]
    active = np.array([0, 0, 1], dtype=np.uint8)
    shapes = np.ones((3, n))
    lam = np.full(3, 1e-9)
    outs = []
    for backend in (comp, pure):
        r = rho0.copy()
        new = np.empty_like(ctrl)
        backend.krotov_sweep(r, chi.copy(), ctrl, new, active, shapes, lam,
                             dt, 40, **P)
        outs.append((r, new))
    assert np.max(np.abs(outs[0][0] - outs[1][0])) <= 1e-10
    assert np.max(np.abs(outs[0][1] - outs[1][1])) <= 1e-6  # rad/s on 6e10
