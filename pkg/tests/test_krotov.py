import numpy as np
import pytest

from qreset.constants import TWO_PI
from qreset.controls import ControlSet
from qreset.krotov import (
    KrotovConfig,
    default_shape,
    functional_gradient,
    krotov_step,
    liouvillian_gradient,
    optimize,
    resolve_lambdas,
    running_cost,
    total_functional,
    update_pairing,
)
from qreset.model import eigensystem_at
from qreset.params import CircuitParams
from qreset.propagation import lindbladian_apply, reset_error
from qreset.protocols import sr_protocol, sr_spec

from .conftest import random_controls, random_density, random_hermitian
from .oracles import central_difference


def short_guess(params, tau=200e-9):
    return sr_protocol(sr_spec(params, tau, t_ramp=10e-9), params, grid=5e-10)


def flat_shapes(controls):
    ones = np.ones_like(controls.times)
    return {name: ones for name in controls.active}


class TestRunningCost:
    def test_zero_at_reference(self, params):
        guess = short_guess(params)
        cfg = KrotovConfig(lambdas={"L": 1.0})
        assert running_cost(guess, guess, cfg) == 0.0

    def test_constant_offset_closed_form(self, params):
        guess = short_guess(params)
        delta = TWO_PI * 2e6
        shifted = guess.with_series("L", guess.omega_L + delta)
        lam = 3.5e-9
        cfg = KrotovConfig(lambdas={"L": lam}, shapes=flat_shapes(guess))
        expected = lam * delta ** 2 * guess.tau
        assert running_cost(shifted, guess, cfg) == pytest.approx(expected, rel=1e-12)

    def test_linear_in_lambda(self, params):
        guess = short_guess(params)
        shifted = guess.with_series("L", guess.omega_L + TWO_PI * 1e6)
        one = running_cost(shifted, guess,
                           KrotovConfig(lambdas={"L": 1e-9}, shapes=flat_shapes(guess)))
        two = running_cost(shifted, guess,
                           KrotovConfig(lambdas={"L": 2e-9}, shapes=flat_shapes(guess)))
        assert two == pytest.approx(2.0 * one, rel=1e-12)

    def test_shape_floor_guards_division(self, params):
        guess = short_guess(params)
        zeros_at_ends = default_shape(guess.times, 5e-9)
        assert zeros_at_ends[0] == 0.0
        shifted = guess.with_series("L", guess.omega_L + TWO_PI * 1e6)
        cfg = KrotovConfig(lambdas={"L": 1e-9}, shapes={"L": zeros_at_ends})
        assert np.isfinite(running_cost(shifted, guess, cfg))


class TestTotalFunctional:
    def test_lossless_guess_is_one(self, params):
        guess = short_guess(params)
        loss = CircuitParams(
            omega_L0=params.omega_L0, omega_R0=params.omega_R0,
            omega_q0=params.omega_q0, g_LR0=params.g_LR0, g_Rq=params.g_Rq,
            gamma0=1e-300, theta_env=params.theta_env)
        cfg = KrotovConfig(lambdas={"L": 1.0})
        assert total_functional(guess, guess, cfg, loss) == pytest.approx(1.0, abs=1e-14)

    def test_reduces_to_alpha_at_reference(self, params):
        guess = short_guess(params)
        cfg = KrotovConfig(lambdas={"L": 1.0})
        assert total_functional(guess, guess, cfg, params) == pytest.approx(
            reset_error(guess, params), rel=1e-14)


class TestLiouvillianGradient:
    def test_matches_finite_differences(self, params, rng):
        worst = 0.0
        for _ in range(25):
            ctl = random_controls(rng)
            es = eigensystem_at(ctl, params)
            if np.diff(es.omegas).min() < 1e-3 * es.block_norm:
                continue
            rho = random_density(rng)
            for c, name in enumerate(("q", "R", "L")):
                grad = liouvillian_gradient(rho, ctl, params, name)

                def gen_along(delta, c=c):
                    shifted = list(ctl)
                    shifted[c] += delta
                    return lindbladian_apply(rho, tuple(shifted), params)

                fd = central_difference(gen_along, 0.0,
                                        [2 ** k * TWO_PI * 1e3 for k in range(6)])
                rel = np.max(np.abs(grad - fd)) / np.max(np.abs(fd))
                worst = max(worst, rel)
        assert worst <= 1e-6

    def test_traceless(self, params, rng):
        ctl = random_controls(rng)
        rho = random_density(rng)
        for name in ("q", "R", "L"):
            grad = liouvillian_gradient(rho, ctl, params, name)
            assert abs(np.trace(grad)) <= 1e-12 * max(np.max(np.abs(grad)), 1e-300)

    def test_lossless_limit_is_commutator(self, params, rng):
        loss = CircuitParams(
            omega_L0=params.omega_L0, omega_R0=params.omega_R0,
            omega_q0=params.omega_q0, g_LR0=params.g_LR0, g_Rq=params.g_Rq,
            gamma0=1e-300, theta_env=params.theta_env)
        ctl = (params.omega_q0, params.omega_R0, params.omega_L0)
        rho = random_density(rng)
        grad = liouvillian_gradient(rho, ctl, loss, "L")
        dH = np.diag([0.0, 0.0, 0.0, 1.0]).astype(complex)
        assert np.allclose(grad, -1j * (dH @ rho - rho @ dH), atol=1e-250)

    def test_gauge_independence(self, params, rng):
        ctl = random_controls(rng)
        es = eigensystem_at(ctl, params)
        if np.diff(es.omegas).min() < 1e-3 * es.block_norm:
            ctl = (params.omega_q0, params.omega_R0, params.omega_L0)
            es = eigensystem_at(ctl, params)
        phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
        regauged = type(es)(
            omegas=es.omegas, states=es.states * phases[None, :],
            gauge="random", degenerate=es.degenerate,
            states_internal=es.states_internal)
        rho = random_density(rng)
        for name in ("q", "R", "L"):
            a = liouvillian_gradient(rho, ctl, params, name, es=es)
            b = liouvillian_gradient(rho, ctl, params, name, es=regauged)
            assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))

    def test_kernel_integrand_matches_pairing(self, params, rng):
        # the fused sweep integrand equals Re<chi, dM rho> from the gradient
        for _ in range(10):
            ctl = random_controls(rng)
            es = eigensystem_at(ctl, params)
            if np.diff(es.omegas).min() < 1e-3 * es.block_norm:
                continue
            rho = random_density(rng)
            chi = random_hermitian(rng)
            for name in ("q", "R", "L"):
                grad = liouvillian_gradient(rho, ctl, params, name)
                expected = float(np.real(np.trace(chi.conj().T @ grad)))
                got = update_pairing(rho, chi, ctl, params, name)
                assert got == pytest.approx(expected, rel=1e-10, abs=1e-18)


class TestFunctionalGradient:
    def test_matches_finite_differences_of_J(self, params, rng):
        guess = short_guess(params, tau=150e-9)
        grad = functional_gradient(guess, params, "L", refine=4)
        n = guess.times.size
        checked = 0
        for k in sorted(rng.integers(1, n - 1, 8)):
            delta = TWO_PI * 3e4
            up = guess.omega_L.copy()
            dn = guess.omega_L.copy()
            up[k] += delta
            dn[k] -= delta
            fd = (reset_error(guess.with_series("L", up), params)
                  - reset_error(guess.with_series("L", dn), params)) / (2 * delta)
            if abs(fd) < 1e-16:
                continue
            assert grad[k] == pytest.approx(fd, rel=1e-4)
            checked += 1
        assert checked >= 5


class TestKrotovStep:
    def test_huge_lambda_freezes_fields(self, params):
        guess = short_guess(params)
        cfg = KrotovConfig()
        new, info = krotov_step(guess, cfg, params, lambdas={"L": 1e6})
        assert info.max_update <= 1e-6
        assert np.allclose(new.omega_L, guess.omega_L, atol=1e-4)
        assert info.J <= reset_error(guess, params) + 1e-12

    def test_single_step_decreases_functional(self, params):
        guess = short_guess(params)
        cfg = KrotovConfig()
        lambdas = resolve_lambdas(guess, cfg, params)
        a0 = reset_error(guess, params)
        new, info = krotov_step(guess, cfg, params, lambdas=lambdas,
                                j_reference=a0)
        assert info.J < a0
        assert info.alpha < a0

    def test_endpoint_pinning_with_vanishing_shape(self, params):
        guess = short_guess(params)
        shape = default_shape(guess.times, 5e-9)
        assert shape[0] == 0.0 and shape[-1] == 0.0
        cfg = KrotovConfig(shapes={"L": shape})
        new, _ = krotov_step(guess, cfg, params,
                             lambdas=resolve_lambdas(guess, cfg, params))
        assert new.omega_L[0] == guess.omega_L[0]
        assert new.omega_L[-1] == guess.omega_L[-1]

    def test_update_drives_population_mechanism(self, params):
        # the first step's update has meaningful support inside the protocol
        guess = short_guess(params)
        cfg = KrotovConfig()
        new, info = krotov_step(guess, cfg, params)
        assert info.max_update > TWO_PI * 0.1e6


class TestOptimize:
    def test_monotone_record_and_improvement(self, params):
        guess = short_guess(params, tau=300e-9)
        cfg = KrotovConfig(max_iter=12, stop_alpha=0.0, stop_delta_J=0.0,
                           lambda_accel=0.7)
        rec = optimize(guess, cfg, params)
        assert rec.is_monotonic(slack=1e-12)
        assert len(rec.iterations) == 12
        assert rec.alpha < rec.guess_alpha
        assert rec.final_controls.omega_L[0] == guess.omega_L[0]

    def test_early_stop_when_guess_is_good_enough(self, params):
        guess = short_guess(params)
        a0 = reset_error(guess, params)
        cfg = KrotovConfig(stop_alpha=2.0 * a0)
        rec = optimize(guess, cfg, params)
        assert rec.stop_reason == "alpha"
        assert len(rec.iterations) == 0
        assert rec.final_controls is guess

    def test_inactive_channels_never_move(self, params):
        guess = short_guess(params, tau=300e-9)
        cfg = KrotovConfig(max_iter=3, stop_alpha=0.0, stop_delta_J=0.0)
        rec = optimize(guess, cfg, params)
        assert np.array_equal(rec.final_controls.omega_R, guess.omega_R)
        assert np.array_equal(rec.final_controls.omega_q, guess.omega_q)

    def test_no_active_channels_rejected(self, params):
        ctl = ControlSet.constant(100e-9, 5e-10, params.omega_q0,
                                  params.omega_R0, params.omega_L0, active=())
        with pytest.raises(ValueError):
            optimize(ctl, KrotovConfig(), params)
