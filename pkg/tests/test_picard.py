"""Linearized iteration with the auxiliary gradient, contraction metric and eta consistency."""

import math

import numpy as np
import pytest

from nonlocal_nsk import picard as picard_mod
from nonlocal_nsk.dynamics import FixedStep, PhysParams, divergence_norm, make_state, simulate
from nonlocal_nsk.experiments import default_initial_state
from nonlocal_nsk.picard import (
    _midpoint,
    constant_iterate,
    contraction_metric,
    eta_consistency,
    linearized_step,
    picard_solve,
)
from nonlocal_nsk.spectral import make_grid

T = 0.02


@pytest.fixture(scope="module")
def grid():
    return make_grid(2, 32)


@pytest.fixture(scope="module")
def init(grid):
    return default_initial_state(grid)


@pytest.fixture(scope="module")
def solved(init):
    return picard_solve(init, PhysParams(), T, tol=1e-24, max_iter=20)


def equilibrium(grid):
    return make_state(grid, np.full(grid.shape, 1.2), np.zeros((2,) + grid.shape))


class TestMidpointInterpolation:
    @pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
    def test_exact_for_cubics(self, k):
        t = np.linspace(0, 1, 6)
        poly = lambda s: 1 - 2 * s + 3 * s**2 - 4 * s**3
        assert _midpoint(poly(t), k) == pytest.approx(poly(0.5 * (t[k] + t[k + 1])), abs=1e-14)


class TestLinearizedStep:
    def test_equilibrium_is_fixed_point(self, grid):
        s = equilibrium(grid)
        prev = constant_iterate(s, T, 0.005)
        nxt = linearized_step(prev, s, PhysParams())
        assert nxt.index == 1
        assert np.abs(nxt.rho_hat - prev.rho_hat).max() < 1e-15
        assert np.abs(nxt.u_hat).max() < 1e-15
        assert np.abs(nxt.eta_hat).max() < 1e-15

    def test_first_iterate_divergence_free(self, init):
        prev = constant_iterate(init, T, 0.005)
        nxt = linearized_step(prev, init, PhysParams())
        assert nxt.times.tolist() == prev.times.tolist()
        for i in range(len(nxt.times)):
            assert divergence_norm(nxt.state(i)) < 1e-8

    def test_keeps_initial_data(self, init):
        prev = constant_iterate(init, T, 0.005)
        nxt = linearized_step(prev, init, PhysParams())
        np.testing.assert_array_equal(nxt.rho_hat[0], prev.rho_hat[0])
        np.testing.assert_array_equal(nxt.u_hat[0], prev.u_hat[0])
        np.testing.assert_array_equal(nxt.eta_hat[0], prev.eta_hat[0])

    def test_mesh_has_at_least_three_steps(self, init):
        assert len(constant_iterate(init, 0.01, 1.0).times) == 4

    @pytest.mark.parametrize("T_, dt", [(0.0, 0.1), (0.1, 0.0), (-1.0, 0.1)])
    def test_rejects_bad_mesh(self, init, T_, dt):
        with pytest.raises(ValueError):
            constant_iterate(init, T_, dt)


class TestPicardSolve:
    def test_equilibrium_converges_immediately(self, grid):
        it, rep = picard_solve(equilibrium(grid), PhysParams(), T, tol=1e-20)
        assert rep.converged and rep.iterations == 1
        assert rep.x_sequence[0] <= 1e-20

    def test_contracts_geometrically(self, solved):
        _, rep = solved
        assert rep.converged and not rep.non_contraction
        assert all(x >= 0 for x in rep.x_sequence)
        assert all(r < 1 for r in rep.ratios)
        assert rep.ratios[0] < 1e-3
        assert len(rep.x_history) == rep.iterations

    def test_matches_direct_solve(self, solved, init):
        it, _ = solved
        h = it.times[1] - it.times[0]
        traj = simulate(init, PhysParams(), T, FixedStep(h * (1 + 1e-12)), n_frames=it.n_steps)
        assert traj.steps == it.n_steps
        gap = 0.0
        for i, frame in enumerate(traj.frames):
            d_rho = it.rho(i).values - frame.rho.values
            d_u = np.stack([c.values for c in it.u(i)]) - frame.u_array()
            gap = max(gap, math.sqrt(np.sum(d_rho**2) * it.grid.dx**2) + math.sqrt(np.sum(d_u**2) * it.grid.dx**2))
        assert gap < 1e-10

    def test_eta_consistency(self, solved, init):
        it, _ = solved
        grad_norm = math.sqrt(sum(np.sum(c.values**2) for c in make_state(
            init.grid, init.rho.values, init.u_array(), eta=True).eta) * init.grid.dx**2)
        assert eta_consistency(it) <= 1e-6 * grad_norm

    def test_rejects_nonpositive_tol(self, init):
        with pytest.raises(ValueError):
            picard_solve(init, PhysParams(), T, tol=0.0)

    def test_large_horizon_flags_without_crashing(self):
        g = make_grid(2, 16)
        it, rep = picard_solve(
            default_initial_state(g, 1.0, 0.5), PhysParams(kappa=5.0), 3.0, max_iter=10, dt=0.5
        )
        assert rep.non_contraction and not rep.converged
        assert rep.message
        assert it.index == rep.iterations

    def test_growing_ratios_set_flag(self, monkeypatch, init):
        # feed iterates whose successive differences grow by 2x each time
        base = constant_iterate(init, T, 0.005)
        scale = {"v": 1e-3}

        def fake_step(prev, init_, params):
            scale["v"] *= 2
            nxt = picard_mod.PicardIterate(
                base.grid, base.times, prev.rho_hat + scale["v"], prev.u_hat, prev.eta_hat, prev.index + 1
            )
            return nxt

        monkeypatch.setattr(picard_mod, "linearized_step", fake_step)
        _, rep = picard_solve(init, PhysParams(), T, max_iter=10, dt=0.005)
        assert rep.non_contraction
        assert rep.iterations == 4
        assert all(r > 1 for r in rep.ratios)


class TestEtaConsistency:
    def test_zero_at_start(self, init):
        assert eta_consistency(constant_iterate(init, T, 0.005)) == 0.0

    @pytest.mark.parametrize("delta", [1e-3, 0.5])
    def test_perturbation_norm(self, init, grid, delta):
        it = constant_iterate(init, T, 0.005)
        x, _ = grid.coordinates()
        it.eta_hat[:, 0] += grid.fft(delta * np.sin(x))
        assert eta_consistency(it) == pytest.approx(delta * math.pi * math.sqrt(2), rel=1e-12)


class TestContractionMetric:
    def test_zero_for_identical(self, init):
        it = constant_iterate(init, T, 0.005)
        assert np.all(contraction_metric(it, it) == 0)

    def test_closed_form(self, init, grid):
        a = constant_iterate(init, T, 0.005)
        b = constant_iterate(init, T, 0.005)
        x, y = grid.coordinates()
        b.u_hat[:, 1] += grid.fft(np.cos(y))
        b.rho_hat[:] += grid.fft(0.1 * np.sin(x))
        # ||cos y||^2 + ||0.1 sin x||^2 = 2 pi^2 (1 + 0.01)
        np.testing.assert_allclose(contraction_metric(a, b), 2 * math.pi**2 * 1.01, rtol=1e-13)

    def test_mesh_mismatch(self, init):
        with pytest.raises(ValueError):
            contraction_metric(constant_iterate(init, T, 0.005), constant_iterate(init, T, 0.002))
