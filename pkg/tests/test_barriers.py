"""Barrier values, LSE composition, sensitivities, and residuals."""

import numpy as np
import pytest

from stewart_cbf.barriers import (
    BarrierConfig,
    barrier_gradients,
    energy_barrier,
    evaluate,
    position_barrier,
    residuals,
    sensitivity_vectors,
    softmax_weights,
    softmin,
    velocity_barrier,
)
from stewart_cbf.dynamics import PlantState, PlatformModel, dynamics_terms
from stewart_cbf.errors import ConfigError

from conftest import random_state


def rich_config(beta=50.0, **overrides):
    """Bounds on all axes, both sides; loose enough for random test states."""
    base = dict(
        q_max=[0.12, 0.12, 0.55, 0.4, 0.4, 0.4],
        q_min=[-0.12, -0.12, 0.3, -0.4, -0.4, -0.4],
        qdot_max=[0.08] * 6,
        qdot_min=[-0.08] * 6,
        lse_beta=beta,
    )
    base.update(overrides)
    return BarrierConfig(**base)


def scenario_like_config():
    return BarrierConfig(
        q_max=[0.1, 0.1, 0.5, None, None, None],
        qdot_max=[2e-3, 2e-3, 10e-3, None, None, None],
        q_min=[None, -0.2, None, None, None, None],
        qdot_min=[None, None, -0.05, None, None, None],
    )


class TestConfig:
    def test_constraint_enumeration_order(self):
        cfg = scenario_like_config()
        assert cfg.position_labels() == ["X_max", "Y_max", "Z_max", "Y_min"]
        assert cfg.velocity_labels() == ["X_max", "Y_max", "Z_max", "Z_min"]

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ConfigError, match="axis Y"):
            BarrierConfig(q_max=[0.1, -0.3, 0.5, None, None, None],
                          q_min=[None, 0.2, None, None, None, None],
                          qdot_max=[0.01] * 6)

    def test_requires_both_families(self):
        with pytest.raises(ConfigError, match="at least one"):
            BarrierConfig(q_max=[0.1] * 6)

    def test_rejects_nonpositive_scalings(self):
        with pytest.raises(ConfigError, match="alpha_vk"):
            BarrierConfig(q_max=[0.1] * 6, qdot_max=[0.01] * 6,
                          alpha_vk=[1, 1, 1, 1, 1, 0.0])


class TestBarrierValues:
    def test_position_boundary(self):
        cfg = rich_config()
        state = PlantState([0.12, 0, 0.4, 0, 0, 0], np.zeros(6))
        assert position_barrier(state, cfg, 0) == 0.0

    def test_position_margin_x(self):
        cfg = BarrierConfig(q_max=[0.1, 0.1, 0.5, None, None, None],
                            qdot_max=[2e-3, 2e-3, 10e-3, None, None, None])
        state = PlantState([0, 0, 0.4, 0, 0, 0], np.zeros(6))
        assert position_barrier(state, cfg, 0) == pytest.approx(0.1)
        assert position_barrier(state, cfg, 2) == pytest.approx(0.1)

    def test_lower_bound_orientation(self):
        cfg = rich_config()
        state = PlantState([0, 0, 0.35, 0, 0, 0], np.zeros(6))
        j = cfg.position_labels().index("Z_min")
        assert position_barrier(state, cfg, j) == pytest.approx(0.05)

    def test_velocity_values(self):
        cfg = BarrierConfig(q_max=[0.1, 0.1, 0.5, None, None, None],
                            qdot_max=[2e-3, 2e-3, 10e-3, None, None, None])
        state = PlantState([0, 0, 0.4, 0, 0, 0], [0, 0, 5e-3, 0, 0, 0])
        assert velocity_barrier(state, cfg, 0) == pytest.approx(2e-3)
        assert velocity_barrier(state, cfg, 2) == pytest.approx(5e-3)
        boundary = PlantState([0, 0, 0.4, 0, 0, 0], [2e-3, 0, 0, 0, 0, 0])
        assert velocity_barrier(boundary, cfg, 0) == 0.0

    def test_energy_barrier_at_rest(self, model):
        cfg = rich_config(alpha_e=1.7)
        state = PlantState([0, 0, 0.4, 0, 0, 0], np.zeros(6))
        for j in range(cfg.n_position):
            expected = cfg.alpha_e * position_barrier(state, cfg, j)
            assert energy_barrier(state, model, cfg, j) == pytest.approx(expected)
        at_bound = PlantState([0.12, 0, 0.4, 0, 0, 0], np.zeros(6))
        assert energy_barrier(at_bound, model, cfg, 0) == pytest.approx(0.0)

    def test_energy_barrier_quadratic_form_oracle(self, model):
        rng = np.random.default_rng(31)
        cfg = rich_config()
        for _ in range(20):
            state = random_state(rng)
            m = dynamics_terms(state, model).M
            ke = 0.5 * sum(state.qdot[i] * m[i, j] * state.qdot[j]
                           for i in range(6) for j in range(6))
            expected = -ke + cfg.alpha_e * position_barrier(state, cfg, 1)
            assert energy_barrier(state, model, cfg, 1) == pytest.approx(expected, rel=1e-12)


class TestSoftmin:
    def test_single_value_exact(self):
        for beta in (1e-3, 1.0, 1e6):
            assert softmin([0.7321], beta) == pytest.approx(0.7321, abs=1e-15)

    def test_pair_of_equal_values(self):
        assert softmin([1.0, 1.0], 1.0) == pytest.approx(1.0 - np.log(2.0), abs=1e-14)

    def test_large_beta_approaches_min(self):
        vals = [0.2, 1.0, 2.0]
        beta = 1e4
        out = softmin(vals, beta)
        assert min(vals) - np.log(3) / beta <= out <= min(vals)
        assert out == pytest.approx(0.2, abs=np.log(3) / beta)

    def test_sandwich_exact_10k_random(self):
        rng = np.random.default_rng(37)
        for _ in range(10_000):
            n = int(rng.integers(1, 13))
            vals = rng.uniform(-5, 5, n)
            beta = float(rng.choice([1.0, 10.0, 100.0]))
            out = softmin(vals, beta)
            assert out <= np.min(vals) + 1e-12
            assert out >= np.min(vals) - np.log(n) / beta - 1e-12

    def test_gap_monotone_in_beta(self):
        vals = np.array([0.2, 1.0, 2.0])
        gaps = [np.min(vals) - softmin(vals, b)
                for b in (0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 1e3)]
        assert all(g >= -1e-15 for g in gaps)
        assert all(gaps[i + 1] <= gaps[i] + 1e-15 for i in range(len(gaps) - 1))

    def test_no_overflow_at_extreme_arguments(self):
        with np.errstate(over="raise"):
            assert np.isfinite(softmin([1e3, -1e3, 0.0], 1e3))
            assert softmin([1e3, -1e3], 1e3) == pytest.approx(-1e3)
            assert np.isfinite(softmin([-1e6, 1e6], 1.0))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmin([], 1.0)

    def test_weighted_scaling(self):
        # Scaled soft-min brackets the minimum of the scaled values.
        vals = np.array([0.4, 0.9])
        scal = np.array([2.0, 0.5])
        out = softmin(vals, 10.0, scal)
        target = np.min(vals * scal)
        assert target - np.log(2) / 10.0 <= out <= target


class TestSoftmaxWeights:
    def test_single(self):
        np.testing.assert_allclose(softmax_weights([3.3], 2.0), [1.0])

    def test_uniform_for_equal_values(self):
        np.testing.assert_allclose(softmax_weights([0.5] * 4, 7.0), [0.25] * 4, atol=1e-15)

    def test_hand_evaluated_pair(self):
        w = softmax_weights([0.0, 1.0], 1.0)
        expected = np.array([1.0, np.exp(-1.0)]) / (1.0 + np.exp(-1.0))
        np.testing.assert_allclose(w, expected, atol=1e-12)
        assert w[0] == pytest.approx(0.7311, abs=5e-5)
        assert w[1] == pytest.approx(0.2689, abs=5e-5)

    def test_normalization_and_range(self):
        rng = np.random.default_rng(41)
        for _ in range(500):
            n = int(rng.integers(1, 13))
            w = softmax_weights(rng.uniform(-5, 5, n), float(rng.uniform(0.1, 100)))
            assert np.all(w >= 0)
            assert abs(np.sum(w) - 1.0) <= 1e-12


class TestSensitivities:
    def test_zero_velocity_kills_position_sensitivity(self, model):
        cfg = rich_config()
        state = PlantState([0.01, 0.02, 0.42, 0.03, -0.02, 0.01], np.zeros(6))
        ev = evaluate(state, model, cfg, np.zeros(6))
        np.testing.assert_allclose(ev.a_p, 0.0)

    def test_velocity_sensitivity_row_combination_oracle(self, model):
        rng = np.random.default_rng(43)
        cfg = rich_config()
        for _ in range(20):
            state = random_state(rng)
            dyn = dynamics_terms(state, model)
            ev = evaluate(state, model, cfg, np.zeros(6), dyn=dyn)
            minv_h = np.linalg.inv(dyn.M) @ dyn.H
            expected = np.zeros(6)
            for k in range(cfg.n_velocity):
                row = minv_h[cfg.vel_axes[k], :]
                expected += cfg.vel_sides[k] * ev.pi_v[k] * row
            np.testing.assert_allclose(ev.a_v, expected, rtol=1e-12, atol=1e-15)

    def test_single_constraint_reduction(self, model):
        rng = np.random.default_rng(47)
        cfg = BarrierConfig(q_max=[0.12, None, None, None, None, None],
                            qdot_max=[None, None, 0.08, None, None, None])
        for _ in range(20):
            state = random_state(rng)
            dyn = dynamics_terms(state, model)
            ev = evaluate(state, model, cfg, np.zeros(6), dyn=dyn)
            np.testing.assert_array_equal(ev.a_p, dyn.H.T @ state.qdot)
            minv_h = np.linalg.solve(dyn.M, dyn.H)
            np.testing.assert_allclose(ev.a_v, minv_h.T @ np.eye(6)[2], rtol=1e-14)

    def test_weighted_vectors_match_plain_under_unit_scalings(self, model):
        rng = np.random.default_rng(53)
        cfg = rich_config()
        state = random_state(rng)
        f = rng.uniform(-5, 5, 6)
        plain = evaluate(state, model, cfg, f, weighted=False)
        weighted = evaluate(state, model, cfg, f, weighted=True)
        np.testing.assert_array_equal(plain.a_p, weighted.a_p)
        np.testing.assert_array_equal(plain.a_v, weighted.a_v)
        assert plain.psi_p == weighted.psi_p
        assert plain.psi_v == weighted.psi_v

    def test_sensitivity_vectors_match_evaluate(self, model):
        rng = np.random.default_rng(59)
        cfg = rich_config()
        state = random_state(rng)
        ev = evaluate(state, model, cfg, np.zeros(6))
        a_p, a_v = sensitivity_vectors(state, model, ev, cfg)
        np.testing.assert_allclose(a_p, ev.a_p, rtol=1e-14)
        np.testing.assert_allclose(a_v, ev.a_v, rtol=1e-14)


class TestResiduals:
    def test_linearity_in_force(self, model):
        rng = np.random.default_rng(61)
        cfg = rich_config()
        for _ in range(50):
            state = random_state(rng)
            f0 = rng.uniform(-5, 5, 6)
            df = rng.uniform(-3, 3, 6)
            ev0 = evaluate(state, model, cfg, f0)
            ev1 = evaluate(state, model, cfg, f0 + df)
            pred_p = ev0.psi_p - ev0.a_p @ df
            pred_v = ev0.psi_v - ev0.a_v @ df
            assert ev1.psi_p == pytest.approx(pred_p, rel=1e-10, abs=1e-13)
            assert ev1.psi_v == pytest.approx(pred_v, rel=1e-10, abs=1e-13)

    def test_rest_with_gravity_balance(self, model):
        cfg = rich_config()
        state = PlantState([0.01, -0.02, 0.42, 0, 0, 0], np.zeros(6))
        dyn = dynamics_terms(state, model)
        force = dyn.J.T @ dyn.G  # H F = G
        ev = evaluate(state, model, cfg, force, dyn=dyn)
        assert ev.psi_p == pytest.approx(cfg.alpha_D * ev.hbar_D, rel=1e-12)

    def test_aggregate_rate_matches_flow_derivative(self, model):
        from stewart_cbf.dynamics import control_affine_rhs

        rng = np.random.default_rng(67)
        cfg = rich_config()
        dt = 1e-7
        checked = 0
        for _ in range(30):
            state = random_state(rng)
            dyn = dynamics_terms(state, model)
            force = dyn.J.T @ dyn.G + rng.uniform(-2, 2, 6)
            ev = evaluate(state, model, cfg, force, dyn=dyn)
            xdot = control_affine_rhs(state, force, model)

            def hbars(q, qd):
                s = PlantState(q, qd)
                e = evaluate(s, model, cfg, force)
                return e.hbar_D, e.hbar_v

            dp, dv = hbars(state.q + dt * xdot[:6], state.qdot + dt * xdot[6:])
            mp, mv = hbars(state.q - dt * xdot[:6], state.qdot - dt * xdot[6:])
            fd_p = (dp - mp) / (2 * dt)
            fd_v = (dv - mv) / (2 * dt)
            rate_p = ev.psi_p - cfg.alpha_D * ev.hbar_D
            rate_v = ev.psi_v - cfg.alpha_v * ev.hbar_v
            if abs(rate_p) > 1e-3:
                assert fd_p == pytest.approx(rate_p, rel=1e-4)
                checked += 1
            if abs(rate_v) > 1e-3:
                assert fd_v == pytest.approx(rate_v, rel=1e-4)
        assert checked >= 10

    def test_residuals_helper_matches_evaluate(self, model):
        rng = np.random.default_rng(71)
        cfg = rich_config()
        state = random_state(rng)
        f = rng.uniform(-4, 4, 6)
        ev = evaluate(state, model, cfg, f)
        psi_p, psi_v = residuals(state, model, f, ev, cfg)
        assert psi_p == pytest.approx(ev.psi_p, rel=1e-14)
        assert psi_v == pytest.approx(ev.psi_v, rel=1e-14)


class TestAggregateProperties:
    def test_aggregate_below_min(self, model):
        rng = np.random.default_rng(73)
        cfg = rich_config()
        for _ in range(200):
            state = random_state(rng)
            ev = evaluate(state, model, cfg, np.zeros(6))
            assert ev.hbar_D <= np.min(ev.h_D) + 1e-12
            assert ev.hbar_v <= np.min(ev.h_v) + 1e-12
            assert abs(np.sum(ev.pi_p) - 1) <= 1e-12
            assert abs(np.sum(ev.pi_v) - 1) <= 1e-12

    def test_single_constraint_aggregates_equal_scalars(self, model):
        rng = np.random.default_rng(79)
        cfg = BarrierConfig(q_max=[None, 0.12, None, None, None, None],
                            qdot_max=[None, None, None, 0.08, None, None])
        for _ in range(100):
            state = random_state(rng)
            dyn = dynamics_terms(state, model)
            f = rng.uniform(-5, 5, 6)
            ev = evaluate(state, model, cfg, f, dyn=dyn)
            assert abs(ev.hbar_D - energy_barrier(state, model, cfg, 0, dyn=dyn)) <= 1e-14
            assert abs(ev.hbar_v - velocity_barrier(state, cfg, 0)) <= 1e-14
            np.testing.assert_allclose(ev.pi_p, [1.0])
            np.testing.assert_allclose(ev.pi_v, [1.0])

    def test_gradients_match_finite_differences(self, model):
        rng = np.random.default_rng(83)
        cfg = rich_config(beta=20.0)
        step = 1e-6
        for _ in range(1000):
            state = random_state(rng)
            grad_d, grad_v = barrier_gradients(state, model, cfg)

            def hbars(x):
                s = PlantState(x[:6], x[6:])
                ev = evaluate(s, model, cfg, np.zeros(6))
                return np.array([ev.hbar_D, ev.hbar_v])

            x0 = state.x
            fd = np.zeros((12, 2))
            for i in range(12):
                xp, xm = x0.copy(), x0.copy()
                xp[i] += step
                xm[i] -= step
                fd[i] = (hbars(xp) - hbars(xm)) / (2 * step)
            np.testing.assert_allclose(grad_d, fd[:, 0], rtol=1e-5, atol=1e-9)
            np.testing.assert_allclose(grad_v, fd[:, 1], rtol=1e-5, atol=1e-9)
