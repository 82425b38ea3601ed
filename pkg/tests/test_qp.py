"""Constraint-row construction and the active-set least-distance solver."""

from itertools import combinations

import numpy as np
import pytest

from stewart_cbf.barriers import BarrierConfig, evaluate
from stewart_cbf.dynamics import PlantState, dynamics_terms
from stewart_cbf.errors import QpInfeasibleError
from stewart_cbf.qp import (
    Family,
    QpProblem,
    build_constraints,
    qp_filter,
    solve_qp,
)
from stewart_cbf.safety_filter import Branch, closed_form_filter, gram_diagnosis

from conftest import random_filter_instance, random_state


def both_sided_config():
    return BarrierConfig(
        q_max=[0.12, 0.12, 0.55, 0.4, 0.4, 0.4],
        q_min=[-0.12, -0.12, 0.3, -0.4, -0.4, -0.4],
        qdot_max=[0.08] * 6,
        qdot_min=[-0.08] * 6,
        lse_beta=50.0,
    )


def enumeration_oracle(a, b, f_des, feas_tol=1e-9):
    """Exhaustive search over candidate active subsets; best feasible point."""
    n = a.shape[0]
    best = None
    if np.all(a @ f_des <= b + feas_tol):
        best = f_des.copy()
    for size in range(1, min(6, n) + 1):
        for subset in combinations(range(n), size):
            aw = a[list(subset)]
            gram = aw @ aw.T
            try:
                y = np.linalg.solve(gram, b[list(subset)] - aw @ f_des)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(gram) > 1e12:
                continue
            f = f_des + aw.T @ y
            if np.all(a @ f <= b + feas_tol):
                if best is None or (np.linalg.norm(f - f_des)
                                    < np.linalg.norm(best - f_des)):
                    best = f
    return best


def random_feasible_problem(rng, n_rows):
    """Rows with a guaranteed feasible point; F_des often violates several."""
    a = rng.normal(size=(n_rows, 6))
    witness = rng.normal(size=6)
    slack = np.where(rng.random(n_rows) < 0.35, 0.0, rng.uniform(0, 1.5, n_rows))
    b = a @ witness + slack
    f_des = witness + rng.normal(scale=1.2, size=6)
    return QpProblem(F_des=f_des, A=a, b=b, labels=[None] * n_rows)


class TestBuildConstraints:
    def test_row_count_both_sided(self, model):
        rng = np.random.default_rng(211)
        cfg = both_sided_config()
        state = random_state(rng)
        problem = build_constraints(state, model, cfg)
        assert problem.A.shape == (24, 6)
        assert len(problem.labels) == 24
        fams = [lab.family for lab in problem.labels]
        assert fams.count(Family.POSITION) == 12
        assert fams.count(Family.VELOCITY) == 12

    def test_zero_velocity_drops_position_rows(self, model):
        cfg = both_sided_config()
        state = PlantState([0, 0, 0.42, 0, 0, 0], np.zeros(6))
        problem = build_constraints(state, model, cfg)
        assert all(lab.family is Family.VELOCITY for lab in problem.labels)
        assert problem.A.shape == (12, 6)

    def test_aggregated_rows_match_barrier_sensitivities(self, model):
        rng = np.random.default_rng(223)
        cfg = both_sided_config()
        state, dyn, force = random_filter_instance(rng, model)
        ev = evaluate(state, model, cfg, force, dyn=dyn)
        problem = build_constraints(state, model, cfg, mode="aggregated",
                                    force_des=force, dyn=dyn)
        assert problem.A.shape == (2, 6)
        np.testing.assert_allclose(problem.A[0], ev.a_p, atol=1e-14)
        np.testing.assert_allclose(problem.A[1], ev.a_v, atol=1e-14)
        slack = problem.b - problem.A @ force
        np.testing.assert_allclose(slack, [ev.psi_p, ev.psi_v], atol=1e-12)

    def test_individual_slack_equals_single_constraint_residual(self, model):
        rng = np.random.default_rng(227)
        cfg = both_sided_config()
        for _ in range(20):
            state, dyn, force = random_filter_instance(rng, model)
            problem = build_constraints(state, model, cfg, force_des=force,
                                        dyn=dyn)
            slack = problem.b - problem.A @ force
            row = 0
            for j in range(cfg.n_position):
                sub = cfg.restrict(j, 0)
                ev = evaluate(state, model, sub, force, dyn=dyn)
                assert slack[row] == pytest.approx(ev.psi_p, abs=1e-12)
                row += 1
            for k in range(cfg.n_velocity):
                sub = cfg.restrict(0, k)
                ev = evaluate(state, model, sub, force, dyn=dyn)
                assert slack[row] == pytest.approx(ev.psi_v, abs=1e-12)
                row += 1


class TestSolver:
    def test_interior_optimum(self):
        rng = np.random.default_rng(229)
        a = rng.normal(size=(5, 6))
        f_des = rng.normal(size=6)
        b = a @ f_des + rng.uniform(0.1, 1.0, 5)
        sol = solve_qp(QpProblem(F_des=f_des, A=a, b=b, labels=[None] * 5))
        np.testing.assert_array_equal(sol.F_star, f_des)
        assert sol.active_set == []

    def test_single_violated_row_projection(self):
        rng = np.random.default_rng(233)
        a = rng.normal(size=(1, 6))
        f_des = rng.normal(size=6)
        b = np.array([a[0] @ f_des - 0.7])  # violated by 0.7
        sol = solve_qp(QpProblem(F_des=f_des, A=a, b=b, labels=[None]))
        expected = f_des - 0.7 / (a[0] @ a[0]) * a[0]
        np.testing.assert_allclose(sol.F_star, expected, rtol=1e-12)
        assert sol.active_set == [0]
        assert sol.multipliers[0] > 0

    def test_matches_enumeration_oracle_500(self):
        rng = np.random.default_rng(239)
        for _ in range(500):
            n_rows = int(rng.integers(1, 9))
            problem = random_feasible_problem(rng, n_rows)
            sol = solve_qp(problem)
            oracle = enumeration_oracle(problem.A, problem.b, problem.F_des)
            assert oracle is not None
            d_sol = np.linalg.norm(sol.F_star - problem.F_des)
            d_opt = np.linalg.norm(oracle - problem.F_des)
            assert d_sol <= d_opt * (1 + 1e-9) + 1e-12
            np.testing.assert_allclose(sol.F_star, oracle, rtol=1e-7,
                                       atol=1e-9 * (1 + d_opt))

    def test_kkt_certificate(self):
        rng = np.random.default_rng(241)
        for _ in range(500):
            n_rows = int(rng.integers(1, 9))
            problem = random_feasible_problem(rng, n_rows)
            sol = solve_qp(problem)
            # Primal feasibility.
            assert np.all(problem.A @ sol.F_star <= problem.b + 1e-9)
            # Dual nonnegativity.
            assert np.all(sol.multipliers >= -1e-8)
            # Stationarity of the Lagrangian.
            grad = 2 * (sol.F_star - problem.F_des) + problem.A.T @ sol.multipliers
            assert np.linalg.norm(grad) <= 1e-8 * (1 + np.linalg.norm(sol.F_star))
            # Complementary slackness.
            resid = sol.multipliers * (problem.A @ sol.F_star - problem.b)
            assert np.all(np.abs(resid) <= 1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(251)
        problem = random_feasible_problem(rng, 8)
        s1 = solve_qp(problem)
        s2 = solve_qp(problem)
        np.testing.assert_array_equal(s1.F_star, s2.F_star)
        assert s1.active_set == s2.active_set
        assert s1.iterations == s2.iterations

    def test_removing_a_row_never_increases_distance(self):
        rng = np.random.default_rng(257)
        for _ in range(100):
            problem = random_feasible_problem(rng, 6)
            full = np.linalg.norm(solve_qp(problem).F_star - problem.F_des)
            for drop in range(6):
                keep = [i for i in range(6) if i != drop]
                reduced = QpProblem(F_des=problem.F_des, A=problem.A[keep],
                                    b=problem.b[keep], labels=[None] * 5)
                partial = np.linalg.norm(solve_qp(reduced).F_star - problem.F_des)
                assert partial <= full + 1e-9

    def test_parallel_rows_resolved_by_swap(self):
        # Two parallel rows with different offsets: tighter one must bind.
        a = np.array([[1.0, 0, 0, 0, 0, 0], [2.0, 0, 0, 0, 0, 0]])
        b = np.array([-1.0, -4.0])  # x <= -1 and x <= -2
        f_des = np.zeros(6)
        sol = solve_qp(QpProblem(F_des=f_des, A=a, b=b, labels=["r0", "r1"]))
        assert sol.F_star[0] == pytest.approx(-2.0)
        assert sol.active_set == [1]

    def test_infeasible_conflict_reported(self):
        # x <= -1 and -x <= -1 (x >= 1) cannot both hold.
        a = np.array([[1.0, 0, 0, 0, 0, 0], [-1.0, 0, 0, 0, 0, 0]])
        b = np.array([-1.0, -1.0])
        with pytest.raises(QpInfeasibleError) as exc:
            solve_qp(QpProblem(F_des=np.zeros(6), A=a, b=b, labels=["lo", "hi"]))
        assert len(exc.value.rows) >= 2


class TestQpFilter:
    def test_deeply_safe_passthrough(self, model):
        # Bounds far enough out that even the derivative conditions hold;
        # rotational accelerations reach ~1e3 for small pushes, so "far"
        # means 1e6 here.
        cfg = BarrierConfig(q_max=[1e6] * 6, q_min=[-1e6] * 6,
                            qdot_max=[1e6] * 6, qdot_min=[-1e6] * 6,
                            lse_beta=1.0)
        rng = np.random.default_rng(263)
        state, dyn, force = random_filter_instance(rng, model, push=3.0)
        dec = qp_filter(state, model, force, cfg, dyn=dyn)
        np.testing.assert_array_equal(dec.F_out, force)
        assert dec.branch is Branch.NONE_ACTIVE

    def test_all_row_slacks_nonnegative_after_filtering(self, model):
        rng = np.random.default_rng(269)
        cfg = both_sided_config()
        for _ in range(200):
            state, dyn, force = random_filter_instance(rng, model)
            problem = build_constraints(state, model, cfg, force_des=force,
                                        dyn=dyn)
            dec = qp_filter(state, model, force, cfg, dyn=dyn)
            slack = problem.b - problem.A @ dec.F_out
            assert np.min(slack) >= -1e-9

    def test_aggregated_mode_equals_closed_form(self, model):
        rng = np.random.default_rng(271)
        cfg = both_sided_config()
        checked = 0
        while checked < 200:
            state, dyn, force = random_filter_instance(rng, model, push=18.0)
            ev = evaluate(state, model, cfg, force, dyn=dyn)
            if gram_diagnosis(ev.a_p, ev.a_v).singular:
                continue
            cf = closed_form_filter(state, model, force, cfg, dyn=dyn,
                                    evaluation=ev)
            agg = qp_filter(state, model, force, cfg, dyn=dyn, mode="aggregated")
            np.testing.assert_allclose(agg.F_out, cf.F_out, rtol=1e-8,
                                       atol=1e-8 * (1 + np.linalg.norm(cf.F_out)))
            checked += 1
