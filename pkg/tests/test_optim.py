import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import grid_min, random_problem, random_simplex
from satforest.attention import AttentionConfig, predict_batch, softmax_baseline
from satforest.data import gen_friedman
from satforest.forest import fit_forest
from satforest.optim import (
    TrainingProblem,
    project_simplex,
    solve_lp,
    solve_qp,
    train,
)


class TestProjectSimplex:
    def test_interior_shift(self):
        np.testing.assert_allclose(project_simplex(np.array([0.5, 0.7])), [0.4, 0.6])

    def test_vertex(self):
        np.testing.assert_allclose(project_simplex(np.array([2.0, -1.0])), [1.0, 0.0])

    def test_idempotent(self):
        z = np.array([0.25, 0.75])
        np.testing.assert_array_equal(project_simplex(z), z)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            project_simplex(np.array([np.inf, 0.0]))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.integers(0, 10**6))
    def test_projection_properties(self, z, seed):
        z = np.asarray(z)
        p = project_simplex(z)
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) <= 1e-9
        # no random feasible point may be closer to z than the projection
        rng = np.random.default_rng(seed)
        for _ in range(5):
            q = random_simplex(rng, len(z))
            assert np.linalg.norm(p - z) <= np.linalg.norm(q - z) + 1e-9


class TestSolveQp:
    def test_flat_objective_returns_feasible(self):
        rng = np.random.default_rng(0)
        n, T = 15, 4
        problem = TrainingProblem(
            const=rng.normal(size=n),
            coef_w=np.zeros((n, T)),
            coef_v=np.zeros((n, T)),
            y=rng.normal(size=n),
        )
        w, v, report = solve_qp(problem)
        assert report.converged and report.iterations == 0
        np.testing.assert_allclose(w, np.full(T, 0.25))
        e = problem.y - problem.const
        np.testing.assert_allclose(report.objective, e @ e)

    def test_constructed_interpolation_reaches_zero(self):
        rng = np.random.default_rng(1)
        n, T = 20, 3
        coef_w = rng.uniform(size=(n, T))
        const = rng.normal(size=n)
        y = const + coef_w[:, 0]  # exact at w = e1, G = 0
        problem = TrainingProblem(
            const=const, coef_w=coef_w, coef_v=np.zeros((n, T)), y=y
        )
        w, v, report = solve_qp(problem)
        assert report.objective <= 1e-10
        np.testing.assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-4)

    def test_matches_grid_oracle_t2(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            problem = random_problem(rng, 2, 12, coef_scale=0.3, resid_scale=0.3)
            w, v, report = solve_qp(problem)
            assert abs(report.objective - grid_min(problem, 0.001, "l2")) <= 1e-5

    def test_objective_trace_monotone(self):
        rng = np.random.default_rng(3)
        problem = random_problem(rng, 6, 30, coef_scale=1.0, resid_scale=0.5)
        _, _, report = solve_qp(problem, keep_trace=True)
        trace = np.asarray(report.trace)
        assert (np.diff(trace) <= 1e-9 * (1.0 + np.abs(trace[:-1]))).all()

    def test_convexity_sanity(self):
        rng = np.random.default_rng(4)
        problem = random_problem(rng, 5, 25, coef_scale=1.0, resid_scale=1.0)

        def f(w, v):
            return problem.loss(w, v, "l2")

        for _ in range(50):
            w1, v1 = random_simplex(rng, 5), random_simplex(rng, 5)
            w2, v2 = random_simplex(rng, 5), random_simplex(rng, 5)
            lam = rng.uniform()
            mixed = f(lam * w1 + (1 - lam) * w2, lam * v1 + (1 - lam) * v2)
            assert mixed <= lam * f(w1, v1) + (1 - lam) * f(w2, v2) + 1e-9

    def test_non_convergence_warns(self):
        rng = np.random.default_rng(5)
        problem = random_problem(rng, 4, 20, coef_scale=1.0, resid_scale=1.0)
        with pytest.warns(RuntimeWarning, match="projected gradient"):
            _, _, report = solve_qp(problem, tol=1e-15, max_iter=2)
        assert not report.converged

    def test_returned_weights_on_simplex(self):
        rng = np.random.default_rng(6)
        problem = random_problem(rng, 7, 40, coef_scale=1.0, resid_scale=0.1)
        w, v, _ = solve_qp(problem)
        for vec in (w, v):
            assert (vec >= 0).all()
            assert abs(vec.sum() - 1.0) <= 1e-12


class TestSolveLp:
    def test_perfect_interpolation_zero(self):
        rng = np.random.default_rng(7)
        n, T = 18, 3
        coef_w = rng.uniform(size=(n, T))
        coef_v = rng.uniform(size=(n, T))
        const = rng.normal(size=n)
        w0, v0 = random_simplex(rng, T), random_simplex(rng, T)
        y = const + coef_w @ w0 + coef_v @ v0
        problem = TrainingProblem(const=const, coef_w=coef_w, coef_v=coef_v, y=y)
        _, _, report = solve_lp(problem)
        assert report.converged
        assert report.objective <= 1e-8

    def test_matches_grid_oracle_t2(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            problem = random_problem(rng, 2, 12, coef_scale=1e-3, resid_scale=1e-3)
            w, v, report = solve_lp(problem)
            assert abs(report.objective - grid_min(problem, 0.001, "l1")) <= 1e-5

    def test_not_above_any_grid_point_at_unit_scale(self):
        rng = np.random.default_rng(9)
        problem = random_problem(rng, 2, 15, coef_scale=1.0, resid_scale=1.0)
        _, _, report = solve_lp(problem)
        assert report.objective <= grid_min(problem, 0.01, "l1") + 1e-7

    def test_self_consistency_of_objective(self):
        rng = np.random.default_rng(10)
        problem = random_problem(rng, 5, 30, coef_scale=1.0, resid_scale=1.0)
        w, v, report = solve_lp(problem)
        assert abs(report.objective - problem.loss(w, v, "l1")) <= 1e-9

    def test_lp_not_above_l1_of_qp_solution(self):
        rng = np.random.default_rng(11)
        problem = random_problem(rng, 4, 25, coef_scale=1.0, resid_scale=0.5)
        wq, vq, _ = solve_qp(problem)
        _, _, lp_report = solve_lp(problem)
        assert lp_report.objective <= problem.loss(wq, vq, "l1") + 1e-9

    def test_zero_residual_l2_optimum_gives_zero_lp(self):
        rng = np.random.default_rng(12)
        n, T = 16, 3
        coef_w = rng.uniform(size=(n, T))
        coef_v = rng.uniform(size=(n, T))
        const = rng.normal(size=n)
        w0, v0 = random_simplex(rng, T), random_simplex(rng, T)
        y = const + coef_w @ w0 + coef_v @ v0
        problem = TrainingProblem(const=const, coef_w=coef_w, coef_v=coef_v, y=y)
        _, _, qp_report = solve_qp(problem)
        _, _, lp_report = solve_lp(problem)
        assert qp_report.objective <= 1e-10
        assert lp_report.objective <= 1e-8


class TestTrain:
    def _fixture(self, **cfg_kw):
        ds = gen_friedman(1, 90, noise_seed=13)
        forest = fit_forest(ds, kind="rf", n_trees=12, seed=14)
        cfg = AttentionConfig(**cfg_kw)
        return ds, forest, cfg

    def test_zero_rates_equal_softmax_baseline(self):
        ds, forest, cfg = self._fixture(epsilon=0.0, gamma=0.0)
        model = train(forest, ds, cfg)
        base = softmax_baseline(forest, cfg)
        np.testing.assert_array_equal(
            predict_batch(model, ds.features), predict_batch(base, ds.features)
        )

    @pytest.mark.parametrize("loss", ["l2", "l1"])
    def test_trained_loss_not_above_uniform(self, loss):
        ds, forest, _ = self._fixture()
        cfg = AttentionConfig(epsilon=0.5, gamma=0.5, variant="y", loss=loss)
        model = train(forest, ds, cfg)
        from satforest.optim import build_problem

        problem = build_problem(forest, ds, cfg)
        uniform = np.full(forest.n_trees, 1.0 / forest.n_trees)
        trained = problem.loss(model.w, model.v, loss)
        assert trained <= problem.loss(uniform, uniform, loss) + 1e-9

    def test_tiny_problem_matches_t3_grid(self):
        rng = np.random.default_rng(15)
        problem = random_problem(rng, 3, 12, coef_scale=0.1, resid_scale=0.1)
        _, _, report = solve_qp(problem)
        assert abs(report.objective - grid_min(problem, 0.02, "l2")) <= 2e-4

    def test_l1_config_routes_to_lp(self):
        ds, forest, _ = self._fixture()
        cfg = AttentionConfig(epsilon=0.5, gamma=0.25, loss="l1")
        model = train(forest, ds, cfg)
        assert model.config.loss == "l1"
        assert (model.w >= 0).all() and abs(model.w.sum() - 1) < 1e-9
