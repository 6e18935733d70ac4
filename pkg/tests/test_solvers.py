import math

import numpy as np
import pytest

from dacopt.conditioning import chebyshev_operator
from dacopt.operators import DenseOperator, SpectralBounds, spectral_bounds
from dacopt.oracles import Box, ConstantsOverride, L1Oracle, QuadraticOracle, SumOracle
from dacopt.problems import AffineProblem
from dacopt.solvers import (
    ApapcParams,
    DivergenceError,
    SlidingSchedule,
    StopRule,
    apapc,
    apapc_params,
    gradient_sliding,
    restarted_sliding,
    sliding_prox_step,
    solve_convex_regularized,
)


def direct_problem(Q, q, Bd, b, hint=None, u0=None, precondition=False):
    oracle = QuadraticOracle(Q, q)
    op = DenseOperator(np.asarray(Bd, dtype=float))
    rhs = np.asarray(b, dtype=float)
    bounds = spectral_bounds(op)
    if precondition:
        op, rhs = chebyshev_operator(op, rhs, bounds)
        bounds = spectral_bounds(op)
    dim = op.cols
    return AffineProblem(objective=oracle, B=op, b=rhs, bounds=bounds,
                         u0=np.zeros(dim) if u0 is None else np.asarray(u0, float),
                         solution_hint=hint, meta={"quadratic": True})


class TestApapcParams:
    def test_kappa_one(self):
        p = apapc_params(2.0, 2.0, SpectralBounds(3.0, 1.0))
        assert p.tau == pytest.approx(0.5)
        assert p.eta == pytest.approx(1.0 / (2 * 2.0))
        assert p.theta == pytest.approx(2 * 2.0 / 3.0)
        assert p.alpha == pytest.approx(2.0)

    def test_quarter(self):
        p = apapc_params(1.0, 4.0, SpectralBounds(1.0, 1.0))
        assert p.tau == pytest.approx(0.25)

    def test_mu_zero_rejected(self):
        with pytest.raises(ValueError):
            apapc_params(0.0, 1.0, SpectralBounds(1.0, 1.0))

    def test_contraction_on_scalar_instance(self):
        # G = u^2/2, B = 1, b = 0: distance halves within ceil(4 kappa_B sqrt(L/mu))
        problem = direct_problem(np.eye(1), np.zeros(1), np.eye(1), np.zeros(1),
                                 hint=np.zeros(1), u0=np.ones(1))
        report = apapc(problem, stop=StopRule(max_iters=4, tol=0.5, metric="distance"))
        assert report.converged


class TestApapc:
    def test_origin_optimum(self, rng):
        problem = direct_problem(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3),
                                 hint=np.zeros(3), u0=rng.standard_normal(3))
        problem.u0 /= np.linalg.norm(problem.u0)
        report = apapc(problem, stop=StopRule(max_iters=200, tol=1e-8, metric="distance"))
        assert report.converged and report.iterations <= 200
        assert np.linalg.norm(report.final_point) <= 1e-8

    def test_projection_onto_constraint(self, rng):
        # G = |u - g|^2/2 with B = (1 1)/sqrt(2), b = 0: optimum is the
        # orthogonal projection of g onto the zero-sum line
        g = rng.standard_normal(2)
        expected = g - (g.sum() / 2) * np.ones(2)
        problem = direct_problem(np.eye(2), -g, np.ones((1, 2)) / np.sqrt(2),
                                 np.zeros(1), hint=expected)
        report = apapc(problem, stop=StopRule(max_iters=5000, tol=1e-9, metric="distance"))
        assert report.final_point == pytest.approx(expected, abs=1e-8)

    def test_per_iteration_oracle_costs(self, rng):
        problem = direct_problem(np.eye(3), rng.standard_normal(3),
                                 rng.standard_normal((2, 3)),
                                 np.zeros(2))
        report = apapc(problem, stop=StopRule(max_iters=57, metric="none"))
        N = report.iterations
        assert report.counters["grad_calls"] == N
        assert report.counters["mul_B_forward"] == N
        assert report.counters["mul_B_adjoint"] == N

    def test_counters_nondecreasing(self, rng):
        problem = direct_problem(np.eye(2), rng.standard_normal(2),
                                 np.eye(2), np.zeros(2))
        report = apapc(problem, stop=StopRule(max_iters=30, metric="none"))
        grads = [snap["grad_calls"] for snap in report.counter_history]
        assert all(b >= a for a, b in zip(grads, grads[1:]))

    def test_divergence_guard(self):
        # absurd dual step forces blow-up
        problem = direct_problem(np.eye(2), np.zeros(2), np.eye(2), np.ones(2))
        params = ApapcParams(eta=1.0, theta=1e9, alpha=1.0, tau=0.5)
        with pytest.raises(DivergenceError):
            apapc(problem, params=params, u0=np.ones(2),
                  stop=StopRule(max_iters=2000, metric="none"))

    def test_linear_convergence_rate_budget(self, rng):
        # preconditioned constraint: below 1e-8 within 20 sqrt(L/mu) log(R/1e-8)
        for trial in range(5):
            r = np.random.default_rng(trial)
            L = 16.0
            lam = np.linspace(1.0, L, 4)
            V, _ = np.linalg.qr(r.standard_normal((4, 4)))
            Q = V @ np.diag(lam) @ V.T
            Bd = r.standard_normal((2, 4))
            ufeas = r.standard_normal(4)
            problem = direct_problem(0.5 * (Q + Q.T), r.standard_normal(4),
                                     Bd, Bd @ ufeas, precondition=True)
            assert problem.bounds.kappa <= 3.1
            # dense KKT reference
            from dacopt.solvers import _constrained_quadratic_argmin
            from dacopt.operators import materialize
            H = 0.5 * (Q + Q.T)
            ustar = _constrained_quadratic_argmin(H, problem.objective.q,
                                                  materialize(problem.B), problem.b)
            problem.solution_hint = ustar
            R = max(np.linalg.norm(ustar), 1.0)
            budget = math.ceil(20 * math.sqrt(L / 1.0) * math.log(R / 1e-8))
            report = apapc(problem, stop=StopRule(max_iters=budget, tol=1e-8,
                                                  metric="distance"))
            assert report.converged, f"trial {trial} took more than {budget}"


class TestSolveConvexRegularized:
    def test_nu_formula(self):
        problem = direct_problem(np.zeros((2, 2)), np.array([1.0, 0.0]),
                                 np.ones((1, 2)), np.ones(1))
        report = solve_convex_regularized(problem, eps=1e-2, R=2.0)
        assert report.meta["nu"] == pytest.approx(2.5e-3)

    def test_linear_objective_on_affine_line(self):
        # min q^T u on {u1 + u2 = 1}: unbounded below without regularization,
        # but D and the regularized optimum are well defined
        q = np.array([1.0, 2.0])
        problem = direct_problem(np.zeros((2, 2)), q, np.ones((1, 2)), np.ones(1))
        eps = 1e-3
        report = solve_convex_regularized(problem, eps=eps, R=2.0)
        u = report.final_point
        # constrained optimum of the regularized problem moves toward u1 = 1
        assert abs(u.sum() - 1.0) <= 10 * eps
        gap = q @ u - min(q)  # G* over the line = min coordinate value at vertex
        # the regularized path controls the gap against the regularized optimum;
        # for the linear objective the guarantee is G(u) - G(u*_reg-target) <= eps
        assert q @ u <= q @ report.meta.get("hint", u) + 1.0  # sanity, non-assertive

    def test_convex_quadratic_contracts(self, rng):
        # singular PSD objective: contracts per the regularized guarantee
        for trial in range(3):
            r = np.random.default_rng(100 + trial)
            U, _ = np.linalg.qr(r.standard_normal((3, 3)))
            Q = U @ np.diag([0.0, 1.0, 3.0]) @ U.T
            Bd = r.standard_normal((1, 3))
            ufeas = r.standard_normal(3)
            problem = direct_problem(0.5 * (Q + Q.T), r.standard_normal(3), Bd,
                                     Bd @ ufeas, precondition=True)
            eps = 1e-2
            report = solve_convex_regularized(problem, eps=eps, R=4.0)
            # verify the theorem contracts against the dense constrained optimum
            from dacopt.operators import materialize
            H = 0.5 * (Q + Q.T)
            Kd = materialize(problem.B)
            s = Kd.shape[0]
            KKT = np.block([[H, Kd.T], [Kd, np.zeros((s, s))]])
            sol = np.linalg.lstsq(KKT, np.concatenate([-problem.objective.q, problem.b]),
                                  rcond=None)[0]
            ustar = sol[:3]
            val = lambda u: 0.5 * u @ (H @ u) + problem.objective.q @ u
            assert val(report.final_point) - val(ustar) <= eps
            sigma_max = math.sqrt(problem.bounds.sigma_max_sq)
            assert report.final_residual <= 10 * sigma_max * eps

    def test_strongly_convex_rejected(self):
        problem = direct_problem(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            solve_convex_regularized(problem, 1e-2, 1.0)


class TestSlidingProxStep:
    def test_stationary_point(self):
        p = np.array([0.7, -0.2])
        w = sliding_prox_step(np.zeros(2), np.zeros(2), p, p, p, 1.0, 1.0)
        assert w == pytest.approx(p)

    def test_first_order_condition_by_hand(self):
        w = sliding_prox_step(np.array([2.0, 0.0]), np.zeros(2), np.zeros(2),
                              np.zeros(2), np.zeros(2), 1.0, 1.0)
        assert w == pytest.approx([-1.0, 0.0])

    def test_box_clamp(self):
        box = Box([0.0, 0.0], [1.0, 1.0])
        w = sliding_prox_step(np.array([2.0, 0.0]), np.zeros(2), np.zeros(2),
                              np.zeros(2), np.zeros(2), 1.0, 1.0, box)
        assert w == pytest.approx([0.0, 0.0])

    def test_nonpositive_parameters_rejected(self):
        with pytest.raises(ValueError):
            sliding_prox_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1),
                              np.zeros(1), 0.0, 1.0)


def l1_constrained(dim, Bd, b, radius=2.0, mu=0.0, u0=None):
    box = Box(-radius * np.ones(dim), radius * np.ones(dim))
    oracle = L1Oracle(dim, domain=box)
    if mu > 0:
        quad = QuadraticOracle(mu * np.eye(dim), np.zeros(dim))
        oracle = ConstantsOverride(SumOracle([oracle, quad]), mu=mu,
                                   M=oracle.M + mu * radius * math.sqrt(dim),
                                   domain=box)
    op = DenseOperator(np.asarray(Bd, dtype=float))
    bounds = spectral_bounds(op)
    K, bp = chebyshev_operator(op, np.asarray(b, dtype=float), bounds)
    return AffineProblem(objective=oracle, B=K, b=bp, bounds=spectral_bounds(K),
                         u0=np.zeros(dim) if u0 is None else np.asarray(u0, float),
                         meta={"quadratic": False,
                               "raw": (np.asarray(Bd, float), np.asarray(b, float))})


class TestGradientSliding:
    def test_abs_on_origin(self):
        problem = l1_constrained(1, [[1.0]], [0.0], u0=[1.5])
        report = gradient_sliding(problem, eps=1e-2, R=1.5)
        assert abs(report.final_point[0]) <= 1e-2

    def test_l1_on_affine_line(self):
        # min |u|_1 on {u1 + u2 = 1}: optimal value 1 on the vertex family
        problem = l1_constrained(2, [[1.0, 1.0]], [1.0])
        eps = 1e-2
        report = gradient_sliding(problem, eps=eps, R=2.0)
        u = report.final_point
        Braw, braw = problem.meta["raw"]
        assert np.abs(u).sum() - 1.0 <= eps
        R_dual = report.meta["R_dual"]
        assert np.linalg.norm(Braw @ u - braw) <= 2 * eps / R_dual * (1 + 1e-6)

    def test_outer_loop_touches_B_once(self):
        problem = l1_constrained(2, [[1.0, 1.0]], [1.0])
        report = gradient_sliding(problem, eps=5e-2, R=2.0)
        outer = report.meta["outer"]
        assert report.counters["mul_B_forward"] == outer
        assert report.counters["mul_B_adjoint"] == outer
        assert report.counters["grad_calls"] == report.meta["inner"]

    def test_missing_M_rejected(self, rng):
        problem = direct_problem(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            gradient_sliding(problem, 1e-2, 1.0)


class TestRestartedSliding:
    def test_strongly_convex_origin(self):
        problem = l1_constrained(1, [[1.0]], [0.0], mu=1.0, u0=[1.5])
        report = restarted_sliding(problem, eps=1e-3, mu=1.0)
        # G = |u| + u^2/2 has optimum 0; a 1e-3 gap pins |u| below ~1e-3
        assert abs(report.final_point[0]) <= 2e-3

    def test_stage_count_matches_halving(self):
        problem = l1_constrained(1, [[1.0]], [0.0], mu=1.0, u0=[1.5])
        eps = 1e-3
        schedule = SlidingSchedule()
        report = restarted_sliding(problem, eps=eps, mu=1.0, schedule=schedule)
        R0 = problem.objective.domain.diameter
        expected = math.ceil(math.log2(1.0 * R0 ** 2 / (schedule.restart_contraction * eps))) + 1
        assert abs(len(report.meta["stages"]) - expected) <= 1

    def test_unbounded_domain_rejected(self):
        oracle = L1Oracle(1)
        op = DenseOperator(np.eye(1))
        problem = AffineProblem(objective=oracle, B=op, b=np.zeros(1),
                                bounds=spectral_bounds(op), u0=np.zeros(1))
        with pytest.raises(ValueError):
            restarted_sliding(problem, 1e-2, mu=1.0)

    def test_mu_zero_rejected(self):
        problem = l1_constrained(1, [[1.0]], [0.0], mu=1.0)
        with pytest.raises(ValueError):
            restarted_sliding(problem, 1e-2, mu=0.0)


class TestDeterminism:
    def test_apapc_bitwise_reproducible(self, rng):
        q = rng.standard_normal(3)
        Bd = rng.standard_normal((2, 3))
        runs = []
        for _ in range(2):
            problem = direct_problem(np.eye(3), q.copy(), Bd.copy(), np.zeros(2))
            report = apapc(problem, stop=StopRule(max_iters=50, metric="none"))
            runs.append((report.final_point.tobytes(), tuple(sorted(report.counters.items()))))
        assert runs[0] == runs[1]
