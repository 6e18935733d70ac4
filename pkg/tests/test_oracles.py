import numpy as np
import pytest

from dacopt.operators import DenseOperator, CounterSet
from dacopt.oracles import (
    Box,
    ConstantsOverride,
    CountingOracle,
    GatherOracle,
    L1Oracle,
    QuadraticOracle,
    QuadraticPenaltyOracle,
    SeparableOracle,
    SumOracle,
    check_gradient,
    penalize,
    quadratic_oracle,
    regularize,
)


class TestQuadraticOracle:
    def test_identity(self):
        o = quadratic_oracle(np.eye(2), np.zeros(2))
        x = np.array([0.3, -1.0])
        assert o.gradient(x) == pytest.approx(x)
        assert o.mu == pytest.approx(1.0) and o.L == pytest.approx(1.0)

    def test_linear_boundary_flagged(self):
        o = quadratic_oracle(np.zeros((2, 2)), np.eye(2)[0])
        assert o.mu == 0.0 and o.L == 0.0
        assert o.degenerate

    def test_gradient_matches_finite_differences(self, rng):
        Q = rng.standard_normal((5, 5))
        Q = Q @ Q.T
        o = quadratic_oracle(Q, rng.standard_normal(5), mu_shift=0.3)
        assert check_gradient(o, rng, points=20) <= 1e-6

    def test_asymmetric_rejected(self, rng):
        Q = rng.standard_normal((3, 3))
        with pytest.raises(ValueError):
            quadratic_oracle(Q, np.zeros(3))

    def test_mu_le_L(self, rng):
        Q = rng.standard_normal((4, 4))
        Q = Q @ Q.T
        o = quadratic_oracle(Q, np.zeros(4), mu_shift=0.1)
        assert 0 < o.mu <= o.L


class TestRegularize:
    def test_zero_nu_rejected(self, rng):
        o = quadratic_oracle(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            regularize(o, np.zeros(2), 0.0)

    def test_unchanged_at_center(self, rng):
        o = quadratic_oracle(np.eye(3), rng.standard_normal(3))
        u0 = rng.standard_normal(3)
        reg = regularize(o, u0, 0.5)
        assert reg.value(u0) == pytest.approx(o.value(u0))
        assert reg.gradient(u0) == pytest.approx(o.gradient(u0))
        assert reg.mu == pytest.approx(o.mu + 0.5)
        assert reg.L == pytest.approx(o.L + 0.5)

    def test_gradient_finite_differences(self, rng):
        Q = rng.standard_normal((4, 4))
        Q = Q @ Q.T
        reg = regularize(quadratic_oracle(Q, rng.standard_normal(4)),
                         rng.standard_normal(4), 0.7)
        assert check_gradient(reg, rng) <= 1e-6


class TestPenalize:
    def test_value_unchanged_on_feasible_points(self, rng):
        o = quadratic_oracle(np.eye(3), np.zeros(3))
        Bd = rng.standard_normal((2, 3))
        u = rng.standard_normal(3)
        b = Bd @ u
        pen = penalize(o, DenseOperator(Bd), b, r=57.0)
        assert pen.value(u) == pytest.approx(o.value(u))

    def test_hessian_is_Q_plus_rBtB(self, rng):
        Q = rng.standard_normal((3, 3))
        Q = Q @ Q.T
        Bd = rng.standard_normal((2, 3))
        r = 2.5
        pen = penalize(quadratic_oracle(Q, np.zeros(3)), DenseOperator(Bd),
                       np.zeros(2), r)
        H = np.column_stack([pen.gradient(np.eye(3)[j]) - pen.gradient(np.zeros(3))
                             for j in range(3)])
        assert np.allclose(H, Q + r * Bd.T @ Bd, rtol=1e-9, atol=1e-9)

    def test_penalty_coefficient_from_dual_radius(self):
        # r = 2 R_dual^2 / eps with R_dual = M / sigma_min+(B)
        M, eps = 3.0, 1e-2
        sigma_min = 0.5
        R_dual = M / sigma_min
        r = 2 * R_dual ** 2 / eps
        assert r == pytest.approx(7200.0)

    def test_nonpositive_r_rejected(self, rng):
        o = quadratic_oracle(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            penalize(o, DenseOperator(np.eye(2)), np.zeros(2), 0.0)


class TestComposites:
    def test_separable_blocks(self, rng):
        parts = [quadratic_oracle(np.eye(2) * (i + 1), rng.standard_normal(2))
                 for i in range(3)]
        sep = SeparableOracle(parts)
        u = rng.standard_normal(6)
        expected = sum(p.value(u[2 * i:2 * i + 2]) for i, p in enumerate(parts))
        assert sep.value(u) == pytest.approx(expected)
        assert sep.mu == pytest.approx(1.0) and sep.L == pytest.approx(3.0)
        assert check_gradient(sep, rng) <= 1e-6

    def test_gather_scatters_gradient(self, rng):
        inner = quadratic_oracle(np.eye(2), np.array([1.0, -1.0]))
        g = GatherOracle(inner, np.array([3, 1]), dim=5)
        u = rng.standard_normal(5)
        grad = g.gradient(u)
        assert grad[[0, 2, 4]] == pytest.approx(np.zeros(3))
        assert grad[[3, 1]] == pytest.approx(inner.gradient(u[[3, 1]]))

    def test_l1_subgradient_bound(self, rng):
        o = L1Oracle(4, weight=2.0)
        assert o.M == pytest.approx(4.0)
        for _ in range(10):
            u = rng.standard_normal(4)
            assert np.linalg.norm(o.subgradient(u)) <= o.M + 1e-12

    def test_counting_oracle(self, rng):
        counters = CounterSet()
        o = CountingOracle(quadratic_oracle(np.eye(2), np.zeros(2)), counters)
        o.gradient(np.zeros(2))
        o.subgradient(np.zeros(2))
        o.value(np.zeros(2))
        assert counters.grad_calls == 2

    def test_constants_override_survives_map(self):
        o = ConstantsOverride(L1Oracle(2), mu=0.5, M=7.0)
        rebuilt = o.map_operators(lambda op: op)
        assert rebuilt.mu == 0.5 and rebuilt.M == 7.0

    def test_penalty_oracle_counts_operator_applies(self, rng):
        counters = CounterSet()
        Bd = DenseOperator(rng.standard_normal((2, 3)), tag="A")
        pen = QuadraticPenaltyOracle(Bd, np.zeros(2), 1.0)
        from dacopt.operators import instrument_tree

        pen_instr = pen.map_operators(lambda op: instrument_tree(op, counters))
        pen_instr.gradient(rng.standard_normal(3))
        assert counters.forward["A"] == 1 and counters.adjoint["A"] == 1


class TestBox:
    def test_project(self):
        box = Box([-1.0, -1.0], [1.0, 1.0])
        assert box.project(np.array([2.0, -3.0])) == pytest.approx([1.0, -1.0])

    def test_diameter(self):
        box = Box([0.0, 0.0], [3.0, 4.0])
        assert box.diameter == pytest.approx(5.0)

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            Box([1.0], [0.0])
