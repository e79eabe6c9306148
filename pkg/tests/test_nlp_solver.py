import unittest

import numpy as np
import scipy.sparse as sp

from src.models.problem import VariableLayout, QuadraticFunction, Constraint, PopProblem
from src.models.report import NlpOptions
from src.solvers.nlp_solver import solve_nlp
from src.utils.errors import DimensionMismatch, NonFiniteEncountered


def make_problem(objective, constraints=(), lower=None, upper=None):
    layout = VariableLayout()
    layout.add_segment("z", [f"z{i}" for i in range(objective.dim)])
    return PopProblem(layout, objective, list(constraints), lower, upper, name="toy")


class TestAugmentedLagrangianSolver(unittest.TestCase):
    """Test cases for the local NLP solver."""

    def test_equality_qp(self):
        """Test min x^2 + y^2 subject to x + y = 1."""
        objective = QuadraticFunction(sp.identity(2), None, 0.0, 2)
        row = Constraint(QuadraticFunction.linear(2, {0: 1.0, 1: 1.0}, -1.0), "eq", "sum")
        result = solve_nlp(make_problem(objective, [row]), np.zeros(2))

        self.assertEqual(result.status, "optimal_local")
        self.assertTrue(result.success)
        np.testing.assert_allclose(result.point, [0.5, 0.5], atol=1e-5)
        self.assertAlmostEqual(result.objective, 0.5, places=5)
        self.assertLessEqual(result.max_violation, 1e-6)
        self.assertAlmostEqual(abs(result.multipliers[0]), 1.0, places=3)

    def test_inequality_and_box(self):
        """Test that an active inequality and an active bound are both found."""
        # min (x - 2)^2 + (y + 3)^2, x <= 1, y >= -0.5
        objective = QuadraticFunction(sp.identity(2), np.array([-4.0, 6.0]), 13.0)
        row = Constraint(QuadraticFunction.linear(2, {0: 1.0}, -1.0), "le", "cap")
        problem = make_problem(objective, [row], lower=np.array([-np.inf, -0.5]))

        result = solve_nlp(problem, np.zeros(2))

        self.assertEqual(result.status, "optimal_local")
        np.testing.assert_allclose(result.point, [1.0, -0.5], atol=1e-5)
        self.assertAlmostEqual(result.objective, 1.0 + 6.25, places=4)

    def test_quadratic_constraint(self):
        """Test the nearest point of the unit disc."""
        objective = QuadraticFunction(sp.identity(2), np.array([-4.0, -4.0]), 8.0)
        disc = Constraint(QuadraticFunction(sp.identity(2), None, -1.0, 2), "le", "disc")

        result = solve_nlp(make_problem(objective, [disc]), np.zeros(2))

        self.assertEqual(result.status, "optimal_local")
        np.testing.assert_allclose(result.point, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-5)

    def test_halfspace_projection(self):
        """Test random halfspace projections against the closed form."""
        rng = np.random.default_rng(11)
        for _ in range(5):
            n = 6
            a = rng.standard_normal(n)
            w = rng.standard_normal(n)
            beta = float(w @ a) - 1.0 - rng.random()
            objective = QuadraticFunction(sp.identity(n), -2.0 * a, float(a @ a), n)
            row = Constraint(
                QuadraticFunction.linear(n, {i: w[i] for i in range(n)}, -beta), "le", "halfspace"
            )

            result = solve_nlp(make_problem(objective, [row]), np.zeros(n))

            expected = a - (w @ a - beta) / (w @ w) * w
            self.assertEqual(result.status, "optimal_local")
            np.testing.assert_allclose(result.point, expected, atol=1e-5)

    def test_random_convex_qps(self):
        """Test random strictly convex QPs whose optimum is built from the KKT conditions."""
        rng = np.random.default_rng(21)
        n = 6
        for _ in range(10):
            G = rng.standard_normal((n, n))
            Q = G @ G.T / n + np.eye(n)
            x_star = rng.standard_normal(n)
            A = rng.standard_normal((2, n))
            W = rng.standard_normal((4, n))
            lam = rng.standard_normal(2)
            mu = np.array([0.5 + rng.random(), 0.5 + rng.random(), 0.0, 0.0])
            # grad f(x*) + A'lam + W'mu = 0 with the last two rows slack
            c = -2.0 * Q @ x_star - A.T @ lam - W.T @ mu
            offsets = np.array([0.0, 0.0, 1.0, 1.0])

            rows = [
                Constraint(QuadraticFunction.linear(n, dict(enumerate(a)), -float(a @ x_star)), "eq", f"eq{i}")
                for i, a in enumerate(A)
            ]
            rows += [
                Constraint(
                    QuadraticFunction.linear(n, dict(enumerate(w)), -float(w @ x_star) - offset), "le", f"le{j}"
                )
                for j, (w, offset) in enumerate(zip(W, offsets))
            ]
            objective = QuadraticFunction(sp.csr_matrix(Q), c, 0.0, n)

            result = solve_nlp(make_problem(objective, rows), np.zeros(n))

            optimum = float(x_star @ Q @ x_star + c @ x_star)
            self.assertEqual(result.status, "optimal_local")
            self.assertLessEqual(result.max_violation, 1e-6)
            np.testing.assert_allclose(result.point, x_star, atol=1e-5)
            self.assertLess(abs(result.objective - optimum) / (1.0 + abs(optimum)), 1e-5)

    def test_trace_flag(self):
        """Test that iteration rows are kept only when tracing is on."""
        objective = QuadraticFunction(sp.identity(2), None, 0.0, 2)
        row = Constraint(QuadraticFunction.linear(2, {0: 1.0, 1: 1.0}, -1.0), "eq", "sum")
        problem = make_problem(objective, [row])

        quiet = solve_nlp(problem, np.zeros(2))
        traced = solve_nlp(problem, np.zeros(2), NlpOptions(trace=True))

        self.assertEqual(quiet.trace, [])
        self.assertEqual(len(traced.trace), traced.iterations)
        self.assertEqual(len(traced.trace[0]), 4)

    def test_infeasible(self):
        """Test that contradictory rows end as infeasible_local."""
        objective = QuadraticFunction(sp.identity(1), None, 0.0, 1)
        rows = [
            Constraint(QuadraticFunction.linear(1, {0: 1.0}, -1.0), "ge", "above"),
            Constraint(QuadraticFunction.linear(1, {0: 1.0}), "le", "below"),
        ]

        result = solve_nlp(make_problem(objective, rows), np.zeros(1))

        self.assertEqual(result.status, "infeasible_local")
        self.assertFalse(result.success)
        self.assertAlmostEqual(result.max_violation, 0.5, places=3)

    def test_iteration_budget(self):
        """Test that a tiny outer budget is reported."""
        objective = QuadraticFunction(sp.identity(2), None, 0.0, 2)
        row = Constraint(QuadraticFunction.linear(2, {0: 1.0, 1: 1.0}, -1.0), "eq", "sum")
        options = NlpOptions(max_outer_iterations=1)

        result = solve_nlp(make_problem(objective, [row]), np.zeros(2), options)

        self.assertEqual(result.status, "max_iterations")
        self.assertEqual(result.iterations, 1)

    def test_bad_starting_point(self):
        """Test that wrong-sized or non-finite starts are rejected."""
        problem = make_problem(QuadraticFunction(sp.identity(2), None, 0.0, 2))

        with self.assertRaises(DimensionMismatch):
            solve_nlp(problem, np.zeros(3))
        with self.assertRaises(NonFiniteEncountered):
            solve_nlp(problem, np.array([0.0, np.nan]))

    def test_options_validation(self):
        """Test that nonsensical options are rejected."""
        with self.assertRaises(ValueError):
            NlpOptions(penalty_growth=0.5)


if __name__ == "__main__":
    unittest.main()
