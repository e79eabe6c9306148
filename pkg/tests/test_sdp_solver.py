import unittest

import numpy as np
import scipy.linalg as la

from src.models.sdp import SdpProblem
from src.solvers.sdp_solver import solve_sdp, InteriorPointSdpSolver
from src.utils.errors import SdpSizeLimit, IterationLimit, InconsistentDimensions


def random_problem(rng, size=5, m=6, rank=2):
    """SDP with a known strictly complementary optimum."""
    Q, _ = la.qr(rng.standard_normal((size, size)))
    X_star = Q[:, :rank] @ np.diag(1.0 + rng.random(rank)) @ Q[:, :rank].T
    Z_star = Q[:, rank:] @ np.diag(1.0 + rng.random(size - rank)) @ Q[:, rank:].T
    y_star = rng.standard_normal(m)
    mats = []
    for _ in range(m):
        G = rng.standard_normal((size, size))
        mats.append(0.5 * (G + G.T))
    C = sum(y * A for y, A in zip(y_star, mats)) + Z_star

    problem = SdpProblem()
    block = problem.add_block("X", size)
    for A in mats:
        row = problem.add_row(float(np.sum(A * X_star)))
        problem.add_matrix(row, block, A)
    for i in range(size):
        for j in range(i, size):
            problem.add_objective(block, i, j, C[i, j] if i == j else 2.0 * C[i, j])
    return problem, float(np.sum(C * X_star)), X_star


class TestSdpProblem(unittest.TestCase):
    """Test cases for assembling SDP problems."""

    def test_off_diagonal_entries(self):
        """Test that an off-diagonal entry is split over both halves."""
        problem = SdpProblem()
        block = problem.add_block("W", 2)
        row = problem.add_row(1.0, "cross")
        problem.add_entry(row, block, 0, 1, 4.0)

        np.testing.assert_allclose(problem.A[0].toarray(), [[0.0, 2.0, 2.0, 0.0]])
        self.assertEqual(problem.row_names, ["cross"])

    def test_bad_entries(self):
        """Test that entries outside a block are rejected."""
        problem = SdpProblem()
        psd = problem.add_block("W", 2)
        nonneg = problem.add_block("aux", 3, "nonneg")
        row = problem.add_row(0.0)

        with self.assertRaises(InconsistentDimensions):
            problem.add_entry(row, psd, 2, 0)
        with self.assertRaises(InconsistentDimensions):
            problem.add_entry(row, nonneg, 0, 1)
        with self.assertRaises(ValueError):
            problem.add_block("bad", 2, "soc")


class TestInteriorPointSdpSolver(unittest.TestCase):
    """Test cases for the interior-point SDP solver."""

    def test_smallest_eigenvalue(self):
        """Test min <diag(1, 2), X> subject to tr X = 1."""
        problem = SdpProblem()
        block = problem.add_block("X", 2)
        row = problem.add_row(1.0, "trace")
        problem.add_entry(row, block, 0, 0)
        problem.add_entry(row, block, 1, 1)
        problem.add_objective(block, 0, 0, 1.0)
        problem.add_objective(block, 1, 1, 2.0)

        solution = solve_sdp(problem)

        self.assertEqual(solution.status, "optimal")
        self.assertTrue(solution.solved)
        self.assertAlmostEqual(solution.primal_objective, 1.0, places=5)
        self.assertAlmostEqual(solution.dual_objective, 1.0, places=5)
        np.testing.assert_allclose(solution.X[0], [[1.0, 0.0], [0.0, 0.0]], atol=1e-4)
        self.assertAlmostEqual(solution.y[0], 1.0, places=5)

    def test_off_diagonal_bound(self):
        """Test min X01 over unit-diagonal 2 x 2 PSD matrices."""
        problem = SdpProblem()
        block = problem.add_block("X", 2)
        for i in range(2):
            problem.add_entry(problem.add_row(1.0), block, i, i)
        problem.add_objective(block, 0, 1, 1.0)

        solution = solve_sdp(problem)

        self.assertAlmostEqual(solution.primal_objective, -1.0, places=5)
        self.assertAlmostEqual(solution.X[0][0, 1], -1.0, places=4)

    def test_linear_program(self):
        """Test a nonnegative block alone."""
        problem = SdpProblem()
        block = problem.add_block("x", 2, "nonneg")
        row = problem.add_row(1.0)
        problem.add_entry(row, block, 0)
        problem.add_entry(row, block, 1)
        problem.add_objective(block, 0, value=1.0)
        problem.add_objective(block, 1, value=2.0)

        solution = solve_sdp(problem)

        self.assertAlmostEqual(solution.primal_objective, 1.0, places=5)
        np.testing.assert_allclose(solution.X[0], [1.0, 0.0], atol=1e-5)

    def test_dependent_rows(self):
        """Test that a duplicated row is removed and reported."""
        problem = SdpProblem()
        block = problem.add_block("X", 2)
        for _ in range(2):
            row = problem.add_row(1.0)
            problem.add_entry(row, block, 0, 0)
            problem.add_entry(row, block, 1, 1)
        problem.add_objective(block, 0, 0, 3.0)
        problem.add_objective(block, 1, 1, 2.0)

        solution = solve_sdp(problem)

        self.assertEqual(len(solution.removed_rows), 1)
        self.assertAlmostEqual(solution.primal_objective, 2.0, places=5)
        self.assertAlmostEqual(float(np.sum(solution.y)), 2.0, places=5)

    def test_constructed_optimum(self):
        """Test random problems whose optimum is known."""
        rng = np.random.default_rng(5)
        for _ in range(3):
            problem, optimum, X_star = random_problem(rng)

            solution = solve_sdp(problem)

            self.assertTrue(solution.solved)
            scale = 1.0 + abs(optimum)
            self.assertLess(abs(solution.primal_objective - optimum) / scale, 1e-5)
            self.assertLess(abs(solution.dual_objective - optimum) / scale, 1e-5)
            self.assertLess(np.max(np.abs(solution.X[0] - X_star)), 1e-3)

    def test_objective_blocks_are_matrices(self):
        """Test that presolve keeps C in the shape of each cone block."""
        problem = SdpProblem()
        psd = problem.add_block("X", 3)
        aux = problem.add_block("x", 2, "nonneg")
        row = problem.add_row(1.0)
        problem.add_entry(row, psd, 0, 0)
        problem.add_entry(row, aux, 1)
        problem.add_objective(psd, 0, 2, 4.0)
        problem.add_objective(aux, 0, value=1.0)
        solver = InteriorPointSdpSolver(problem)

        solver._presolve()

        self.assertEqual(solver.C[0].shape, (3, 3))
        self.assertEqual(solver.C[1].shape, (2,))
        np.testing.assert_allclose(solver.C[0], solver.C[0].T)
        self.assertAlmostEqual(solver.C[0][0, 2] * solver.c_scale, 2.0)

    def test_mixed_blocks(self):
        """Test min X01 + 2 x subject to X00 = X11 = 1 and X01 - x = -0.5."""
        problem = SdpProblem()
        psd = problem.add_block("X", 2)
        aux = problem.add_block("x", 1, "nonneg")
        for i in range(2):
            problem.add_entry(problem.add_row(1.0), psd, i, i)
        row = problem.add_row(-0.5)
        problem.add_entry(row, psd, 0, 1)
        problem.add_entry(row, aux, 0, value=-1.0)
        problem.add_objective(psd, 0, 1, 1.0)
        problem.add_objective(aux, 0, value=2.0)

        solution = solve_sdp(problem)

        self.assertTrue(solution.solved)
        self.assertAlmostEqual(solution.primal_objective, -0.5, places=5)
        self.assertAlmostEqual(solution.dual_objective, -0.5, places=5)
        self.assertAlmostEqual(solution.X[0][0, 1], -0.5, places=4)
        self.assertAlmostEqual(float(solution.X[1][0]), 0.0, places=4)

    def test_constructed_oracle(self):
        """Test ten constructed optima at 1e-6: objective, weak duality and complementarity."""
        rng = np.random.default_rng(13)
        for _ in range(10):
            problem, optimum, _ = random_problem(rng, size=5, m=6, rank=2)

            solution = solve_sdp(problem, tol=1e-8)

            X, Z = solution.X[0], solution.Z[0]
            scale = 1.0 + abs(optimum)
            self.assertTrue(solution.solved)
            self.assertLess(abs(solution.primal_objective - optimum) / scale, 1e-6)
            self.assertGreaterEqual(solution.primal_objective - solution.dual_objective, -1e-6 * scale)
            self.assertLess(abs(np.sum(X * Z)) / scale, 1e-6)

    def test_duality_and_complementarity(self):
        """Test weak duality, cone membership and complementarity at the solution."""
        rng = np.random.default_rng(9)
        problem, _, _ = random_problem(rng, size=6, m=8, rank=3)

        solution = solve_sdp(problem)

        X, Z = solution.X[0], solution.Z[0]
        scale = 1.0 + abs(solution.primal_objective)
        self.assertGreaterEqual(solution.primal_objective - solution.dual_objective, -1e-6 * scale)
        self.assertGreater(np.min(np.linalg.eigvalsh(X)), -1e-8)
        self.assertGreater(np.min(np.linalg.eigvalsh(Z)), -1e-8)
        self.assertLess(abs(np.sum(X * Z)) / scale, 1e-5)

    def test_size_limit(self):
        """Test that oversized PSD blocks are refused."""
        problem = SdpProblem()
        problem.add_block("big", 5)
        problem.add_block("aux", 50, "nonneg")
        problem.add_row(0.0)

        with self.assertRaises(SdpSizeLimit) as ctx:
            solve_sdp(problem, max_block_size=4)
        self.assertEqual(ctx.exception.block_name, "big")

    def test_iteration_limit(self):
        """Test that stopping far from optimality raises."""
        problem, _, _ = random_problem(np.random.default_rng(1))

        with self.assertRaises(IterationLimit):
            solve_sdp(problem, max_iterations=1)

    def test_schur_matrix(self):
        """Test M_ij = <A_i, X A_j Z^-1> against a direct computation."""
        rng = np.random.default_rng(2)
        problem, _, _ = random_problem(rng, size=4, m=3)
        solver = InteriorPointSdpSolver(problem)
        solver._presolve()
        G = rng.standard_normal((4, 4))
        X = [G @ G.T + np.eye(4)]
        Zinv = [np.linalg.inv(2.0 * np.eye(4) + 0.1 * (G + G.T))]

        M = solver.schur_matrix(X, Zinv)

        mats = [solver.A[0][i].toarray().reshape(4, 4) for i in range(3)]
        direct = np.array([[np.sum(Ai * (X[0] @ Aj @ Zinv[0])) for Aj in mats] for Ai in mats])
        np.testing.assert_allclose(M, 0.5 * (direct + direct.T), atol=1e-10)


if __name__ == "__main__":
    unittest.main()
