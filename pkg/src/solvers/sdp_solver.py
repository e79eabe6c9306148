import time

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from loguru import logger

from src.config import settings
from src.models.sdp import SdpSolution
from src.utils.errors import IterationLimit, LinearAlgebraFailure, SdpSizeLimit
from src.utils.linalg import nonneg_step_length, psd_step_length, sym


STEP_FRACTION = 0.95
PRESOLVE_RTOL = 1e-9
RAY_THRESHOLD = 1e8
NEAR_OPTIMAL_TOL = 1e-5


class InteriorPointSdpSolver:
    """
    Primal-dual path following for block SDPs with the HKM search direction and a
    Mehrotra predictor-corrector.

    Rows that are linearly dependent are removed before the solve. The remaining rows
    are equilibrated and the objective and right-hand side are scaled to unit size.
    """

    hformat = "%-4s  %13s  %13s  %9s  %9s  %9s  %6s  %6s"
    header = hformat % ("Iter", "pobj", "dobj", "relgap", "pinf", "dinf", "alphaP", "alphaD")
    lformat = "%-4d  %13.6e  %13.6e  %9.2e  %9.2e  %9.2e  %6.3f  %6.3f"

    def __init__(self, problem, tol=None, max_iterations=None, max_block_size=None):
        self.problem = problem
        self.tol = tol or settings.SDP_TOLERANCE
        self.max_iterations = max_iterations or settings.SDP_MAX_ITERATIONS
        self.max_block_size = max_block_size or settings.SDP_MAX_BLOCK_SIZE
        self.blocks = problem.blocks

    def _check_size(self):
        for block in self.blocks:
            if block.kind == "psd" and block.size > self.max_block_size:
                raise SdpSizeLimit(block.name, block.size, self.max_block_size)

    def _presolve(self):
        """Drop dependent rows, equilibrate the rest and scale b and C."""
        A = [Ab.tocsr() for Ab in self.problem.A]
        b = self.problem.b
        m = self.problem.m
        removed = []

        if m:
            dense = np.hstack([Ab.toarray() for Ab in A])
            _, R, piv = la.qr(dense.T, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > PRESOLVE_RTOL * diag[0])) if diag.size and diag[0] > 0 else 0
            keep = np.sort(piv[:rank])
            removed = sorted(int(i) for i in piv[rank:])
            if removed:
                coef, *_ = la.lstsq(dense[keep].T, dense[removed].T)
                mismatch = np.abs(coef.T @ b[keep] - b[removed])
                if np.any(mismatch > 1e-8 * max(1.0, np.max(np.abs(b)))):
                    logger.warning(f"Dependent rows {removed} have inconsistent right-hand sides")
                logger.info(f"Presolve removed {len(removed)} dependent row(s)")
        else:
            keep = np.arange(0)

        self.keep = keep
        self.removed = removed
        A = [Ab[keep] for Ab in A]
        b = b[keep]

        norms = np.sqrt(sum(np.asarray(Ab.multiply(Ab).sum(axis=1)).ravel() for Ab in A)) if A else np.zeros(0)
        norms = np.where(norms > 0, norms, 1.0)
        self.row_scale = norms
        D = sp.diags(1.0 / norms)
        self.A = [sp.csr_matrix(D @ Ab) for Ab in A]
        b = b / norms

        self.b_scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
        self.c_scale = max(1.0, max((float(np.max(np.abs(c), initial=0.0)) for c in self.problem.C), default=0.0))
        self.b = b / self.b_scale
        self.C = [self._mat(k, c / self.c_scale) for k, c in enumerate(self.problem.C)]
        self.m = b.size

    # cone operations, one array per block: PSD blocks as matrices, nonneg as vectors

    def _vec(self, blocks):
        return [V.ravel() for V in blocks]

    def _mat(self, k, vec):
        block = self.blocks[k]
        return vec.reshape(block.size, block.size) if block.kind == "psd" else vec

    def apply_a(self, blocks):
        out = np.zeros(self.m)
        for Ab, v in zip(self.A, self._vec(blocks)):
            out += Ab @ v
        return out

    def apply_at(self, y):
        out = []
        for k, Ab in enumerate(self.A):
            V = self._mat(k, Ab.T @ y)
            out.append(sym(V) if self.blocks[k].kind == "psd" else V)
        return out

    @staticmethod
    def inner(U, V):
        return float(sum(np.sum(u * v) for u, v in zip(U, V)))

    @staticmethod
    def norm(U):
        return float(np.sqrt(sum(np.sum(u * u) for u in U)))

    def _initial_point(self):
        X, Z = [], []
        for k, block in enumerate(self.blocks):
            s = block.size
            row_norms = np.sqrt(np.asarray(self.A[k].multiply(self.A[k]).sum(axis=1)).ravel())
            ratio = float(np.max((1.0 + np.abs(self.b)) / (1.0 + row_norms), initial=1.0))
            xi = max(10.0, np.sqrt(s), s * ratio)
            eta = max(10.0, np.sqrt(s), float(np.linalg.norm(self.C[k])))
            if block.kind == "psd":
                X.append(xi * np.eye(s))
                Z.append(eta * np.eye(s))
            else:
                X.append(xi * np.ones(s))
                Z.append(eta * np.ones(s))
        return X, np.zeros(self.m), Z

    def _inverse(self, k, Zk):
        if self.blocks[k].kind == "nonneg":
            return 1.0 / Zk
        try:
            factor = la.cho_factor(Zk, lower=True, check_finite=False)
        except la.LinAlgError:
            raise LinearAlgebraFailure(f"Dual block '{self.blocks[k].name}' lost positive definiteness")
        return sym(la.cho_solve(factor, np.eye(Zk.shape[0]), check_finite=False))

    def schur_matrix(self, X, Zinv):
        """M_ij = <A_i, X A_j Z^-1>, assembled block by block."""
        M = np.zeros((self.m, self.m))
        for k, Ab in enumerate(self.A):
            if Ab.nnz == 0:
                continue
            if self.blocks[k].kind == "nonneg":
                M += (Ab @ sp.diags(X[k] * Zinv[k]) @ Ab.T).toarray()
                continue
            s = self.blocks[k].size
            rows = np.unique(Ab.nonzero()[0])
            sub = Ab[rows]
            stacked = sub.toarray().reshape(len(rows), s, s)
            products = (X[k] @ stacked @ Zinv[k]).reshape(len(rows), s * s)
            M[np.ix_(rows, rows)] += np.asarray(sub @ products.T)
        return sym(M)

    def _factor(self, M):
        scale = max(1.0, float(np.max(np.diag(M)))) if M.size else 1.0
        delta = 1e-12
        while delta <= 1e-6:
            try:
                return la.cho_factor(M + delta * scale * np.eye(M.shape[0]), lower=True, check_finite=False)
            except la.LinAlgError:
                delta *= 100.0
        raise LinearAlgebraFailure("Schur complement matrix is not positive definite")

    def _direction(self, factor, X, Z, Zinv, Rd, target, correction=None):
        """Solve for (dX, dy, dZ) with complementarity target sigma*mu."""
        rhs = self.b.copy()
        pieces = []
        for k in range(len(self.blocks)):
            if self.blocks[k].kind == "psd":
                P = target * Zinv[k] - X[k] @ Rd[k] @ Zinv[k]
                if correction is not None:
                    P = P - correction[k] @ Zinv[k]
            else:
                P = target * Zinv[k] - X[k] * Rd[k] * Zinv[k]
                if correction is not None:
                    P = P - correction[k] * Zinv[k]
            pieces.append(P)
        rhs -= self.apply_a(pieces)

        dy = la.cho_solve(factor, rhs, check_finite=False) if self.m else np.zeros(0)
        AtDy = self.apply_at(dy)
        dZ = [Rd[k] - AtDy[k] for k in range(len(self.blocks))]
        dX = []
        for k in range(len(self.blocks)):
            if self.blocks[k].kind == "psd":
                product = X[k] @ dZ[k]
                if correction is not None:
                    product = product + correction[k]
                dX.append(sym(target * Zinv[k] - X[k] - product @ Zinv[k]))
            else:
                product = X[k] * dZ[k]
                if correction is not None:
                    product = product + correction[k]
                dX.append(target * Zinv[k] - X[k] - product * Zinv[k])
        return dX, dy, dZ

    def _step(self, V, dV):
        alpha = np.inf
        for k, block in enumerate(self.blocks):
            if block.kind == "psd":
                alpha = min(alpha, psd_step_length(V[k], dV[k]))
            else:
                alpha = min(alpha, nonneg_step_length(V[k], dV[k]))
        return min(1.0, STEP_FRACTION * alpha)

    def _measures(self, X, y, Z):
        Rp = self.b - self.apply_a(X)
        AtY = self.apply_at(y)
        Rd = [self.C[k] - AtY[k] - Z[k] for k in range(len(self.blocks))]
        pobj = self.inner(self.C, X)
        dobj = float(self.b @ y)
        scale = 1.0 + abs(pobj) + abs(dobj)
        relgap = max(abs(pobj - dobj), abs(self.inner(X, Z))) / scale
        pinf = float(np.linalg.norm(Rp)) / (1.0 + float(np.linalg.norm(self.b)))
        dinf = self.norm(Rd) / (1.0 + self.norm(self.C))
        return Rp, Rd, pobj, dobj, relgap, pinf, dinf

    def _certificate(self, X, y, Z, pobj, dobj, Rp, Rd):
        if dobj > RAY_THRESHOLD * max(1.0, self.norm(self.C) + self.norm(Rd)):
            return "infeasible_certificate"
        if -pobj > RAY_THRESHOLD * max(1.0, float(np.linalg.norm(self.b)) + float(np.linalg.norm(Rp))):
            return "unbounded_certificate"
        return None

    def solve(self):
        """
        Run the interior-point iterations.

        Returns:
            An SdpSolution in the caller's (unscaled) units

        Raises:
            SdpSizeLimit: A PSD block exceeds the size limit
            IterationLimit: The limit is hit far from optimality
            LinearAlgebraFailure: The Schur system cannot be factored
        """
        self._check_size()
        start = time.time()
        self._presolve()
        X, y, Z = self._initial_point()
        order = sum(block.size for block in self.blocks)

        logger.debug(f"Solving {self.problem}")
        logger.debug(self.header)

        status = None
        iteration = 0
        for iteration in range(self.max_iterations + 1):
            Rp, Rd, pobj, dobj, relgap, pinf, dinf = self._measures(X, y, Z)
            if max(relgap, pinf, dinf) <= self.tol:
                status = "optimal"
                break
            status = self._certificate(X, y, Z, pobj, dobj, Rp, Rd)
            if status:
                logger.warning(f"SDP stopped with {status} at iteration {iteration}")
                break
            if iteration == self.max_iterations:
                break

            mu = self.inner(X, Z) / order
            try:
                Zinv = [self._inverse(k, Z[k]) for k in range(len(self.blocks))]
                factor = self._factor(self.schur_matrix(X, Zinv)) if self.m else None

                dXp, dyp, dZp = self._direction(factor, X, Z, Zinv, Rd, 0.0)
                alpha_p = self._step(X, dXp)
                alpha_d = self._step(Z, dZp)
                X_aff = [X[k] + alpha_p * dXp[k] for k in range(len(X))]
                Z_aff = [Z[k] + alpha_d * dZp[k] for k in range(len(Z))]
                sigma = min(1.0, (self.inner(X_aff, Z_aff) / order / mu) ** 3)

                correction = [
                    dXp[k] @ dZp[k] if self.blocks[k].kind == "psd" else dXp[k] * dZp[k]
                    for k in range(len(X))
                ]
                dX, dy, dZ = self._direction(factor, X, Z, Zinv, Rd, sigma * mu, correction)
                alpha_p = self._step(X, dX)
                alpha_d = self._step(Z, dZ)
            except LinearAlgebraFailure as e:
                logger.warning(f"SDP linear algebra failed at iteration {iteration}: {str(e)}")
                if max(relgap, pinf, dinf) <= NEAR_OPTIMAL_TOL:
                    status = "near_optimal"
                    break
                raise

            logger.debug(self.lformat % (iteration, pobj, dobj, relgap, pinf, dinf, alpha_p, alpha_d))

            if max(alpha_p, alpha_d) < 1e-10:
                status = "near_optimal" if max(relgap, pinf, dinf) <= NEAR_OPTIMAL_TOL else "numerical_failure"
                logger.warning(f"SDP steps vanished at iteration {iteration}")
                break

            X = [self._symmetric(k, X[k] + alpha_p * dX[k]) for k in range(len(X))]
            Z = [self._symmetric(k, Z[k] + alpha_d * dZ[k]) for k in range(len(Z))]
            y = y + alpha_d * dy

        if status is None:
            if max(relgap, pinf, dinf) <= NEAR_OPTIMAL_TOL:
                status = "near_optimal"
            else:
                raise IterationLimit(
                    f"SDP reached {self.max_iterations} iterations: relgap {relgap:.2e}, "
                    f"pinf {pinf:.2e}, dinf {dinf:.2e}"
                )

        solution = self._unscale(status, X, y, Z, iteration, pinf, dinf)
        logger.info(f"{solution} in {time.time() - start:.2f}s")
        return solution

    def _symmetric(self, k, V):
        return sym(V) if self.blocks[k].kind == "psd" else V

    def _unscale(self, status, X, y, Z, iterations, pinf, dinf):
        X = [self.b_scale * Xk for Xk in X]
        Z = [self.c_scale * Zk for Zk in Z]
        full_y = np.zeros(self.problem.m)
        full_y[self.keep] = self.c_scale * y / self.row_scale
        pobj = float(sum(np.sum(c * Xk.ravel()) for c, Xk in zip(self.problem.C, X)))
        dobj = float(self.problem.b @ full_y)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return SdpSolution(
            status=status,
            X=X,
            y=full_y,
            Z=Z,
            primal_objective=pobj,
            dual_objective=dobj,
            gap=gap,
            iterations=iterations,
            primal_residual=pinf,
            dual_residual=dinf,
            removed_rows=self.removed
        )


def solve_sdp(problem, tol=None, max_iterations=None, max_block_size=None):
    """
    Solve a standard-form SdpProblem.

    Args:
        problem: The SdpProblem
        tol: Relative gap and residual tolerance, SDP_TOLERANCE by default
        max_iterations: Iteration limit, SDP_MAX_ITERATIONS by default
        max_block_size: Largest PSD block accepted, SDP_MAX_BLOCK_SIZE by default

    Returns:
        An SdpSolution
    """
    return InteriorPointSdpSolver(problem, tol, max_iterations, max_block_size).solve()
