import time

import numpy as np
import scipy.linalg as la
from loguru import logger

from src.models.report import NlpOptions, NlpResult
from src.utils.errors import DimensionMismatch, NonFiniteEncountered, LinearAlgebraFailure
from src.utils.linalg import regularized_cholesky


MULTIPLIER_CAP = 1e8
ARMIJO = 1e-4


class AugmentedLagrangianSolver:
    """
    Local solver for quadratic problems with bounds.

    Outer loop: PHR augmented Lagrangian with first-order multiplier updates and
    penalty growth when feasibility stalls. Inner loop: projected Newton on the
    augmented Lagrangian over the variable box, with Armijo backtracking.
    """

    hformat = "%-5s  %12s  %9s  %9s  %9s  %9s  %5s"
    header = hformat % ("Iter", "f(x)", "|pg(x)|", "omega", "viol", "rho", "inner")
    lformat = "%-5d  %12.6e  %9.2e  %9.2e  %9.2e  %9.2e  %5d"

    def __init__(self, pop, options=None):
        self.pop = pop
        self.options = options or NlpOptions()
        self.compiled = pop.compile()
        self.lower = pop.lower
        self.upper = pop.upper
        self.is_eq = self.compiled.is_eq
        self.m = self.compiled.m
        self.n = self.compiled.n

    def project(self, z):
        return np.minimum(np.maximum(z, self.lower), self.upper)

    def _setup_scaling(self, z0):
        g0 = self.compiled.objective_gradient(z0)
        self.obj_scale = 1.0 / max(1.0, float(np.max(np.abs(g0))) if g0.size else 1.0)
        if self.m:
            _, J0 = self.compiled.values_and_jacobian(z0)
            self.row_scale = 1.0 / np.maximum(1.0, np.max(np.abs(J0), axis=1))
        else:
            self.row_scale = np.ones(0)

    def _constraints(self, z, with_jacobian=False):
        if with_jacobian:
            values, J = self.compiled.values_and_jacobian(z)
            return values * self.row_scale, J * self.row_scale[:, None]
        return self.compiled.values(z) * self.row_scale

    def _shifted(self, c):
        """First-order multiplier estimate pi and the active mask."""
        shifted = self.lam + self.rho * c
        pi = np.where(self.is_eq, shifted, np.maximum(shifted, 0.0))
        active = self.is_eq | (shifted > 0)
        return pi, active

    def merit(self, z):
        f = self.obj_scale * self.compiled.objective(z)
        if not self.m:
            return f
        c = self._constraints(z)
        shifted = self.lam + self.rho * c
        eq = self.is_eq
        value = f
        value += np.sum(self.lam[eq] * c[eq] + 0.5 * self.rho * c[eq] ** 2)
        value += np.sum(np.maximum(shifted[~eq], 0.0) ** 2 - self.lam[~eq] ** 2) / (2.0 * self.rho)
        if not np.isfinite(value):
            raise NonFiniteEncountered("Augmented Lagrangian is not finite")
        return value

    def merit_derivatives(self, z):
        grad = self.obj_scale * self.compiled.objective_gradient(z)
        hess = self.obj_scale * self.compiled.objective_hessian()
        if self.m:
            c, J = self._constraints(z, with_jacobian=True)
            pi, active = self._shifted(c)
            grad = grad + J.T @ pi
            hess = hess + self.compiled.weighted_hessian(pi * self.row_scale)
            JA = J[active]
            hess = hess + self.rho * (JA.T @ JA)
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise NonFiniteEncountered("Derivative of the augmented Lagrangian is not finite")
        return grad, hess

    def projected_gradient(self, z, grad):
        return self.project(z - grad) - z

    def inner_solve(self, z, omega):
        """Approximately minimize the augmented Lagrangian over the box."""
        iterations = 0
        for iterations in range(1, self.options.max_inner_iterations + 1):
            grad, hess = self.merit_derivatives(z)
            pg = self.projected_gradient(z, grad)
            if np.max(np.abs(pg), initial=0.0) <= omega:
                return z, iterations - 1

            eps = min(1e-8, float(np.max(np.abs(pg))))
            binding = ((z <= self.lower + eps) & (grad > 0)) | ((z >= self.upper - eps) & (grad < 0))
            binding |= self.lower == self.upper
            free = ~binding

            direction = np.zeros(self.n)
            if np.any(free):
                H = hess[np.ix_(free, free)]
                try:
                    factor, _ = regularized_cholesky(H)
                    direction[free] = -la.cho_solve(factor, grad[free], check_finite=False)
                except LinearAlgebraFailure:
                    direction[free] = -grad[free]

            phi = self.merit(z)
            z_new = self._line_search(z, phi, grad, direction)
            if z_new is None:
                # Newton direction failed, fall back to steepest descent
                z_new = self._line_search(z, phi, grad, -grad)
            if z_new is None:
                logger.debug("Inner iteration stalled")
                return z, iterations
            z = z_new
        return z, iterations

    def _line_search(self, z, phi, grad, direction):
        step = 1.0
        for _ in range(40):
            trial = self.project(z + step * direction)
            decrease = grad @ (trial - z)
            if decrease < 0 and self.merit(trial) <= phi + ARMIJO * decrease:
                return trial
            step *= 0.5
        return None

    def solve(self, z0):
        """
        Run the outer augmented Lagrangian loop.

        Args:
            z0: Starting point

        Returns:
            An NlpResult
        """
        opts = self.options
        z0 = np.asarray(z0, dtype=float)
        if z0.shape != (self.n,):
            raise DimensionMismatch(self.n, z0.size)
        if not np.all(np.isfinite(z0)):
            raise NonFiniteEncountered("Starting point has NaN or Inf entries")

        start = time.time()
        z = self.project(z0)
        self._setup_scaling(z)
        self.lam = np.zeros(self.m)
        self.rho = opts.initial_penalty
        omega = 1.0 / self.rho
        eta = 1.0 / self.rho ** 0.1
        trace = []
        status = "max_iterations"
        total_inner = 0
        stalled_feasibility = 0
        reference_violation = np.inf
        best = None

        logger.debug(f"Solving {self.pop} with {opts}")
        logger.debug(self.header)

        iteration = 0
        for iteration in range(1, opts.max_outer_iterations + 1):
            try:
                z, inner = self.inner_solve(z, omega)
            except LinearAlgebraFailure as e:
                logger.error(f"Inner solve failed at outer iteration {iteration}: {str(e)}")
                status = "numerical_failure"
                break
            total_inner += inner

            raw = self.compiled.values(z) if self.m else np.zeros(0)
            violation = float(np.max(self.compiled.violation(raw), initial=0.0))
            objective = self.compiled.objective(z)
            c = raw * self.row_scale
            pi, _ = self._shifted(c) if self.m else (np.zeros(0), None)
            grad, _ = self.merit_derivatives(z)
            stationarity = float(np.max(np.abs(self.projected_gradient(z, grad)), initial=0.0))
            complementarity = float(np.max(np.abs(np.minimum(pi, -c))[~self.is_eq], initial=0.0)) if self.m else 0.0
            kkt = max(stationarity, complementarity)

            if opts.trace:
                trace.append((iteration, objective, violation, self.rho))
            logger.debug(self.lformat % (iteration, objective, stationarity, omega, violation, self.rho, inner))

            feasible = violation <= opts.feasibility_tol
            if best is None or feasible or (best[1] > opts.feasibility_tol and violation < best[1]):
                best = (z.copy(), violation, objective, kkt, pi.copy())

            if violation <= opts.feasibility_tol and kkt <= opts.optimality_tol:
                self.lam = pi
                best = (z.copy(), violation, objective, kkt, pi.copy())
                status = "optimal_local"
                break

            if violation <= max(eta, opts.feasibility_tol):
                # Converging: accept multipliers and tighten tolerances
                self.lam = np.clip(pi, -MULTIPLIER_CAP, MULTIPLIER_CAP)
                eta = max(eta / self.rho ** 0.9, 0.1 * opts.feasibility_tol)
                omega = max(omega / self.rho, 0.1 * opts.optimality_tol)
                reference_violation = violation
                stalled_feasibility = 0
            else:
                self.rho *= opts.penalty_growth
                eta = max(1.0 / self.rho ** 0.1, 0.1 * opts.feasibility_tol)
                omega = max(1.0 / self.rho, 0.1 * opts.optimality_tol)
                if violation > 0.99 * reference_violation:
                    stalled_feasibility += 1
                else:
                    reference_violation = violation
                    stalled_feasibility = 0

                if self.rho > opts.penalty_cap or stalled_feasibility >= 10:
                    status = "infeasible_local"
                    logger.warning(
                        f"Problem appears locally infeasible: violation {violation:.3e}, rho {self.rho:.1e}"
                    )
                    break

        if best is None:
            best = (z.copy(), np.inf, float("nan"), float("nan"), np.zeros(self.m))
        point, violation, objective, kkt, pi = best
        multipliers = pi * self.row_scale / self.obj_scale * self.compiled.signs if self.m else np.zeros(0)
        elapsed = time.time() - start

        message = (
            f"{status} after {iteration} outer / {total_inner} inner iterations "
            f"in {elapsed:.2f}s: objective {objective:.8g}, violation {violation:.2e}, kkt {kkt:.2e}"
        )
        if status == "optimal_local":
            logger.debug(message)
        else:
            logger.warning(message)

        return NlpResult(
            status=status,
            point=point,
            objective=objective,
            max_violation=violation,
            iterations=iteration,
            multipliers=multipliers,
            kkt_residual=kkt,
            trace=trace,
            message=message
        )


def solve_nlp(pop, x0, options=None):
    """
    Solve a PopProblem locally from x0.

    Args:
        pop: The PopProblem
        x0: Starting point of dimension pop.dim
        options: NlpOptions, defaults from settings

    Returns:
        An NlpResult
    """
    return AugmentedLagrangianSolver(pop, options).solve(x0)
