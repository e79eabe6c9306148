from collections import OrderedDict

import numpy as np
import scipy.linalg as la
from loguru import logger

from src.config import settings
from src.models.problem import PolySystem, QuadraticFunction
from src.models.report import AlphaCertificate, NlpResult, RefineResult
from src.services.pop_service import pop_service
from src.solvers.nlp_solver import solve_nlp
from src.utils.errors import (
    DimensionMismatch, Divergence, NonFinite, RankDeficientBeyondTolerance
)
from src.utils.linalg import pinv


STAGE3_MODES = ("power_flow", "least_squares")
FEASIBLE_TOL = 1e-6
GROWTH_FACTOR = 10.0
GROWTH_LIMIT = 3


class CertifyService:
    """Service for Newton refinement, alpha-theory certification and Stage-3 projection."""

    @staticmethod
    def _newton_parts(system, x):
        x = np.asarray(x, dtype=float)
        f = system.values(x)
        J = system.jacobian(x)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(J))):
            raise NonFinite("Residual or Jacobian is not finite")
        J_pinv, rank = pinv(J)
        return x, f, J_pinv, rank, min(J.shape)

    def newton_step(self, system, x, strict=False):
        """
        Apply the Newton operator N_f(x) = x - pinv(J(x)) f(x).

        Args:
            system: A PolySystem
            x: The current point
            strict: Raise instead of warning when the Jacobian is rank deficient

        Returns:
            The next point
        """
        x, f, J_pinv, rank, expected = self._newton_parts(system, x)
        if rank < expected:
            if strict:
                raise RankDeficientBeyondTolerance(rank, expected)
            logger.warning(f"Jacobian has rank {rank} < {expected}, using the truncated pseudoinverse")
        return x - J_pinv @ f

    def alpha_test(self, system, x):
        """
        Compute beta, gamma and alpha at x.

        gamma is bounded by the spectral norm of pinv(J) times the unfolded second
        derivative, the only nonvanishing higher derivative of a quadratic system.

        Returns:
            An AlphaCertificate
        """
        x, f, J_pinv, rank, expected = self._newton_parts(system, x)
        if rank < expected:
            logger.warning(f"Jacobian has rank {rank} < {expected} at the certified point")
        step = J_pinv @ f
        beta = float(np.linalg.norm(step))
        G = system.second_derivative_gram()
        T = J_pinv @ G @ J_pinv.T
        lam_max = float(la.eigvalsh(0.5 * (T + T.T))[-1]) if T.size else 0.0
        gamma = float(np.sqrt(max(lam_max, 0.0)))
        certificate = AlphaCertificate(beta * gamma, beta, gamma, refined_point=x - step)
        logger.debug(f"{certificate}")
        return certificate

    def newton_refine(self, system, x0, max_iter=None, tol=None):
        """
        Iterate the Newton operator until ||f||_inf <= tol.

        Args:
            system: A PolySystem
            x0: Starting point
            max_iter: Iteration budget, NEWTON_MAX_ITERATIONS by default
            tol: Residual tolerance, NEWTON_TOLERANCE by default

        Returns:
            A RefineResult whose trace holds the residual norm of every iterate

        Raises:
            Divergence: The residual grew tenfold on three consecutive iterations
        """
        max_iter = settings.NEWTON_MAX_ITERATIONS if max_iter is None else max_iter
        tol = settings.NEWTON_TOLERANCE if tol is None else tol
        x = np.asarray(x0, dtype=float).copy()
        residual = float(np.max(np.abs(system.values(x)), initial=0.0))
        trace = [residual]
        iterates = [x.copy()]
        if residual <= tol:
            return RefineResult(x, True, trace, iterates)

        growths = 0
        for iteration in range(1, max_iter + 1):
            x_new = self.newton_step(system, x)
            values = system.values(x_new)
            if not np.all(np.isfinite(values)):
                raise Divergence(iteration, float("inf"))
            new_residual = float(np.max(np.abs(values), initial=0.0))
            growths = growths + 1 if new_residual >= GROWTH_FACTOR * residual else 0
            if growths >= GROWTH_LIMIT:
                raise Divergence(iteration, new_residual)

            moved = float(np.linalg.norm(x_new - x))
            x, residual = x_new, new_residual
            trace.append(residual)
            iterates.append(x.copy())
            if residual <= tol:
                logger.debug(f"Newton converged in {iteration} iterations, residual {residual:.2e}")
                return RefineResult(x, True, trace, iterates)
            if moved <= 1e-15 * (1.0 + float(np.linalg.norm(x))):
                logger.warning(f"Newton stalled at iteration {iteration}, residual {residual:.2e}")
                break
        else:
            logger.warning(f"Newton did not converge in {max_iter} iterations, residual {residual:.2e}")
        return RefineResult(x, False, trace, iterates)

    def build_power_flow_system(self, pop, chi):
        """
        Power-flow equations in the voltages with the controls of chi held fixed.

        Generator buses keep their active injection and voltage magnitude, load buses
        their demand, and the slack bus its voltage magnitude at zero angle.

        Args:
            pop: An unslacked PopProblem
            chi: A point on its layout

        Returns:
            Tuple (PolySystem over the 2n voltages, OrderedDict of fixed controls)
        """
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (pop.dim,):
            raise DimensionMismatch(pop.dim, chi.size)
        ctx = pop.network
        n = ctx.n
        fm = ctx.flow
        dim = 2 * n
        xidx = np.arange(dim)
        ref_bus = ctx.case.buses[ctx.ref]

        equations, names = [], []
        controls = OrderedDict()
        for k, bus in enumerate(ctx.case.buses):
            if k == ctx.ref:
                continue
            gen = ctx.gen_bus(bus.id)
            if gen is not None:
                pg = float(chi[pop.layout.index(f"Pg:{bus.id}")])
                vm2 = float(chi[k] ** 2 + chi[n + k] ** 2)
                controls[f"Pg:{bus.id}"] = pg
                controls[f"Vm:{bus.id}"] = float(np.sqrt(vm2))
                equations.append(QuadraticFunction.embedded(fm.Yk[k], xidx, dim, None, bus.Pd - pg))
                names.append(f"P:{bus.id}")
                equations.append(QuadraticFunction.embedded(fm.Mk[k], xidx, dim, None, -vm2))
                names.append(f"V:{bus.id}")
            else:
                equations.append(QuadraticFunction.embedded(fm.Yk[k], xidx, dim, None, bus.Pd))
                names.append(f"P:{bus.id}")
                equations.append(QuadraticFunction.embedded(fm.Ybar_k[k], xidx, dim, None, bus.Qd))
                names.append(f"Q:{bus.id}")

        vm_ref = float(np.hypot(chi[ctx.ref], chi[n + ctx.ref]))
        controls[f"Vm:{ref_bus.id}"] = vm_ref
        equations.append(QuadraticFunction.linear(dim, {ctx.ref: 1.0}, -vm_ref))
        names.append(f"Vr:{ref_bus.id}")
        equations.append(QuadraticFunction.linear(dim, {n + ctx.ref: 1.0}))
        names.append(f"Vi:{ref_bus.id}")
        return PolySystem(equations, names), controls

    def certify_point(self, pop, chi):
        """alpha_test on the power-flow system implied by the controls of chi."""
        system, _ = self.build_power_flow_system(pop, chi)
        return self.alpha_test(system, np.asarray(chi, dtype=float)[:system.dim])

    def project_stage3(self, pop, chi_tilde, mode="power_flow", norm="l2", options=None,
                       max_iter=None, tol=None):
        """
        Project a candidate onto the feasible set of an unslacked problem.

        power_flow runs Newton on the power-flow system with the candidate's controls and
        falls back to least_squares when Newton fails or leaves bounds violated;
        least_squares solves min ||chi - chi_tilde||_p with the local NLP solver.

        Args:
            pop: An unslacked PopProblem
            chi_tilde: The candidate point on its layout
            mode: power_flow or least_squares
            norm: Projection norm of least_squares
            options: NlpOptions for least_squares

        Returns:
            An NlpResult on the layout of pop, objective being the generation cost
        """
        if mode not in STAGE3_MODES:
            raise ValueError(f"Unknown Stage-3 mode: {mode}")
        chi_tilde = np.asarray(chi_tilde, dtype=float)
        if chi_tilde.shape != (pop.dim,):
            raise DimensionMismatch(pop.dim, chi_tilde.size)

        evaluation = pop_service.evaluate(pop, chi_tilde)
        if evaluation.max_violation <= FEASIBLE_TOL:
            logger.info("Candidate is already feasible")
            return NlpResult(
                "optimal_local", chi_tilde, pop.cost(chi_tilde), evaluation.max_violation, 0,
                message="candidate already feasible"
            )

        if mode == "power_flow":
            result = self._power_flow(pop, chi_tilde, max_iter, tol)
            if result is not None:
                return result
            logger.warning("Newton refinement did not reach a feasible point, falling back to least squares")

        return self._least_squares(pop, chi_tilde, norm, options)

    def _power_flow(self, pop, chi_tilde, max_iter, tol):
        n = pop.network.n
        system, controls = self.build_power_flow_system(pop, chi_tilde)
        try:
            refined = self.newton_refine(system, chi_tilde[:2 * n], max_iter, tol)
        except Divergence as e:
            logger.warning(f"Newton refinement diverged: {str(e)}")
            return None

        point = pop_service.point_from_voltages(pop, refined.point)
        evaluation = pop_service.evaluate(pop, point)
        trace = [(i, r) for i, r in enumerate(refined.trace)]
        message = (
            f"Newton {'converged' if refined.converged else 'stopped'} after {refined.iterations} "
            f"iterations, max violation {evaluation.max_violation:.2e}"
        )
        logger.info(message)
        if not refined.converged or evaluation.max_violation > FEASIBLE_TOL:
            violated = evaluation.violated(FEASIBLE_TOL)
            if violated:
                logger.debug(f"Violated after Newton: {', '.join(violated[:10])}")
            return None
        return NlpResult(
            "optimal_local", point, pop.cost(point), evaluation.max_violation, refined.iterations,
            trace=trace, message=message
        )

    def _least_squares(self, pop, chi_tilde, norm, options):
        problem = pop_service.projection_problem(pop, chi_tilde, norm)
        z0 = np.zeros(problem.dim)
        z0[:pop.dim] = chi_tilde
        result = solve_nlp(problem, z0, options)
        point = result.point[:pop.dim]
        evaluation = pop_service.evaluate(pop, point)
        distance = float(np.linalg.norm(point - chi_tilde))
        logger.info(f"Least-squares projection {result.status}: distance {distance:.6g}")
        return NlpResult(
            result.status, point, pop.cost(point), evaluation.max_violation, result.iterations,
            multipliers=result.multipliers, kkt_residual=result.kkt_residual, trace=result.trace,
            message=result.message
        )


certify_service = CertifyService()
