import os
import time
import traceback

import numpy as np
from loguru import logger

from src.config import settings
from src.models.report import PipelineOptions, PipelineRun, StagePoint, StageReport
from src.services.case_service import case_service
from src.services.certify_service import certify_service
from src.services.network_service import network_service
from src.services.pop_service import pop_service, NORMS
from src.services.relaxation_service import relaxation_service
from src.services.report_service import report_service
from src.solvers.nlp_solver import solve_nlp
from src.solvers.sdp_solver import solve_sdp
from src.utils.errors import FeasprojError, IterationLimit, LinearAlgebraFailure
from src.utils.logging_config import run_context
from src.utils.trace import dump_sdp, trace_path, write_trace


BACKENDS = ("nlp", "sdp")


def _elapsed_ms(start):
    return int(round((time.time() - start) * 1000.0))


class FeasibilityPipeline:
    """
    Three-stage repair of an ACOPF instance.

    Stage 1 finds the smallest slack norm that makes the instance feasible, Stage 2
    minimizes the generation cost within that slack budget and Stage 3 projects the
    resulting point onto the instance with the Stage-2 slacks applied to its bounds.
    """

    def run(self, case, perturbation=None, norm="l1", backend="nlp", options=None):
        """
        Run all stages on one instance.

        Args:
            case: The CaseData
            perturbation: Optional Perturbation applied first
            norm: l1, l2 or linf
            backend: nlp or sdp
            options: PipelineOptions

        Returns:
            A PipelineRun
        """
        if norm not in NORMS:
            raise ValueError(f"Unknown norm: {norm}")
        if backend not in BACKENDS:
            raise ValueError(f"Unknown backend: {backend}")
        options = options or PipelineOptions()

        instance_case = case_service.apply_perturbation(case, perturbation) if perturbation else case
        with run_context(instance_case.name):
            return self._run(instance_case, norm, backend, options)

    def _run(self, instance_case, norm, backend, options):
        instance = instance_case.name
        logger.info(f"Running {instance} with backend {backend}, norm {norm}")

        adm = network_service.build_admittance(instance_case)
        fm = network_service.build_flow_matrices(adm)
        op2 = pop_service.build_op2(instance_case, fm, adm)
        slacked = pop_service.build_slacked(op2)

        run = PipelineRun(instance, backend, norm, [])
        if backend == "nlp":
            candidate = self._nlp_stages(run, slacked, norm, options)
        else:
            candidate = self._sdp_stages(run, instance_case, fm, op2, slacked, norm, options)

        if candidate is not None:
            chi_tilde, slacks = candidate
            self._stage3(run, op2, slacked, chi_tilde, slacks, norm, options)

        if run.failed:
            logger.error(f"{instance}: at least one stage failed")
        elif run.infeasible_declared:
            logger.warning(f"{instance}: declared infeasible, repaired on the closest feasible input")
        else:
            logger.success(f"{instance}: completed with exit code {run.exit_code}")
        return run

    def run_pipeline(self, case, perturbation=None, norm="l1", backend="nlp", options=None):
        """Run all stages; returns (list of StageReport, AlphaCertificate or None)."""
        run = self.run(case, perturbation, norm, backend, options)
        return run.reports, run.certificate

    def _label(self, run, stage):
        return f"{run.instance}-{run.backend}-{run.norm}-{stage}"

    def _record(self, run, report, names=None, values=None, options=None):
        if names is not None and values is not None:
            report.point = StagePoint(names, values)
            if options is not None and options.points_dir:
                path = os.path.join(options.points_dir, f"{self._label(run, report.stage)}.json")
                report.point_file = report_service.write_point(path, report.point)
        run.reports.append(report)
        logger.info(f"{report} in {report.wall_ms} ms")
        return report

    def _failure(self, run, stage, norm, start, e):
        logger.error(f"{run.instance} {stage} failed: {str(e)}")
        logger.debug(traceback.format_exc())
        report = StageReport(
            stage, run.backend, norm, status=type(e).__name__, wall_ms=_elapsed_ms(start), message=str(e)
        )
        run.reports.append(report)
        return None

    def _trace(self, run, stage, rows, header, options):
        if options.trace and rows:
            write_trace(f"{self._label(run, stage)}.csv", rows, header)

    @staticmethod
    def _margin(value, options):
        """Tolerance room added on top of a Stage-1 slack quantity."""
        if not options.budget_margin:
            return 0.0
        return options.budget_margin * value + settings.BUDGET_MARGIN_ATOL

    # NLP backend

    def _nlp_stages(self, run, slacked, norm, options):
        start = time.time()
        try:
            problem, handle = pop_service.norm_epigraph(slacked, norm)
            stage1 = problem.with_objective(handle, name="stage1")
            z0 = pop_service.initial_point(stage1, options.warm_start)
            result = solve_nlp(stage1, z0, options.nlp)
        except FeasprojError as e:
            return self._failure(run, "S1", norm, start, e)

        slacks = pop_service.slack_values(stage1, result.point)
        ub1 = pop_service.slack_norm(slacks.values(), norm)
        report = StageReport(
            "S1", "nlp", norm, slack_norm=ub1, objective=result.objective, status=result.status,
            slacks=dict(slacks), wall_ms=_elapsed_ms(start), message=result.message
        )
        self._record(run, report, stage1.layout.names, result.point, options)
        self._trace(run, "S1", result.trace, "iteration,objective,violation,rho", options)

        start = time.time()
        try:
            if ub1 <= settings.INFEASIBILITY_TOL:
                stage2 = pop_service.fix_slacks(problem)
                budget = 0.0
            else:
                budget = ub1 * (1.0 + options.budget_slack) + self._margin(ub1, options)
                stage2 = pop_service.with_budget(problem, handle, norm, budget)
            stage2 = stage2.with_objective(stage2.cost, name="stage2")
            result = solve_nlp(stage2, result.point, options.nlp)
        except FeasprojError as e:
            return self._failure(run, "S2", norm, start, e)

        slacks = pop_service.slack_values(stage2, result.point)
        report = StageReport(
            "S2", "nlp", norm, slack_norm=pop_service.slack_norm(slacks.values(), norm),
            objective=result.objective, status=result.status, budget=budget,
            slacks=dict(slacks), wall_ms=_elapsed_ms(start), message=result.message
        )
        self._record(run, report, stage2.layout.names, result.point, options)
        self._trace(run, "S2", result.trace, "iteration,objective,violation,rho", options)
        return result.point[:slacked.layout.segment("s").start], slacks

    # SDP backend

    def _sdp_stages(self, run, case, fm, op2, slacked, norm, options):
        start = time.time()
        try:
            model = relaxation_service.build_relaxation(case, fm, slacked=True, norm=norm, pop=op2)
            if options.trace:
                dump_sdp(model.sdp, trace_path(f"{self._label(run, 'S1')}.sdpa"))
            sol = solve_sdp(model.sdp, options.sdp_tolerance, max_block_size=options.sdp_max_block_size)
        except FeasprojError as e:
            return self._failure(run, "S1", norm, start, e)

        slacks = model.slack_values(sol)
        ub1 = pop_service.slack_norm(slacks.values(), norm)
        lb1 = max(0.0, sol.dual_objective)
        if norm == "l2":
            lb1 = float(np.sqrt(lb1))
        run.infeasible_declared = sol.solved and lb1 > settings.INFEASIBILITY_TOL
        report = StageReport(
            "S1", "sdp", norm, slack_norm=ub1, objective=sol.primal_objective, status=sol.status,
            lb=lb1, slacks=dict(slacks), wall_ms=_elapsed_ms(start), message=repr(sol)
        )
        self._record(run, report, slacks.keys(), list(slacks.values()), options)
        if run.infeasible_declared:
            logger.warning(f"{run.instance}: lower bound {lb1:.6g} certifies infeasibility")
        if not sol.solved:
            return None

        start = time.time()
        try:
            if ub1 <= settings.INFEASIBILITY_TOL:
                budget = 0.0
                model = relaxation_service.build_relaxation(case, fm, slacked=False, norm=norm, pop=op2)
                sol = self._solve_relaxation(run, model, options)
            else:
                model, sol, budget = self._budgeted_relaxation(run, case, fm, op2, norm, ub1, lb1, options)
            candidate = relaxation_service.extract_candidate(model, sol) if sol.solved else None
        except FeasprojError as e:
            return self._failure(run, "S2", norm, start, e)

        slacks = model.slack_values(sol)
        report = StageReport(
            "S2", "sdp", norm, slack_norm=pop_service.slack_norm(slacks.values(), norm),
            objective=sol.primal_objective, status=sol.status, budget=budget,
            slacks=dict(slacks), wall_ms=_elapsed_ms(start), message=repr(sol)
        )
        if candidate is None:
            self._record(run, report)
            return None
        run.rank1_gap = candidate["rank1_gap"]
        self._record(run, report, op2.layout.names, candidate["point"], options)
        return candidate["point"], slacks

    def _solve_relaxation(self, run, model, options):
        if options.trace:
            dump_sdp(model.sdp, trace_path(f"{self._label(run, 'S2')}.sdpa"))
        return solve_sdp(model.sdp, options.sdp_tolerance, max_block_size=options.sdp_max_block_size)

    def _budgeted_relaxation(self, run, case, fm, op2, norm, ub1, lb1, options):
        """
        Stage-2 relaxation under the slack budget.

        A budget equal to the Stage-1 optimum leaves the relaxation without a strict
        interior, so the margin is at least SDP_BUDGET_MARGIN relative plus the Stage-1
        duality gap. When the solve still breaks down the margin grows tenfold, up to
        SDP_BUDGET_RETRIES times.

        Returns:
            (model, solution, budget) of the last attempt
        """
        margin = self._margin(ub1, options)
        if options.budget_margin:
            margin = max(margin, settings.SDP_BUDGET_MARGIN * ub1 + abs(ub1 - lb1))

        for attempt in range(settings.SDP_BUDGET_RETRIES + 1):
            budget = ub1 * (1.0 + options.budget_slack) + margin
            model = relaxation_service.build_relaxation(case, fm, slacked=True, norm=norm, budget=budget, pop=op2)
            last = attempt == settings.SDP_BUDGET_RETRIES or not margin
            try:
                sol = self._solve_relaxation(run, model, options)
            except (LinearAlgebraFailure, IterationLimit) as e:
                if last:
                    raise
                reason = str(e)
            else:
                if sol.solved or last:
                    return model, sol, budget
                reason = sol.status
            logger.warning(f"Stage-2 relaxation with budget {budget:.6g} ended with {reason}; relaxing the budget")
            margin *= 10.0

    # Stage 3

    def _stage3(self, run, op2, slacked, chi_tilde, slacks, norm, options):
        start = time.time()
        try:
            rtol = options.budget_margin
            atol = settings.BUDGET_MARGIN_ATOL if rtol else 0.0
            amended = pop_service.amend_bounds(slacked, dict(slacks), rtol, atol)
            result = certify_service.project_stage3(
                amended, chi_tilde, options.stage3, options.stage3_norm, options.nlp
            )
        except FeasprojError as e:
            return self._failure(run, "S3", norm, start, e)

        original = pop_service.evaluate(op2, result.point).max_violation
        logger.info(f"Stage-3 point violates the unamended instance by {original:.3e}")
        report = StageReport(
            "S3", run.backend, norm, slack_norm=pop_service.slack_norm(slacks.values(), norm),
            objective=result.objective, status=result.status, wall_ms=_elapsed_ms(start),
            message=result.message
        )
        self._record(run, report, amended.layout.names, result.point, options)
        newton = bool(result.trace) and len(result.trace[0]) == 2
        header = "iteration,residual" if newton else "iteration,objective,violation,rho"
        self._trace(run, "S3", result.trace, header, options)

        if report.failed:
            return None
        try:
            run.certificate = certify_service.certify_point(amended, result.point)
            logger.info(f"{run.certificate}")
        except FeasprojError as e:
            logger.error(f"Certification failed: {str(e)}")
        return report


# Singleton instance
feasibility_pipeline = FeasibilityPipeline()
