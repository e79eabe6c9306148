import math
from typing import Dict, Any, Optional, List

import numpy as np

from src.config import settings


ALPHA0 = (13.0 - 3.0 * math.sqrt(17.0)) / 4.0

NLP_STATUSES = ("optimal_local", "max_iterations", "infeasible_local", "numerical_failure")
SUCCESS_STATUSES = ("optimal_local", "optimal", "near_optimal")


class NlpOptions:
    """Budgets and tolerances of the augmented Lagrangian solver."""

    def __init__(
        self,
        max_outer_iterations: Optional[int] = None,
        max_inner_iterations: Optional[int] = None,
        feasibility_tol: Optional[float] = None,
        optimality_tol: Optional[float] = None,
        initial_penalty: Optional[float] = None,
        penalty_growth: Optional[float] = None,
        penalty_cap: Optional[float] = None,
        trace: bool = False
    ):
        self.max_outer_iterations = max_outer_iterations or settings.NLP_MAX_OUTER_ITERATIONS
        self.max_inner_iterations = max_inner_iterations or settings.NLP_MAX_INNER_ITERATIONS
        self.feasibility_tol = feasibility_tol or settings.NLP_FEASIBILITY_TOL
        self.optimality_tol = optimality_tol or settings.NLP_OPTIMALITY_TOL
        self.initial_penalty = initial_penalty or settings.NLP_INITIAL_PENALTY
        self.penalty_growth = penalty_growth or settings.NLP_PENALTY_GROWTH
        self.penalty_cap = penalty_cap or settings.NLP_PENALTY_CAP
        self.trace = trace

        if self.feasibility_tol <= 0 or self.optimality_tol <= 0:
            raise ValueError("Tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("Penalty growth must exceed 1")

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    def __repr__(self) -> str:
        return (
            f"NlpOptions(outer={self.max_outer_iterations}, inner={self.max_inner_iterations}, "
            f"feas={self.feasibility_tol:g}, opt={self.optimality_tol:g})"
        )


class NlpResult:
    """Outcome of a local solve."""

    def __init__(
        self,
        status: str,
        point,
        objective: float,
        max_violation: float,
        iterations: int,
        multipliers=None,
        kkt_residual: float = float("nan"),
        trace: Optional[List[tuple]] = None,
        message: str = ""
    ):
        self.status = status
        self.point = np.asarray(point, dtype=float)
        self.objective = objective
        self.max_violation = max_violation
        self.iterations = iterations
        self.multipliers = multipliers
        self.kkt_residual = kkt_residual
        self.trace = trace or []
        self.message = message

    @property
    def success(self) -> bool:
        return self.status == "optimal_local"

    def __repr__(self) -> str:
        return (
            f"NlpResult(status={self.status}, objective={self.objective:.6g}, "
            f"max_violation={self.max_violation:.3e}, iterations={self.iterations})"
        )


class StagePoint:
    """A named point produced by a stage."""

    def __init__(self, names: List[str], values):
        self.names = list(names)
        self.values = np.asarray(values, dtype=float)

    def get(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def to_dict(self) -> Dict[str, Any]:
        return {"names": self.names, "values": [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StagePoint':
        return cls(data["names"], data["values"])


class StageReport:
    """Values recorded for one stage of a pipeline run."""

    def __init__(
        self,
        stage: str,
        backend: str,
        norm: str,
        slack_norm: float = float("nan"),
        objective: float = float("nan"),
        status: str = "not_run",
        lb: Optional[float] = None,
        budget: Optional[float] = None,
        point: Optional[StagePoint] = None,
        slacks: Optional[Dict[str, float]] = None,
        wall_ms: int = 0,
        point_file: Optional[str] = None,
        message: str = ""
    ):
        self.stage = stage
        self.backend = backend
        self.norm = norm
        self.slack_norm = slack_norm
        self.objective = objective
        self.status = status
        self.lb = lb
        self.budget = budget
        self.point = point
        self.slacks = slacks
        self.wall_ms = wall_ms
        self.point_file = point_file
        self.message = message

    @property
    def stage_number(self) -> int:
        return int(self.stage[1:])

    @property
    def failed(self) -> bool:
        return self.status not in SUCCESS_STATUSES

    def __repr__(self) -> str:
        return (
            f"StageReport({self.stage}, {self.backend}/{self.norm}, status={self.status}, "
            f"slack_norm={self.slack_norm:.6g}, objective={self.objective:.6g})"
        )


class AlphaCertificate:
    """Smale alpha-beta-gamma quantities at a point."""

    def __init__(self, alpha: float, beta: float, gamma: float, refined_point=None):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.alpha0 = ALPHA0
        self.certified = bool(alpha <= ALPHA0)
        self.refined_point = None if refined_point is None else np.asarray(refined_point, dtype=float)
        self.distance_bound = 2.0 * beta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "alpha0": self.alpha0,
            "certified": self.certified
        }

    def __repr__(self) -> str:
        verdict = "certified" if self.certified else "not certified"
        return f"AlphaCertificate(alpha={self.alpha:.4e}, beta={self.beta:.4e}, gamma={self.gamma:.4e}, {verdict})"


class RefineResult:
    """Newton iterates produced by a refinement."""

    def __init__(self, point, converged: bool, trace: List[float], iterates: List):
        self.point = np.asarray(point, dtype=float)
        self.converged = converged
        self.trace = trace
        self.iterates = iterates

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    def __repr__(self) -> str:
        return f"RefineResult(converged={self.converged}, iterations={self.iterations})"


class PipelineOptions:
    """Run options shared by both backends."""

    def __init__(
        self,
        stage3: str = "power_flow",
        stage3_norm: str = "l2",
        warm_start: str = "flat",
        budget_slack: float = 0.0,
        budget_margin: Optional[float] = None,
        trace: bool = False,
        points_dir: Optional[str] = None,
        nlp: Optional[NlpOptions] = None,
        sdp_tolerance: Optional[float] = None,
        sdp_max_block_size: Optional[int] = None
    ):
        if budget_slack < 0:
            raise ValueError("Budget slack must be nonnegative")
        budget_margin = settings.BUDGET_MARGIN if budget_margin is None else float(budget_margin)
        if budget_margin < 0:
            raise ValueError("Budget margin must be nonnegative")
        self.stage3 = stage3
        self.stage3_norm = stage3_norm
        self.warm_start = warm_start
        self.budget_slack = budget_slack
        self.budget_margin = budget_margin
        self.trace = trace
        self.points_dir = points_dir
        self.nlp = nlp or NlpOptions(trace=trace)
        self.sdp_tolerance = sdp_tolerance or settings.SDP_TOLERANCE
        self.sdp_max_block_size = sdp_max_block_size or settings.SDP_MAX_BLOCK_SIZE

    def __repr__(self) -> str:
        return (
            f"PipelineOptions(stage3={self.stage3}/{self.stage3_norm}, warm_start={self.warm_start}, "
            f"budget_slack={self.budget_slack:g}, budget_margin={self.budget_margin:g})"
        )


class PipelineRun:
    """Reports and verdict of one pipeline run."""

    def __init__(
        self,
        instance: str,
        backend: str,
        norm: str,
        reports: List[StageReport],
        certificate: Optional[AlphaCertificate] = None,
        infeasible_declared: bool = False,
        rank1_gap: Optional[float] = None
    ):
        self.instance = instance
        self.backend = backend
        self.norm = norm
        self.reports = reports
        self.certificate = certificate
        self.infeasible_declared = infeasible_declared
        self.rank1_gap = rank1_gap

    @property
    def failed(self) -> bool:
        return any(report.failed for report in self.reports)

    @property
    def exit_code(self) -> int:
        """3 on any stage failure, 2 when infeasibility was declared, 0 otherwise."""
        if self.failed:
            return 3
        if self.infeasible_declared:
            return 2
        return 0

    def report(self, stage: str) -> Optional[StageReport]:
        for report in self.reports:
            if report.stage == stage:
                return report
        return None

    def __repr__(self) -> str:
        return (
            f"PipelineRun({self.instance}, {self.backend}/{self.norm}, stages={len(self.reports)}, "
            f"exit_code={self.exit_code})"
        )
