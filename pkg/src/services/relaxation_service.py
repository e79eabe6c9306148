from collections import OrderedDict

import numpy as np
import scipy.linalg as la
from loguru import logger

from src.models.sdp import SdpProblem
from src.services.network_service import network_service
from src.services.pop_service import pop_service, NORMS, SLACK_RULES
from src.utils.errors import InconsistentDimensions, NotSolved, DimensionMismatch


TIGHT_GAP = 1e-6


class RelaxationModel:
    """
    An order-one SDP relaxation of OP2 with the maps needed to read its solution back.

    The W block is the lifted xx' with the row and column of the slack bus imaginary
    voltage removed. Scalar variables (alpha per generator bus, slacks, surplus of
    inequality rows, t) live in the nonnegative block 'aux'.
    """

    def __init__(self, sdp, pop, keep, norm, slacked, budget, aux, surplus, slack_names, a, b):
        self.sdp = sdp
        self.pop = pop
        self.keep = keep
        self.norm = norm
        self.slacked = slacked
        self.budget = budget
        self.aux = aux
        self.surplus = surplus
        self.slack_names = slack_names
        # a_k = c0 + c1 Pd, b_k = sqrt(c2) Pd per generator bus
        self.a = a
        self.b = b

    @property
    def minimizes_cost(self) -> bool:
        return not self.slacked or self.budget is not None

    @property
    def w_block(self) -> int:
        return self.sdp.block_index("W")

    @property
    def aux_block(self) -> int:
        return self.sdp.block_index("aux")

    def _aux_values(self, sol):
        return np.asarray(sol.X[self.aux_block], dtype=float)

    def slack_values(self, sol):
        """Slack values of a solution, keyed by slack name."""
        values = self._aux_values(sol)
        return OrderedDict((name, max(0.0, float(values[self.aux[name]]))) for name in self.slack_names)

    def cost(self, sol) -> float:
        values = self._aux_values(sol)
        return float(sum(values[i] for name, i in self.aux.items() if name.startswith("alpha:")))

    def W(self, sol) -> np.ndarray:
        return np.asarray(sol.X[self.w_block])

    def __repr__(self) -> str:
        kind = "slacked" if self.slacked else "plain"
        return f"RelaxationModel({kind}, norm={self.norm}, budget={self.budget}, {self.sdp})"


class _AuxRegistry:
    """Collects nonnegative scalar variables until the aux block size is known."""

    def __init__(self):
        self.index = OrderedDict()
        self.entries = []
        self.objective = []
        self.surplus = {}

    def term(self, row, name, coef):
        self.index.setdefault(name, len(self.index))
        self.entries.append((row, name, coef))

    def add_surplus(self, row, name, coef):
        self.term(row, name, coef)
        self.surplus[name] = (row, coef)

    def cost(self, name, coef=1.0):
        self.index.setdefault(name, len(self.index))
        self.objective.append((name, coef))

    def emit(self, sdp):
        block = sdp.add_block("aux", max(1, len(self.index)), "nonneg")
        for row, name, coef in self.entries:
            sdp.add_entry(row, block, self.index[name], value=coef)
        for name, coef in self.objective:
            sdp.add_objective(block, self.index[name], value=coef)
        return block


class RelaxationService:
    """Service building the SDP relaxations of Stage 1 and Stage 2 and reading them back."""

    def build_relaxation(self, case, fm=None, slacked=False, norm="l1", budget=None, pop=None):
        """
        Build the SDP relaxation of OP2.

        With slacked=True and no budget the objective is the slack norm (Stage 1); with a
        budget the objective is the generation cost under ||s|| <= budget (Stage 2). An
        unslacked relaxation minimizes the cost over the original bounds.

        Args:
            case: The CaseData
            fm: FlowMatrices of the case, built when omitted
            slacked: Relax generation and voltage bounds with slacks
            norm: l1, l2 or linf
            budget: Stage-2 bound on the slack norm
            pop: OP2 of the case when already built

        Returns:
            A RelaxationModel
        """
        if norm not in NORMS:
            raise ValueError(f"Unknown norm: {norm}")
        if budget is not None and not slacked:
            raise InconsistentDimensions("A slack budget needs the slacked relaxation")
        if budget is not None and budget < 0:
            raise ValueError("Slack budget must be nonnegative")

        if fm is None:
            fm = network_service.build_flow_matrices(network_service.build_admittance(case))
        pop = pop or pop_service.build_op2(case, fm)
        ctx = pop.network
        n = ctx.n
        if fm.size != 2 * n:
            raise InconsistentDimensions(f"Flow matrices of size {fm.size} for {n} buses")

        keep = np.array([i for i in range(2 * n) if i != n + ctx.ref])
        reduced = fm.reduced(keep)
        slack_names = []
        if slacked:
            layout = pop_service.build_slacked(pop).layout
            slack_names = list(layout.names[layout.segment("s")])
        with_cost = not slacked or budget is not None

        sdp = SdpProblem()
        w = sdp.add_block("W", len(keep), "psd")
        aux = _AuxRegistry()
        position = ctx.case.bus_index()
        a, b = OrderedDict(), OrderedDict()

        def bound_rows(prefix, M, k, upper, lower, offset):
            """M.W within [lower, upper] after moving `offset` to the right-hand side."""
            for name, rhs, sign in ((f"{prefix}max", upper, 1.0), (f"{prefix}min", lower, -1.0)):
                row = sdp.add_row(rhs - offset, f"{name}:{k}")
                sdp.add_matrix(row, w, M)
                aux.add_surplus(row, f"u:{name}:{k}", sign)
                if slacked:
                    slack, coef = SLACK_RULES[name]
                    aux.term(row, f"{slack}:{k}", coef)

        for g in ctx.gen_buses:
            pos = position[g.bus]
            bus = ctx.case.buses[pos]
            bound_rows("P", reduced.Yk[pos], g.bus, g.Pmax, g.Pmin, bus.Pd)
            bound_rows("Q", reduced.Ybar_k[pos], g.bus, g.Qmax, g.Qmin, bus.Qd)

        for pos, bus in enumerate(ctx.case.buses):
            if ctx.gen_bus(bus.id) is None:
                row = sdp.add_row(-bus.Pd, f"Pbal:{bus.id}")
                sdp.add_matrix(row, w, reduced.Yk[pos])
                row = sdp.add_row(-bus.Qd, f"Qbal:{bus.id}")
                sdp.add_matrix(row, w, reduced.Ybar_k[pos])
            bound_rows("V", reduced.Mk[pos], bus.id, bus.Vmax ** 2, bus.Vmin ** 2, 0.0)

        for r in ctx.rated:
            # P^2 + Q^2 <= Smax^2 as [[S, P, Q], [P, S, 0], [Q, 0, S]] >= 0
            f = sdp.add_block(f"flow:{r.label}", 3, "psd")
            for i in range(3):
                row = sdp.add_row(r.Smax, f"Sdiag{i}:{r.label}")
                sdp.add_entry(row, f, i, i)
            for j, M in ((1, reduced.Ylm[r.key]), (2, reduced.Ybar_lm[r.key])):
                row = sdp.add_row(0.0, f"S0{j}:{r.label}")
                sdp.add_entry(row, f, 0, j)
                sdp.add_matrix(row, w, M, scale=-1.0)
            row = sdp.add_row(0.0, f"S12:{r.label}")
            sdp.add_entry(row, f, 1, 2)

        if with_cost:
            for g in ctx.gen_buses:
                pos = position[g.bus]
                Pd = ctx.case.buses[pos].Pd
                a[g.bus] = g.c0 + g.c1 * Pd
                b[g.bus] = np.sqrt(g.c2) * Pd
                alpha = f"alpha:{g.bus}"
                aux.cost(alpha)
                if g.c2 > 0:
                    # alpha >= (sqrt(c2) Pg)^2 + c1 Pg + c0 as [[alpha - c1 Pg - c0, sqrt(c2) Pg], [., 1]] >= 0
                    K = sdp.add_block(f"cost:{g.bus}", 2, "psd")
                    row = sdp.add_row(1.0, f"K11:{g.bus}")
                    sdp.add_entry(row, K, 1, 1)
                    row = sdp.add_row(b[g.bus], f"K01:{g.bus}")
                    sdp.add_entry(row, K, 0, 1)
                    sdp.add_matrix(row, w, reduced.Yk[pos], scale=-np.sqrt(g.c2))
                    row = sdp.add_row(-a[g.bus], f"K00:{g.bus}")
                    sdp.add_entry(row, K, 0, 0)
                    sdp.add_matrix(row, w, reduced.Yk[pos], scale=g.c1)
                    aux.term(row, alpha, -1.0)
                else:
                    row = sdp.add_row(a[g.bus], f"cost:{g.bus}")
                    aux.term(row, alpha, 1.0)
                    sdp.add_matrix(row, w, reduced.Yk[pos], scale=-g.c1)
                    aux.add_surplus(row, f"u:cost:{g.bus}", -1.0)

        if slacked:
            self._add_norm(sdp, aux, slack_names, norm, budget)

        aux.emit(sdp)
        model = RelaxationModel(
            sdp, pop, keep, norm, slacked, budget, aux.index, aux.surplus, slack_names, a, b
        )
        logger.debug(f"Built {model} for {case.name}")
        return model

    @staticmethod
    def _add_norm(sdp, aux, slack_names, norm, budget):
        """Slack-norm objective (Stage 1) or budget rows (Stage 2)."""
        if norm == "l2":
            # q_i >= s_i^2 as [[q_i, s_i], [s_i, 1]] >= 0
            squares = []
            for name in slack_names:
                q = sdp.add_block(f"sq:{name}", 2, "psd")
                row = sdp.add_row(1.0, f"sq11:{name}")
                sdp.add_entry(row, q, 1, 1)
                row = sdp.add_row(0.0, f"sq01:{name}")
                sdp.add_entry(row, q, 0, 1)
                aux.term(row, name, -1.0)
                squares.append(q)
            if budget is None:
                for q in squares:
                    sdp.add_objective(q, 0, 0)
            else:
                row = sdp.add_row(budget ** 2, "budget")
                for q in squares:
                    sdp.add_entry(row, q, 0, 0)
                aux.add_surplus(row, "u:budget", 1.0)
            return

        if norm == "l1":
            if budget is None:
                for name in slack_names:
                    aux.cost(name)
            else:
                row = sdp.add_row(budget, "budget")
                for name in slack_names:
                    aux.term(row, name, 1.0)
                aux.add_surplus(row, "u:budget", 1.0)
            return

        for name in slack_names:
            if budget is None:
                row = sdp.add_row(0.0, f"linf:{name}")
                aux.term(row, name, 1.0)
                aux.term(row, "t", -1.0)
            else:
                row = sdp.add_row(budget, f"budget:{name}")
                aux.term(row, name, 1.0)
            aux.add_surplus(row, f"u:linf:{name}", 1.0)
        if budget is None:
            aux.cost("t")

    @staticmethod
    def rank_one_factor(W):
        """
        Leading eigenpair factor of a PSD matrix.

        Returns:
            Tuple (x, rank1_gap) with x = sqrt(lambda_1) v_1 and rank1_gap = lambda_2 / lambda_1
        """
        W = np.asarray(W, dtype=float)
        values, vectors = la.eigh(0.5 * (W + W.T))
        lam1 = float(values[-1])
        if lam1 <= 0:
            return np.zeros(W.shape[0]), 1.0
        lam2 = float(values[-2]) if values.size > 1 else 0.0
        return np.sqrt(lam1) * vectors[:, -1], max(0.0, lam2) / lam1

    def extract_candidate(self, model, sol):
        """
        Read a candidate OP2 point out of a relaxation solution.

        Args:
            model: The RelaxationModel
            sol: Its SdpSolution

        Returns:
            Dict with x_candidate (rectangular voltages), rank1_gap and point (the
            candidate completed with generation and flows on the OP2 layout)
        """
        if not sol.solved:
            raise NotSolved(sol.status)

        reduced_x, gap = self.rank_one_factor(model.W(sol))
        ctx = model.pop.network
        n = ctx.n
        # the slack bus real voltage leads the reduced vector
        if reduced_x[ctx.ref] < 0:
            reduced_x = -reduced_x
        x = np.zeros(2 * n)
        x[model.keep] = reduced_x

        if gap > TIGHT_GAP:
            logger.info(f"Relaxation is not tight: rank-one gap {gap:.3e}")
        else:
            logger.info(f"Relaxation is tight: rank-one gap {gap:.3e}")
        return {
            "x_candidate": x,
            "rank1_gap": gap,
            "point": pop_service.point_from_voltages(model.pop, x)
        }

    def lift_point(self, model, x, slacks=None):
        """
        Primal SDP blocks of the rank-one lifting W = xx' of a voltage vector.

        Surplus variables are set to close their rows, so the rows are satisfied
        whenever the point satisfies OP2 and the surpluses come out nonnegative.

        Args:
            model: The RelaxationModel
            x: Rectangular voltages of dimension 2n with a zero slack-bus imaginary part
            slacks: Optional slack values in model.slack_names order

        Returns:
            List of blocks in the SdpProblem order
        """
        x = np.asarray(x, dtype=float)
        ctx = model.pop.network
        if x.shape != (2 * ctx.n,):
            raise DimensionMismatch(2 * ctx.n, x.size)
        sdp = model.sdp
        xr = x[model.keep]
        s = np.zeros(len(model.slack_names)) if slacks is None else np.asarray(slacks, dtype=float)
        fm = ctx.flow
        position = ctx.case.bus_index()

        blocks = []
        values = np.zeros(len(model.aux))
        for k, name in enumerate(model.slack_names):
            values[model.aux[name]] = s[k]
        if "t" in model.aux:
            values[model.aux["t"]] = float(np.max(s, initial=0.0))

        for block in sdp.blocks:
            if block.name == "W":
                blocks.append(np.outer(xr, xr))
            elif block.name.startswith("flow:"):
                r = next(r for r in ctx.rated if f"flow:{r.label}" == block.name)
                P = x @ fm.Ylm[r.key].dot(x)
                Q = x @ fm.Ybar_lm[r.key].dot(x)
                blocks.append(np.array([[r.Smax, P, Q], [P, r.Smax, 0.0], [Q, 0.0, r.Smax]]))
            elif block.name.startswith("cost:"):
                g = ctx.gen_bus(int(block.name.split(":")[1]))
                pos = position[g.bus]
                Pg = x @ fm.Yk[pos].dot(x) + ctx.case.buses[pos].Pd
                blocks.append(np.array([[g.c2 * Pg ** 2, np.sqrt(g.c2) * Pg], [np.sqrt(g.c2) * Pg, 1.0]]))
            elif block.name.startswith("sq:"):
                v = s[model.slack_names.index(block.name[3:])]
                blocks.append(np.array([[v * v, v], [v, 1.0]]))
            else:
                blocks.append(values)

        if model.minimizes_cost:
            for g in ctx.gen_buses:
                pos = position[g.bus]
                Pg = x @ fm.Yk[pos].dot(x) + ctx.case.buses[pos].Pd
                values[model.aux[f"alpha:{g.bus}"]] = g.c2 * Pg ** 2 + g.c1 * Pg + g.c0

        residual = sdp.b - sum(A @ np.ravel(X) for A, X in zip(sdp.A, blocks))
        for name, (row, coef) in model.surplus.items():
            values[model.aux[name]] = residual[row] / coef
        return blocks


relaxation_service = RelaxationService()
