from collections import OrderedDict

import numpy as np
import scipy.sparse as sp
from loguru import logger

from src.models.network import NetworkContext, RatedBranch
from src.models.problem import (
    VariableLayout, QuadraticFunction, Constraint, SlackBinding, PopProblem, Evaluation
)
from src.services.case_service import case_service
from src.services.network_service import network_service
from src.utils.errors import NoSlackSegment, DimensionMismatch, InconsistentDimensions


NORMS = ("l1", "l2", "linf")

# bound constraint prefix -> (slack prefix, coefficient of the slack)
SLACK_RULES = OrderedDict([
    ("Pmax", ("sP+", -1.0)),
    ("Pmin", ("sP-", 1.0)),
    ("Qmax", ("sQ+", -1.0)),
    ("Qmin", ("sQ-", 1.0)),
    ("Vmax", ("sV+", -1.0)),
    ("Vmin", ("sV-", 1.0)),
])

SLACK_FAMILIES = {
    "P": ("sP+", "sP-"),
    "Q": ("sQ+", "sQ-"),
    "V": ("sV+", "sV-"),
}


def slack_family(name):
    """'sP+:3' -> 'P'."""
    return name[1] if name.startswith("s") else None


class PopService:
    """Service assembling OP2, its slacked variants and their evaluation."""

    def build_op2(self, case, fm=None, adm=None):
        """
        Assemble the quadratic ACOPF problem in rectangular voltages.

        Args:
            case: The CaseData
            fm: FlowMatrices of the case, built when omitted
            adm: AdmittanceModel of the case, built when omitted

        Returns:
            A PopProblem named 'op2'
        """
        if adm is None:
            adm = network_service.build_admittance(case)
        if fm is None:
            fm = network_service.build_flow_matrices(adm)

        n = len(case.buses)
        if fm.size != 2 * n:
            raise InconsistentDimensions(f"Flow matrices of size {fm.size} for {n} buses")

        ids = [bus.id for bus in case.buses]
        position = case.bus_index()
        ref = position[case.slack_bus().id]
        gen_buses = case_service.aggregate_generators(case)
        rated = []
        for i in case.active_branches():
            br = case.branches[i]
            if br.rateA > 0:
                rated.append(RatedBranch(i, br.from_bus, br.to_bus, br.rateA))
                rated.append(RatedBranch(i, br.to_bus, br.from_bus, br.rateA))

        layout = VariableLayout()
        layout.add_segment("x", [f"Vr:{k}" for k in ids] + [f"Vi:{k}" for k in ids])
        layout.add_segment("Pg", [f"Pg:{g.bus}" for g in gen_buses])
        layout.add_segment("Qg", [f"Qg:{g.bus}" for g in gen_buses])
        layout.add_segment("Plm", [f"P:{r.label}" for r in rated])
        layout.add_segment("Qlm", [f"Q:{r.label}" for r in rated])
        dim = layout.dim
        xidx = np.arange(2 * n)

        lower = np.full(dim, -np.inf)
        upper = np.full(dim, np.inf)
        # Angle reference
        lower[n + ref] = upper[n + ref] = 0.0

        cost_idx = [layout.index(f"Pg:{g.bus}") for g in gen_buses]
        cost = QuadraticFunction(
            sp.csr_matrix(([g.c2 for g in gen_buses], (cost_idx, cost_idx)), shape=(dim, dim)),
            sp.csr_matrix(([g.c1 for g in gen_buses], ([0] * len(gen_buses), cost_idx)), shape=(1, dim)),
            sum(g.c0 for g in gen_buses),
            dim
        )

        params = OrderedDict()
        constraints = []
        gen_of = {g.bus: g for g in gen_buses}

        for g in gen_buses:
            ip, iq = layout.index(f"Pg:{g.bus}"), layout.index(f"Qg:{g.bus}")
            params[f"Pmax:{g.bus}"], params[f"Pmin:{g.bus}"] = g.Pmax, g.Pmin
            params[f"Qmax:{g.bus}"], params[f"Qmin:{g.bus}"] = g.Qmax, g.Qmin
            constraints += [
                Constraint(QuadraticFunction.linear(dim, {ip: 1.0}, -g.Pmax), "le", f"Pmax:{g.bus}"),
                Constraint(QuadraticFunction.linear(dim, {ip: 1.0}, -g.Pmin), "ge", f"Pmin:{g.bus}"),
                Constraint(QuadraticFunction.linear(dim, {iq: 1.0}, -g.Qmax), "le", f"Qmax:{g.bus}"),
                Constraint(QuadraticFunction.linear(dim, {iq: 1.0}, -g.Qmin), "ge", f"Qmin:{g.bus}"),
            ]

        for k, bus in enumerate(case.buses):
            params[f"Pd:{bus.id}"], params[f"Qd:{bus.id}"] = bus.Pd, bus.Qd
            params[f"Vmax:{bus.id}"], params[f"Vmin:{bus.id}"] = bus.Vmax, bus.Vmin
            p_gen = {layout.index(f"Pg:{bus.id}"): -1.0} if bus.id in gen_of else None
            q_gen = {layout.index(f"Qg:{bus.id}"): -1.0} if bus.id in gen_of else None
            # Pg_k = tr(Y_k xx') + Pd_k, with Pg_k = 0 on load buses
            constraints.append(Constraint(
                QuadraticFunction.embedded(fm.Yk[k], xidx, dim, p_gen, bus.Pd), "eq", f"Pbal:{bus.id}"
            ))
            constraints.append(Constraint(
                QuadraticFunction.embedded(fm.Ybar_k[k], xidx, dim, q_gen, bus.Qd), "eq", f"Qbal:{bus.id}"
            ))
            constraints.append(Constraint(
                QuadraticFunction.embedded(fm.Mk[k], xidx, dim, None, -bus.Vmax ** 2), "le", f"Vmax:{bus.id}"
            ))
            constraints.append(Constraint(
                QuadraticFunction.embedded(fm.Mk[k], xidx, dim, None, -bus.Vmin ** 2), "ge", f"Vmin:{bus.id}"
            ))

        for r in rated:
            ip, iq = layout.index(f"P:{r.label}"), layout.index(f"Q:{r.label}")
            params[f"Smax:{r.label}"] = r.Smax
            constraints.append(Constraint(
                QuadraticFunction.embedded(-fm.Ylm[r.key], xidx, dim, {ip: 1.0}), "eq", f"Pdef:{r.label}"
            ))
            constraints.append(Constraint(
                QuadraticFunction.embedded(-fm.Ybar_lm[r.key], xidx, dim, {iq: 1.0}), "eq", f"Qdef:{r.label}"
            ))
            constraints.append(Constraint(
                QuadraticFunction.embedded(sp.identity(2), [ip, iq], dim, None, -r.Smax ** 2),
                "le", f"Smax:{r.label}"
            ))

        context = NetworkContext(case, adm, fm, gen_buses, rated, ref)
        pop = PopProblem(layout, cost, constraints, lower, upper, params, cost, context, name="op2")
        logger.debug(f"Built {pop} for {case.name}")
        return pop

    def build_slacked(self, pop):
        """
        Relax the generation and voltage bounds with nonnegative slacks.

        Slacks are ordered [sP+, sP-, sQ+, sQ-] per generator bus, then [sV+, sV-] per bus.
        """
        ctx = pop.network
        names = []
        for g in ctx.gen_buses:
            names += [f"sP+:{g.bus}", f"sP-:{g.bus}", f"sQ+:{g.bus}", f"sQ-:{g.bus}"]
        for bus_id in ctx.bus_ids:
            names += [f"sV+:{bus_id}", f"sV-:{bus_id}"]

        slacked = pop.copy(name="slacked")
        slacked.extend("s", names, lower=np.zeros(len(names)))
        dim = slacked.dim

        constraints = []
        for constraint in slacked.constraints:
            prefix, _, suffix = constraint.name.partition(":")
            if prefix in SLACK_RULES and constraint.slack is None:
                slack_prefix, coef = SLACK_RULES[prefix]
                binding = SlackBinding(f"{slack_prefix}:{suffix}", coef)
                f = constraint.f + QuadraticFunction.linear(dim, {slacked.layout.index(binding.name): coef})
                constraint = Constraint(f, constraint.sense, constraint.name, constraint.family, binding)
            constraints.append(constraint)
        slacked.constraints = constraints
        return slacked

    def norm_epigraph(self, pop, norm):
        """
        Express ||s||_p over the slack segment.

        Args:
            pop: A slacked PopProblem
            norm: l1, l2 or linf

        Returns:
            Tuple (problem, handle): l1 gives sum(s), linf adds t >= s_i and gives t,
            l2 gives sum(s_i^2)
        """
        if not pop.layout.has_segment("s"):
            raise NoSlackSegment()
        if norm not in NORMS:
            raise ValueError(f"Unknown norm: {norm}")

        result = pop.copy()
        span = result.layout.segment("s")
        idx = list(range(span.start, span.stop))

        if norm == "l1":
            return result, QuadraticFunction.linear(result.dim, {i: 1.0 for i in idx})
        if norm == "l2":
            return result, QuadraticFunction.embedded(sp.identity(len(idx)), idx, result.dim)

        result.extend("t", ["t"], lower=np.zeros(1))
        it = result.layout.index("t")
        for i in idx:
            result.add_constraint(Constraint(
                QuadraticFunction.linear(result.dim, {i: 1.0, it: -1.0}), "le",
                f"linf:{result.layout.names[i]}", family="norm"
            ))
        return result, QuadraticFunction.linear(result.dim, {it: 1.0})

    def with_budget(self, pop, handle, norm, budget):
        """Add the Stage-2 row ||s||_p <= budget (squared for l2)."""
        result = pop.copy()
        bound = budget ** 2 if norm == "l2" else budget
        result.add_constraint(Constraint(handle.resized(result.dim) - bound, "le", "budget", family="norm"))
        return result

    def fix_slacks(self, pop):
        """Force every slack to zero."""
        result = pop.copy()
        span = result.layout.segment("s")
        result.lower[span] = 0.0
        result.upper[span] = 0.0
        if result.layout.has_segment("t"):
            t = result.layout.segment("t")
            result.upper[t] = 0.0
        return result

    def slack_values(self, pop, z):
        if not pop.layout.has_segment("s"):
            raise NoSlackSegment()
        span = pop.layout.segment("s")
        return OrderedDict(zip(pop.layout.names[span], np.asarray(z)[span]))

    @staticmethod
    def slack_norm(values, norm):
        s = np.maximum(np.asarray(list(values), dtype=float), 0.0)
        if s.size == 0:
            return 0.0
        if norm == "l1":
            return float(s.sum())
        if norm == "l2":
            return float(np.linalg.norm(s))
        return float(s.max())

    def evaluate(self, pop, z):
        """
        Objective and per-constraint residuals of a point.

        Args:
            pop: The PopProblem
            z: A point of dimension pop.dim

        Returns:
            An Evaluation
        """
        z = np.asarray(z, dtype=float)
        if z.shape != (pop.dim,):
            raise DimensionMismatch(pop.dim, z.size)

        compiled = pop.compile()
        values = compiled.values(z) * compiled.signs
        residuals = OrderedDict(
            (c.name, c.residual(v)) for c, v in zip(pop.constraints, values)
        )
        bound = 0.0
        if z.size:
            bound = float(max(np.max(pop.lower - z), np.max(z - pop.upper), 0.0))
        return Evaluation(compiled.objective(z), residuals, bound)

    def amend_bounds(self, pop, slack_values, rtol=0.0, atol=0.0):
        """
        The instance whose bounds are shifted by the given slacks.

        Args:
            pop: A slacked PopProblem
            slack_values: Mapping of slack name to value, or an array in slack order
            rtol: Relative widening of every positive slack
            atol: Absolute widening of every positive slack

        Returns:
            An unslacked PopProblem named 'amended'
        """
        if not pop.layout.has_segment("s"):
            raise NoSlackSegment()
        span = pop.layout.segment("s")
        keep = span.start
        slack_names = pop.layout.names[span]
        if isinstance(slack_values, dict):
            s = np.array([max(0.0, slack_values.get(name, 0.0)) for name in slack_names])
        else:
            s = np.maximum(np.asarray(slack_values, dtype=float), 0.0)
            if s.size != len(slack_names):
                raise DimensionMismatch(len(slack_names), s.size)
        if rtol or atol:
            s = np.where(s > 0, s * (1.0 + rtol) + atol, s)

        trailing = np.zeros(pop.dim - keep)
        trailing[:s.size] = s
        params = OrderedDict(pop.parameters)
        constraints = []
        for c in pop.constraints:
            if c.family == "norm":
                continue
            if c.slack is not None:
                value = s[slack_names.index(c.slack.name)]
                param = c.name
                bound = params.get(param)
                if bound is not None and value:
                    if c.name.startswith("V"):
                        # voltage slacks act on squared magnitudes
                        squared = bound ** 2 - c.slack.coef * value
                        params[param] = float(np.sqrt(max(squared, 0.0)))
                    else:
                        params[param] = bound - c.slack.coef * value
            constraints.append(Constraint(c.f.substitute(keep, trailing), c.sense, c.name, c.family))

        cost = pop.cost.substitute(keep, trailing)
        amended = PopProblem(
            pop.layout.truncated("s"), cost, constraints,
            pop.lower[:keep].copy(), pop.upper[:keep].copy(),
            params, cost, pop.network, name="amended"
        )
        logger.debug(f"Amended bounds with slack norm l1={s.sum():.6g}")
        return amended

    def _complete(self, pop, x, pg=None, qg=None):
        """Fill generation, flows, slacks and t around the voltages x."""
        ctx = pop.network
        n = ctx.n
        z = np.zeros(pop.dim)
        z[:2 * n] = x
        fm = ctx.flow
        position = ctx.case.bus_index()

        for g in ctx.gen_buses:
            k = position[g.bus]
            bus = ctx.case.buses[k]
            p = x @ fm.Yk[k].dot(x) + bus.Pd if pg is None else pg[g.bus]
            q = x @ fm.Ybar_k[k].dot(x) + bus.Qd if qg is None else qg[g.bus]
            z[pop.layout.index(f"Pg:{g.bus}")] = p
            z[pop.layout.index(f"Qg:{g.bus}")] = q

        for r in ctx.rated:
            if f"P:{r.label}" in pop.layout:
                z[pop.layout.index(f"P:{r.label}")] = x @ fm.Ylm[r.key].dot(x)
                z[pop.layout.index(f"Q:{r.label}")] = x @ fm.Ybar_lm[r.key].dot(x)

        if pop.layout.has_segment("s"):
            for c in pop.slacked_constraints():
                i = pop.layout.index(c.slack.name)
                z[i] = 0.0
                value = c.f.value(z)
                z[i] = max(0.0, value) if c.sense == "le" else max(0.0, -value)
            if pop.layout.has_segment("t"):
                span = pop.layout.segment("s")
                z[pop.layout.index("t")] = float(np.max(z[span])) if span.stop > span.start else 0.0
        return z

    def point_from_voltages(self, pop, x):
        """
        Complete the voltages x into a point consistent with the balance and flow definitions.

        Args:
            pop: The PopProblem
            x: Rectangular voltages (Re V, Im V)

        Returns:
            A point of dimension pop.dim
        """
        x = np.asarray(x, dtype=float)
        n = pop.network.n
        if x.shape != (2 * n,):
            raise DimensionMismatch(2 * n, x.size)
        return self._complete(pop, x)

    def initial_point(self, pop, mode="flat"):
        """
        Starting point for the local solver.

        Args:
            pop: The PopProblem
            mode: 'flat' (unit voltages, generation at box midpoints) or 'case'
                  (the operating point stored in the case file)

        Returns:
            A point of dimension pop.dim
        """
        ctx = pop.network
        n = ctx.n
        if mode == "case":
            ref_angle = ctx.case.buses[ctx.ref].Va
            V = np.array([bus.Vm * np.exp(1j * (bus.Va - ref_angle)) for bus in ctx.case.buses])
            pg = {g.bus: g.Pg for g in ctx.gen_buses}
            qg = {g.bus: g.Qg for g in ctx.gen_buses}
        elif mode == "flat":
            V = np.ones(n, dtype=complex)
            pg = {g.bus: 0.5 * (g.Pmax + g.Pmin) for g in ctx.gen_buses}
            qg = {g.bus: 0.5 * (g.Qmax + g.Qmin) for g in ctx.gen_buses}
        else:
            raise ValueError(f"Unknown warm start mode: {mode}")

        x = np.concatenate([V.real, V.imag])
        x[n + ctx.ref] = 0.0
        return self._complete(pop, x, pg, qg)

    def projection_problem(self, pop, chi_tilde, norm="l2"):
        """
        min ||z - chi_tilde||_p over the feasible set of an unslacked problem.

        l2 uses the squared distance; l1 and linf use nonnegative deviation variables.
        """
        chi_tilde = np.asarray(chi_tilde, dtype=float)
        if chi_tilde.shape != (pop.dim,):
            raise DimensionMismatch(pop.dim, chi_tilde.size)

        base = pop.dim
        result = pop.copy(name="projection")
        if norm == "l2":
            objective = QuadraticFunction(sp.identity(base), -2.0 * chi_tilde, float(chi_tilde @ chi_tilde), base)
            return result.with_objective(objective)

        names = [f"dev:{name}" for name in pop.layout.names] if norm == "l1" else ["dev"]
        span = result.extend("dev", names, lower=np.zeros(len(names)))
        for i in range(base):
            j = span.start + (i if norm == "l1" else 0)
            for sign in (1.0, -1.0):
                result.add_constraint(Constraint(
                    QuadraticFunction.linear(result.dim, {i: sign, j: -1.0}, -sign * chi_tilde[i]),
                    "le", f"proj{'+' if sign > 0 else '-'}:{pop.layout.names[i]}", family="norm"
                ))
        objective = QuadraticFunction.linear(result.dim, {j: 1.0 for j in range(span.start, span.stop)})
        return result.with_objective(objective)


pop_service = PopService()
