from collections import OrderedDict
from typing import Dict, Any, Optional, List, Iterable

import numpy as np
import scipy.sparse as sp

from src.utils.errors import InconsistentDimensions, DimensionMismatch, NonFiniteEncountered


SENSES = ("eq", "le", "ge")


def _as_csr(matrix, shape):
    if matrix is None:
        return sp.csr_matrix(shape)
    if sp.issparse(matrix):
        return sp.csr_matrix(matrix, dtype=float)
    return sp.csr_matrix(np.asarray(matrix, dtype=float).reshape(shape))


class VariableLayout:
    """Ordered named segments of the decision vector."""

    def __init__(self):
        self.segments = OrderedDict()
        self.names = []
        self._index = {}

    @property
    def dim(self) -> int:
        return len(self.names)

    def add_segment(self, segment: str, var_names: Iterable[str]) -> slice:
        if segment in self.segments:
            raise InconsistentDimensions(f"Segment '{segment}' already exists")
        start = self.dim
        for name in var_names:
            if name in self._index:
                raise InconsistentDimensions(f"Variable '{name}' declared twice")
            self._index[name] = len(self.names)
            self.names.append(name)
        self.segments[segment] = slice(start, self.dim)
        return self.segments[segment]

    def has_segment(self, segment: str) -> bool:
        return segment in self.segments

    def segment(self, segment: str) -> slice:
        return self.segments[segment]

    def index(self, name: str) -> int:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def truncated(self, segment: str) -> 'VariableLayout':
        """Layout made of the segments that precede `segment`."""
        layout = VariableLayout()
        for seg, span in self.segments.items():
            if seg == segment:
                break
            layout.add_segment(seg, self.names[span])
        return layout

    def copy(self) -> 'VariableLayout':
        layout = VariableLayout()
        for seg, span in self.segments.items():
            layout.add_segment(seg, self.names[span])
        return layout

    def __repr__(self) -> str:
        parts = ", ".join(f"{seg}={span.stop - span.start}" for seg, span in self.segments.items())
        return f"VariableLayout({parts})"


class QuadraticFunction:
    """f(z) = z'Qz + c'z + d with Q symmetric and sparse."""

    def __init__(self, Q=None, c=None, d: float = 0.0, dim: Optional[int] = None):
        if dim is None:
            if Q is not None:
                dim = Q.shape[0]
            elif c is not None:
                dim = c.shape[-1] if sp.issparse(c) else len(c)
            else:
                raise InconsistentDimensions("QuadraticFunction needs a dimension")
        Q = _as_csr(Q, (dim, dim))
        if Q.shape != (dim, dim):
            raise InconsistentDimensions(f"Quadratic term has shape {Q.shape}, expected {(dim, dim)}")
        self.Q = ((Q + Q.T) * 0.5).tocsr()
        self.Q.eliminate_zeros()
        self.c = _as_csr(c, (1, dim))
        if self.c.shape != (1, dim):
            raise InconsistentDimensions(f"Linear term has shape {self.c.shape}, expected {(1, dim)}")
        self.d = float(d)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def c_dense(self) -> np.ndarray:
        return self.c.toarray().ravel()

    @property
    def is_linear(self) -> bool:
        return self.Q.nnz == 0

    @classmethod
    def linear(cls, dim: int, coeffs: Dict[int, float], d: float = 0.0) -> 'QuadraticFunction':
        c = sp.csr_matrix(
            (list(coeffs.values()), ([0] * len(coeffs), list(coeffs.keys()))), shape=(1, dim)
        )
        return cls(None, c, d, dim)

    @classmethod
    def embedded(cls, M, index, dim: int, coeffs: Optional[Dict[int, float]] = None,
                 d: float = 0.0) -> 'QuadraticFunction':
        """Place the square matrix M on the rows/columns `index` of a dim-sized form."""
        M = sp.coo_matrix(M)
        index = np.asarray(index)
        Q = sp.csr_matrix((M.data, (index[M.row], index[M.col])), shape=(dim, dim))
        c = None
        if coeffs:
            c = sp.csr_matrix(
                (list(coeffs.values()), ([0] * len(coeffs), list(coeffs.keys()))), shape=(1, dim)
            )
        return cls(Q, c, d, dim)

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise DimensionMismatch(self.dim, z.shape[0] if z.ndim else 0)
        return z

    def value(self, z) -> float:
        z = self._check(z)
        return float(z @ self.Q.dot(z) + self.c.dot(z)[0] + self.d)

    __call__ = value

    def gradient(self, z) -> np.ndarray:
        z = self._check(z)
        return 2.0 * self.Q.dot(z) + self.c_dense

    def hessian(self):
        return 2.0 * self.Q

    def resized(self, dim: int) -> 'QuadraticFunction':
        """Same function on a layout extended with trailing variables."""
        if dim < self.dim:
            raise InconsistentDimensions(f"Cannot shrink a function of dimension {self.dim} to {dim}")
        Q = self.Q.copy()
        Q.resize((dim, dim))
        c = self.c.copy()
        c.resize((1, dim))
        return QuadraticFunction(Q, c, self.d, dim)

    def substitute(self, keep: int, values) -> 'QuadraticFunction':
        """Fix the trailing variables keep.. to `values`; returns a function of z[:keep]."""
        values = np.asarray(values, dtype=float)
        if keep + values.size != self.dim:
            raise DimensionMismatch(self.dim - keep, values.size)
        Q = self.Q.tocsc()
        Quu = Q[:keep, :keep]
        Quv = Q[:keep, keep:]
        Qvv = Q[keep:, keep:]
        c = self.c_dense
        linear = c[:keep] + 2.0 * Quv.dot(values)
        const = self.d + float(c[keep:] @ values + values @ Qvv.dot(values))
        return QuadraticFunction(Quu, linear, const, keep)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return QuadraticFunction(self.Q, self.c, self.d + other, self.dim)
        if other.dim != self.dim:
            raise InconsistentDimensions(f"Adding functions of dimension {self.dim} and {other.dim}")
        return QuadraticFunction(self.Q + other.Q, self.c + other.c, self.d + other.d, self.dim)

    __radd__ = __add__

    def __mul__(self, scale: float):
        return QuadraticFunction(self.Q * scale, self.c * scale, self.d * scale, self.dim)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __repr__(self) -> str:
        return f"QuadraticFunction(dim={self.dim}, nnzQ={self.Q.nnz}, nnzc={self.c.nnz}, d={self.d:g})"


class SlackBinding:
    """Links a bound constraint to the slack variable that relaxes it.

    The slacked constraint reads f(z) + coef * s sense 0, with coef = -1 for
    upper bounds and +1 for lower bounds.
    """

    def __init__(self, name: str, coef: float):
        self.name = name
        self.coef = coef

    def __repr__(self) -> str:
        return f"SlackBinding({self.name}, {self.coef:+g})"


class Constraint:
    """f(z) sense 0."""

    def __init__(self, f: QuadraticFunction, sense: str, name: str,
                 family: str = "op2", slack: Optional[SlackBinding] = None):
        if sense not in SENSES:
            raise ValueError(f"Unknown constraint sense: {sense}")
        self.f = f
        self.sense = sense
        self.name = name
        self.family = family
        self.slack = slack

    def residual(self, value: float) -> float:
        if self.sense == "eq":
            return abs(value)
        if self.sense == "le":
            return max(0.0, value)
        return max(0.0, -value)

    def resized(self, dim: int) -> 'Constraint':
        return Constraint(self.f.resized(dim), self.sense, self.name, self.family, self.slack)

    def __repr__(self) -> str:
        return f"Constraint({self.name}, {self.sense})"


class PopProblem:
    """A quadratic polynomial optimization problem over a named variable layout."""

    def __init__(
        self,
        layout: VariableLayout,
        objective: QuadraticFunction,
        constraints: Optional[List[Constraint]] = None,
        lower=None,
        upper=None,
        parameters: Optional[Dict[str, float]] = None,
        cost: Optional[QuadraticFunction] = None,
        network=None,
        name: str = "op2"
    ):
        self.layout = layout
        self.objective = objective
        self.constraints = []
        self.lower = np.full(layout.dim, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(layout.dim, np.inf) if upper is None else np.asarray(upper, dtype=float)
        self.parameters = OrderedDict(parameters or {})
        # Generation cost (1), kept so bound-amended problems can restore it
        self.cost = cost
        self.network = network
        self.name = name

        if objective.dim != layout.dim:
            raise InconsistentDimensions(
                f"Objective has dimension {objective.dim}, layout has {layout.dim}"
            )
        for constraint in constraints or []:
            self.add_constraint(constraint)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def add_constraint(self, constraint: Constraint) -> Constraint:
        if constraint.f.dim != self.dim:
            raise InconsistentDimensions(
                f"Constraint '{constraint.name}' has dimension {constraint.f.dim}, layout has {self.dim}"
            )
        if constraint.slack is not None and constraint.slack.name not in self.layout:
            raise InconsistentDimensions(
                f"Constraint '{constraint.name}' binds unknown slack '{constraint.slack.name}'"
            )
        self.constraints.append(constraint)
        return constraint

    def extend(self, segment: str, var_names: List[str], lower=None, upper=None) -> slice:
        """Append a variable segment; every function is padded with zeros."""
        span = self.layout.add_segment(segment, var_names)
        size = span.stop - span.start
        self.lower = np.concatenate([self.lower, np.full(size, -np.inf) if lower is None else lower])
        self.upper = np.concatenate([self.upper, np.full(size, np.inf) if upper is None else upper])
        self.objective = self.objective.resized(self.dim)
        if self.cost is not None:
            self.cost = self.cost.resized(self.dim)
        self.constraints = [c.resized(self.dim) for c in self.constraints]
        return span

    def constraint(self, name: str) -> Constraint:
        for constraint in self.constraints:
            if constraint.name == name:
                return constraint
        raise KeyError(name)

    def slacked_constraints(self) -> List[Constraint]:
        return [c for c in self.constraints if c.slack is not None]

    def copy(self, name: Optional[str] = None) -> 'PopProblem':
        return PopProblem(
            self.layout.copy(),
            self.objective,
            list(self.constraints),
            self.lower.copy(),
            self.upper.copy(),
            dict(self.parameters),
            self.cost,
            self.network,
            name or self.name
        )

    def with_objective(self, objective: QuadraticFunction, name: Optional[str] = None) -> 'PopProblem':
        pop = self.copy(name)
        if objective.dim != pop.dim:
            objective = objective.resized(pop.dim)
        pop.objective = objective
        return pop

    def compile(self) -> 'CompiledProblem':
        return CompiledProblem(self)

    def __str__(self) -> str:
        return f"PopProblem(name={self.name}, dim={self.dim}, constraints={len(self.constraints)})"

    def __repr__(self) -> str:
        return self.__str__()


def stack_quadratics(funcs: List[QuadraticFunction], n: int):
    """
    Stack the quadratic terms of several functions.

    Returns:
        Tuple (Qstack, QflatT, C, d): Qstack (m*n x n) gives all Q_i z at once,
        QflatT (n*n x m) maps weights to sum_i w_i vec(Q_i), C (m x n) and d (m,)
    """
    rows, cols, vals, flat_rows, flat_cols = [], [], [], [], []
    for i, func in enumerate(funcs):
        Q = func.Q.tocoo()
        rows.append(i * n + Q.row)
        cols.append(Q.col)
        vals.append(Q.data)
        flat_rows.append(Q.row * n + Q.col)
        flat_cols.append(np.full(Q.nnz, i))
    m = len(funcs)
    if m:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        flat_rows, flat_cols = np.concatenate(flat_rows), np.concatenate(flat_cols)
    Qstack = sp.csr_matrix((vals, (rows, cols)), shape=(m * n, n))
    QflatT = sp.csc_matrix((vals, (flat_rows, flat_cols)), shape=(n * n, m))
    C = sp.vstack([f.c for f in funcs]).toarray() if m else np.zeros((0, n))
    d = np.array([f.d for f in funcs], dtype=float)
    return Qstack, QflatT, C, d


class CompiledProblem:
    """Vectorized evaluation of a PopProblem with constraints normalized to c(z) = 0 or c(z) <= 0."""

    def __init__(self, pop: PopProblem):
        self.pop = pop
        self.n = pop.dim
        self.names = [c.name for c in pop.constraints]
        self.is_eq = np.array([c.sense == "eq" for c in pop.constraints], dtype=bool)
        # ge rows are negated so every inequality reads c(z) <= 0
        self.signs = np.array([-1.0 if c.sense == "ge" else 1.0 for c in pop.constraints])
        funcs = [c.f * s for c, s in zip(pop.constraints, self.signs)]
        self.Qstack, self.QflatT, self.C, self.d = stack_quadratics(funcs, self.n)
        self.m = len(funcs)
        self.fQ = pop.objective.Q
        self.fc = pop.objective.c_dense
        self.fd = pop.objective.d

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise DimensionMismatch(self.n, z.size)
        if not np.all(np.isfinite(z)):
            raise NonFiniteEncountered("Point has NaN or Inf entries")
        return z

    def objective(self, z) -> float:
        z = self._check(z)
        return float(z @ self.fQ.dot(z) + self.fc @ z + self.fd)

    def objective_gradient(self, z) -> np.ndarray:
        return 2.0 * self.fQ.dot(z) + self.fc

    def objective_hessian(self) -> np.ndarray:
        return 2.0 * self.fQ.toarray()

    def values(self, z) -> np.ndarray:
        z = self._check(z)
        if not self.m:
            return np.zeros(0)
        Qz = self.Qstack.dot(z).reshape(self.m, self.n)
        return Qz @ z + self.C @ z + self.d

    def values_and_jacobian(self, z):
        z = self._check(z)
        if not self.m:
            return np.zeros(0), np.zeros((0, self.n))
        Qz = self.Qstack.dot(z).reshape(self.m, self.n)
        values = Qz @ z + self.C @ z + self.d
        jacobian = 2.0 * Qz + self.C
        return values, jacobian

    def weighted_hessian(self, weights) -> np.ndarray:
        """sum_i w_i * Hessian(c_i)."""
        if not self.m:
            return np.zeros((self.n, self.n))
        return 2.0 * np.asarray(self.QflatT.dot(weights)).reshape(self.n, self.n)

    def violation(self, values) -> np.ndarray:
        return np.where(self.is_eq, np.abs(values), np.maximum(values, 0.0))


class Evaluation:
    """Objective value and named residuals of a point."""

    def __init__(self, objective: float, residuals: Dict[str, float], bound_violation: float = 0.0):
        self.objective = objective
        self.residuals = residuals
        self.bound_violation = bound_violation
        self.max_violation = max([bound_violation] + list(residuals.values()))

    def violated(self, tol: float) -> List[str]:
        return [name for name, value in self.residuals.items() if value > tol]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective,
            "max_violation": self.max_violation,
            "residuals": dict(self.residuals)
        }

    def __repr__(self) -> str:
        return f"Evaluation(objective={self.objective:.6g}, max_violation={self.max_violation:.3e})"


class PolySystem:
    """A square or rectangular system of quadratic equations f(x) = 0."""

    def __init__(self, equations: List[QuadraticFunction], names: Optional[List[str]] = None):
        if not equations:
            raise InconsistentDimensions("PolySystem needs at least one equation")
        self.dim = equations[0].dim
        for eq in equations:
            if eq.dim != self.dim:
                raise InconsistentDimensions("All equations must share one variable dimension")
        self.equations = equations
        self.names = names or [f"f{i}" for i in range(len(equations))]
        self.Qstack, self.QflatT, self.C, self.d = stack_quadratics(equations, self.dim)

    @property
    def size(self) -> int:
        return len(self.equations)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.dim,):
            raise DimensionMismatch(self.dim, x.size)
        return x

    def values(self, x) -> np.ndarray:
        x = self._check(x)
        Qx = self.Qstack.dot(x).reshape(self.size, self.dim)
        return Qx @ x + self.C @ x + self.d

    def jacobian(self, x) -> np.ndarray:
        x = self._check(x)
        Qx = self.Qstack.dot(x).reshape(self.size, self.dim)
        return 2.0 * Qx + self.C

    def second_derivative_gram(self) -> np.ndarray:
        """G_ij = <Q_i, Q_j>_F, the Gram matrix of the unfolded D^2 f / 2."""
        Qflat = self.QflatT.T.tocsr()
        return (Qflat @ Qflat.T).toarray()

    def __repr__(self) -> str:
        return f"PolySystem(equations={self.size}, dim={self.dim})"
