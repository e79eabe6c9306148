from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp


class GenBus:
    """Generators of one bus aggregated into a single unit."""

    def __init__(self, bus: int, Pmax: float, Pmin: float, Qmax: float, Qmin: float,
                 c2: float, c1: float, c0: float, Pg: float = 0.0, Qg: float = 0.0,
                 Vg: float = 1.0):
        self.bus = bus
        self.Pmax = Pmax
        self.Pmin = Pmin
        self.Qmax = Qmax
        self.Qmin = Qmin
        self.c2 = c2
        self.c1 = c1
        self.c0 = c0
        self.Pg = Pg
        self.Qg = Qg
        self.Vg = Vg

    def __repr__(self) -> str:
        return f"GenBus(bus={self.bus}, P=[{self.Pmin:g}, {self.Pmax:g}], Q=[{self.Qmin:g}, {self.Qmax:g}])"


class AdmittanceModel:
    """Network admittance matrix and the per-branch row operators of the Pi model."""

    def __init__(self, y, branch_ops: Dict[Tuple[int, int, int], sp.csr_matrix],
                 bus_ids: List[int]):
        self.y = y
        # (branch index, from position, to position) -> complex n x n operator
        self.branch_ops = branch_ops
        self.bus_ids = bus_ids

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def bus_operator(self, k: int) -> sp.csr_matrix:
        """y_k = e_k e_k^T y."""
        row = self.y.getrow(k).tocoo()
        return sp.csr_matrix((row.data, (np.full(row.nnz, k), row.col)), shape=(self.n, self.n))

    def injections(self, V) -> np.ndarray:
        """Complex bus injections V * conj(y V)."""
        V = np.asarray(V, dtype=complex)
        return V * np.conj(self.y.dot(V))

    def __repr__(self) -> str:
        return f"AdmittanceModel(buses={self.n}, branch_ends={len(self.branch_ops)})"


class FlowMatrices:
    """Real symmetric matrices whose quadratic forms give powers in rectangular voltages."""

    def __init__(self, Yk: List, Ybar_k: List, Mk: List, Ylm: Dict, Ybar_lm: Dict,
                 index: Optional[np.ndarray] = None):
        self.Yk = Yk
        self.Ybar_k = Ybar_k
        self.Mk = Mk
        # keyed by (branch index, from bus id, to bus id) for both orientations
        self.Ylm = Ylm
        self.Ybar_lm = Ybar_lm
        self.index = index

    @property
    def size(self) -> int:
        return self.Mk[0].shape[0]

    def reduced(self, keep) -> 'FlowMatrices':
        """Restriction of every matrix to the rows/columns in `keep`."""
        keep = np.asarray(keep)

        def cut(M):
            return M.tocsr()[keep, :][:, keep].tocsr()

        return FlowMatrices(
            [cut(M) for M in self.Yk],
            [cut(M) for M in self.Ybar_k],
            [cut(M) for M in self.Mk],
            {key: cut(M) for key, M in self.Ylm.items()},
            {key: cut(M) for key, M in self.Ybar_lm.items()},
            keep
        )

    def __repr__(self) -> str:
        return f"FlowMatrices(size={self.size}, buses={len(self.Mk)}, branch_ends={len(self.Ylm)})"


class RatedBranch:
    """One oriented end of a branch with a thermal limit."""

    def __init__(self, branch: int, from_bus: int, to_bus: int, Smax: float):
        self.branch = branch
        self.from_bus = from_bus
        self.to_bus = to_bus
        self.Smax = Smax

    @property
    def key(self) -> Tuple[int, int, int]:
        return (self.branch, self.from_bus, self.to_bus)

    @property
    def label(self) -> str:
        return f"{self.branch}:{self.from_bus}->{self.to_bus}"

    def __repr__(self) -> str:
        return f"RatedBranch({self.label}, Smax={self.Smax:g})"


class NetworkContext:
    """Everything about the network a PopProblem was built from."""

    def __init__(self, case, admittance: AdmittanceModel, flow: FlowMatrices,
                 gen_buses: List[GenBus], rated: List[RatedBranch], ref: int):
        self.case = case
        self.admittance = admittance
        self.flow = flow
        self.gen_buses = gen_buses
        self.rated = rated
        # position of the slack bus
        self.ref = ref

    @property
    def n(self) -> int:
        return len(self.case.buses)

    @property
    def bus_ids(self) -> List[int]:
        return [bus.id for bus in self.case.buses]

    def gen_bus(self, bus_id: int) -> Optional[GenBus]:
        for gen in self.gen_buses:
            if gen.bus == bus_id:
                return gen
        return None
