import numpy as np
import scipy.sparse as sp
from loguru import logger

from src.models.network import AdmittanceModel, FlowMatrices
from src.utils.errors import ZeroImpedanceBranch


def rectangular_forms(A):
    """
    Real symmetric matrices (Y, Ybar) with x'Yx + j x'Ybar x = sum_k V_k conj((A V)_k).

    Args:
        A: Complex n x n sparse operator

    Returns:
        Tuple of 2n x 2n csr matrices acting on x = (Re V, Im V)
    """
    A = sp.csr_matrix(A, dtype=complex)
    S = A + A.T
    D = A - A.T
    Y = 0.5 * sp.bmat([[S.real, -D.imag], [D.imag, S.real]], format="csr")
    Ybar = -0.5 * sp.bmat([[S.imag, D.real], [-D.real, S.imag]], format="csr")
    return Y, Ybar


class NetworkService:
    """Service building the admittance model and power-flow matrices of a case."""

    @staticmethod
    def branch_admittances(branch):
        """
        Pi-model two-port admittances with the transformer at the from end.

        Returns:
            Tuple (Yff, Yft, Ytf, Ytt)
        """
        ys = branch.series_admittance
        t = branch.tap * np.exp(1j * branch.shift)
        ytt = ys + 0.5j * branch.b_charge
        yff = ytt / (t * np.conj(t))
        yft = -ys / np.conj(t)
        ytf = -ys / t
        return yff, yft, ytf, ytt

    def build_admittance(self, case):
        """
        Assemble the network admittance matrix y.

        Args:
            case: The CaseData

        Returns:
            An AdmittanceModel
        """
        n = len(case.buses)
        position = case.bus_index()
        rows, cols, vals = [], [], []
        branch_ops = {}

        for i, branch in enumerate(case.branches):
            if not branch.status:
                continue
            if branch.r == 0 and branch.x == 0:
                raise ZeroImpedanceBranch(branch.from_bus, branch.to_bus)

            f, t = position[branch.from_bus], position[branch.to_bus]
            yff, yft, ytf, ytt = self.branch_admittances(branch)
            rows += [f, f, t, t]
            cols += [f, t, f, t]
            vals += [yff, yft, ytf, ytt]

            # Row operators of the current leaving each end
            branch_ops[(i, f, t)] = sp.csr_matrix(([yff, yft], ([f, f], [f, t])), shape=(n, n))
            branch_ops[(i, t, f)] = sp.csr_matrix(([ytt, ytf], ([t, t], [t, f])), shape=(n, n))

        for k, bus in enumerate(case.buses):
            if bus.Gs or bus.Bs:
                rows.append(k)
                cols.append(k)
                vals.append(complex(bus.Gs, bus.Bs))

        y = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
        logger.debug(f"Built admittance matrix for {case.name}: {n} buses, {y.nnz} nonzeros")
        return AdmittanceModel(y, branch_ops, [bus.id for bus in case.buses])

    def build_flow_matrices(self, adm):
        """
        Build Y_k, Ybar_k, M_k per bus and Y_lm, Ybar_lm per branch end.

        Args:
            adm: The AdmittanceModel

        Returns:
            A FlowMatrices object
        """
        n = adm.n
        Yk, Ybar_k, Mk = [], [], []
        for k in range(n):
            Y, Ybar = rectangular_forms(adm.bus_operator(k))
            Yk.append(Y)
            Ybar_k.append(Ybar)
            Mk.append(sp.csr_matrix(([1.0, 1.0], ([k, n + k], [k, n + k])), shape=(2 * n, 2 * n)))

        Ylm, Ybar_lm = {}, {}
        for (i, f, t), op in adm.branch_ops.items():
            key = (i, adm.bus_ids[f], adm.bus_ids[t])
            Ylm[key], Ybar_lm[key] = rectangular_forms(op)

        return FlowMatrices(Yk, Ybar_k, Mk, Ylm, Ybar_lm)


network_service = NetworkService()
