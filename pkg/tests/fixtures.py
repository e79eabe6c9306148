"""Small networks built in code for the service tests."""

import numpy as np

from src.models.case import Bus, Generator, Branch, GenCost, CaseData
from src.services.network_service import network_service


def two_bus_case(V2=0.97 * np.exp(-0.05j), rate=2.0):
    """
    A generator bus feeding one load through a single line.

    The load is set to what the line delivers at voltages (1, V2), so the
    operating point x = (1, Re V2, 0, Im V2) satisfies every balance exactly.

    Returns:
        Tuple (case, x)
    """
    buses = [
        Bus(id=1, type="slack", Pd=0.0, Qd=0.0, Gs=0.0, Bs=0.0, Vmax=1.1, Vmin=0.9),
        Bus(id=2, type="PQ", Pd=0.0, Qd=0.0, Gs=0.0, Bs=0.0, Vmax=1.1, Vmin=0.9),
    ]
    generators = [Generator(bus=1, Pmax=5.0, Pmin=0.0, Qmax=5.0, Qmin=-5.0)]
    branches = [Branch(1, 2, r=0.01, x=0.1, b_charge=0.02, rateA=rate)]
    costs = [GenCost(gen_index=0, c2=10.0, c1=20.0, c0=5.0)]
    case = CaseData(100.0, buses, generators, branches, costs, name="two_bus")

    V = np.array([1.0, V2], dtype=complex)
    S = network_service.build_admittance(case).injections(V)
    case.buses[1].Pd = -S[1].real
    case.buses[1].Qd = -S[1].imag
    return case, np.concatenate([V.real, V.imag])
