import copy
from typing import Dict, Any, Optional, List

from src.utils.errors import InvalidPerturbation


BUS_TYPES = {1: "PQ", 2: "PV", 3: "slack"}
PERTURBATION_KINDS = ("P_tighten", "Q_tighten", "V_tighten")


class Bus:
    """A network bus. Powers are in per-unit, angles in radians."""

    def __init__(
        self,
        id: int,
        type: str,
        Pd: float,
        Qd: float,
        Gs: float,
        Bs: float,
        Vmax: float,
        Vmin: float,
        Vm: float = 1.0,
        Va: float = 0.0
    ):
        self.id = id
        self.type = type
        self.Pd = Pd
        self.Qd = Qd
        self.Gs = Gs
        self.Bs = Bs
        self.Vmax = Vmax
        self.Vmin = Vmin
        # Stored operating point, used only for warm starts
        self.Vm = Vm
        self.Va = Va

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Bus':
        return cls(**data)

    def __repr__(self) -> str:
        return f"Bus(id={self.id}, type={self.type}, Pd={self.Pd:g}, Qd={self.Qd:g})"


class Generator:
    """A generating unit attached to a bus."""

    def __init__(
        self,
        bus: int,
        Pmax: float,
        Pmin: float,
        Qmax: float,
        Qmin: float,
        status: bool = True,
        Pg: float = 0.0,
        Qg: float = 0.0,
        Vg: float = 1.0
    ):
        self.bus = bus
        self.Pmax = Pmax
        self.Pmin = Pmin
        self.Qmax = Qmax
        self.Qmin = Qmin
        self.status = status
        self.Pg = Pg
        self.Qg = Qg
        self.Vg = Vg

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Generator':
        return cls(**data)

    def __repr__(self) -> str:
        return (
            f"Generator(bus={self.bus}, P=[{self.Pmin:g}, {self.Pmax:g}], "
            f"Q=[{self.Qmin:g}, {self.Qmax:g}], status={self.status})"
        )


class Branch:
    """A Pi-model branch with an ideal phase-shifting transformer at the from end."""

    def __init__(
        self,
        from_bus: int,
        to_bus: int,
        r: float,
        x: float,
        b_charge: float = 0.0,
        rateA: float = 0.0,
        tap: float = 1.0,
        shift: float = 0.0,
        status: bool = True
    ):
        self.from_bus = from_bus
        self.to_bus = to_bus
        self.r = r
        self.x = x
        self.b_charge = b_charge
        self.rateA = rateA
        self.tap = tap
        self.shift = shift
        self.status = status

    @property
    def series_admittance(self) -> complex:
        """g + jb = 1 / (r + jx)."""
        return 1.0 / complex(self.r, self.x)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Branch':
        return cls(**data)

    def __repr__(self) -> str:
        return f"Branch({self.from_bus}->{self.to_bus}, r={self.r:g}, x={self.x:g}, status={self.status})"


class GenCost:
    """Quadratic cost c2 P^2 + c1 P + c0 of one generator, P in per-unit."""

    def __init__(self, gen_index: int, c2: float, c1: float, c0: float):
        self.gen_index = gen_index
        self.c2 = c2
        self.c1 = c1
        self.c0 = c0

    def __call__(self, p: float) -> float:
        return self.c2 * p * p + self.c1 * p + self.c0

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GenCost':
        return cls(**data)

    def __repr__(self) -> str:
        return f"GenCost(gen={self.gen_index}, c2={self.c2:g}, c1={self.c1:g}, c0={self.c0:g})"


class CaseData:
    """A parsed power network in per-unit."""

    def __init__(
        self,
        baseMVA: float,
        buses: List[Bus],
        generators: List[Generator],
        branches: List[Branch],
        costs: List[GenCost],
        name: str = "case"
    ):
        self.name = name
        self.baseMVA = baseMVA
        self.buses = buses
        self.generators = generators
        self.branches = branches
        self.costs = costs

    def bus_index(self) -> Dict[int, int]:
        """Map external bus ids to positions 0..|N|-1."""
        return {bus.id: i for i, bus in enumerate(self.buses)}

    def slack_bus(self) -> Bus:
        return next(bus for bus in self.buses if bus.type == "slack")

    def active_generators(self) -> List[int]:
        return [i for i, gen in enumerate(self.generators) if gen.status]

    def active_branches(self) -> List[int]:
        return [i for i, br in enumerate(self.branches) if br.status]

    def cost_of(self, gen_index: int) -> Optional[GenCost]:
        for cost in self.costs:
            if cost.gen_index == gen_index:
                return cost
        return None

    def copy(self, name: Optional[str] = None) -> 'CaseData':
        clone = copy.deepcopy(self)
        if name:
            clone.name = name
        return clone

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "baseMVA": self.baseMVA,
            "buses": [bus.to_dict() for bus in self.buses],
            "generators": [gen.to_dict() for gen in self.generators],
            "branches": [br.to_dict() for br in self.branches],
            "costs": [cost.to_dict() for cost in self.costs]
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CaseData':
        return cls(
            baseMVA=data.get("baseMVA", 100.0),
            buses=[Bus.from_dict(b) for b in data.get("buses", [])],
            generators=[Generator.from_dict(g) for g in data.get("generators", [])],
            branches=[Branch.from_dict(b) for b in data.get("branches", [])],
            costs=[GenCost.from_dict(c) for c in data.get("costs", [])],
            name=data.get("name", "case")
        )

    def __str__(self) -> str:
        return (
            f"CaseData(name={self.name}, buses={len(self.buses)}, "
            f"generators={len(self.generators)}, branches={len(self.branches)})"
        )

    def __repr__(self) -> str:
        return self.__str__()


class Perturbation:
    """A tightening of generator or voltage bounds."""

    def __init__(
        self,
        kind: str,
        shrink_max_pct: float,
        grow_min_pct: float,
        label: Optional[str] = None
    ):
        if kind not in PERTURBATION_KINDS:
            raise InvalidPerturbation(f"Unknown perturbation kind: {kind}")
        for pct in (shrink_max_pct, grow_min_pct):
            if not 0.0 <= pct <= 100.0:
                raise InvalidPerturbation(f"Perturbation percentage {pct} outside [0, 100]")

        self.kind = kind
        self.shrink_max_pct = float(shrink_max_pct)
        self.grow_min_pct = float(grow_min_pct)
        self.label = label or f"{kind}({shrink_max_pct:g},{grow_min_pct:g})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "shrink_max_pct": self.shrink_max_pct,
            "grow_min_pct": self.grow_min_pct,
            "label": self.label
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Perturbation':
        return cls(
            kind=data["kind"],
            shrink_max_pct=data.get("shrink_max_pct", 0.0),
            grow_min_pct=data.get("grow_min_pct", 0.0),
            label=data.get("label")
        )

    def __str__(self) -> str:
        return f"Perturbation({self.label})"

    def __repr__(self) -> str:
        return self.__str__()
