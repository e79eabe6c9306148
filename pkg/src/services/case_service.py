import os
from loguru import logger

from src.config import settings
from src.models.case import Perturbation
from src.models.network import GenBus
from src.utils.errors import IoFailure, ResultingEmptyBox
from src.utils.parser import Parser


# Benchmark instances
PRESETS = {
    "P70": ("P_tighten", 70.0, 70.0),
    "Q80": ("Q_tighten", 80.0, 80.0),
    "V40": ("V_tighten", 40.0, 40.0),
    "P60": ("P_tighten", 0.0, 60.0),
}


class CaseService:
    """Service for loading cases and deriving perturbed instances."""

    def __init__(self, cases_dir=None):
        self.cases_dir = cases_dir or settings.CASES_DIR

    def resolve(self, path_or_name):
        """Map a bare case name such as 'case9' to a file in the cases directory."""
        if os.path.isfile(path_or_name):
            return path_or_name
        for candidate in (
            os.path.join(self.cases_dir, path_or_name),
            os.path.join(self.cases_dir, f"{path_or_name}.m"),
        ):
            if os.path.isfile(candidate):
                return candidate
        raise IoFailure(f"Case '{path_or_name}' not found (looked in {self.cases_dir})")

    def parse_case(self, text, name="case"):
        return Parser.parse_case(text, name=name)

    def load_case(self, path_or_name):
        """
        Read and parse a MATPOWER case file.

        Args:
            path_or_name: A file path or a bare case name

        Returns:
            A CaseData object
        """
        path = self.resolve(path_or_name)
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            raise IoFailure(f"Cannot read case file {path}: {str(e)}")

        case = Parser.parse_case(text, name=name)
        logger.info(f"Loaded {case} from {path}")
        return case

    @staticmethod
    def perturbation_preset(label):
        """
        Build a perturbation from a benchmark label or a 'custom:<kind>:<shrink>:<grow>' label.

        Args:
            label: P70, Q80, V40, P60 or custom:...

        Returns:
            A Perturbation
        """
        if label in PRESETS:
            kind, shrink, grow = PRESETS[label]
            return Perturbation(kind, shrink, grow, label=label)

        parts = label.split(":")
        if len(parts) == 4 and parts[0] == "custom":
            try:
                return Perturbation(parts[1], float(parts[2]), float(parts[3]))
            except ValueError as e:
                raise ValueError(f"Invalid custom perturbation '{label}': {str(e)}")

        raise ValueError(
            f"Unknown perturbation '{label}'; use one of {sorted(PRESETS)} or custom:<kind>:<shrink>:<grow>"
        )

    @staticmethod
    def apply_perturbation(case, perturbation):
        """
        Tighten generator or voltage bounds of a copy of the case.

        Args:
            case: The CaseData
            perturbation: The Perturbation

        Returns:
            A perturbed copy; the input is left unchanged
        """
        shrink = perturbation.shrink_max_pct / 100.0
        grow = perturbation.grow_min_pct / 100.0
        result = case.copy(name=f"{case.name}-{perturbation.label}")

        if perturbation.kind == "V_tighten":
            for bus in result.buses:
                mid = 0.5 * (bus.Vmax + bus.Vmin)
                half = 0.5 * (bus.Vmax - bus.Vmin)
                bus.Vmax = mid + half * (1.0 - shrink)
                bus.Vmin = mid - half * (1.0 - grow)
                if bus.Vmin > bus.Vmax:
                    raise ResultingEmptyBox("V", f"bus {bus.id}", bus.Vmin, bus.Vmax)
        else:
            quantity = "P" if perturbation.kind == "P_tighten" else "Q"
            for gen in result.generators:
                upper = getattr(gen, f"{quantity}max") * (1.0 - shrink)
                lower = getattr(gen, f"{quantity}min") * (1.0 + grow)
                if lower > upper:
                    raise ResultingEmptyBox(quantity, f"generator at bus {gen.bus}", lower, upper)
                setattr(gen, f"{quantity}max", upper)
                setattr(gen, f"{quantity}min", lower)

        logger.info(f"Applied {perturbation} to {case.name}")
        return result

    @staticmethod
    def aggregate_generators(case):
        """
        Merge the in-service generators of each bus.

        Bounds, c1 and c0 are summed; c2 is weighted by capacity.
        """
        by_bus = {}
        for i in case.active_generators():
            gen = case.generators[i]
            cost = case.cost_of(i)
            c2, c1, c0 = (cost.c2, cost.c1, cost.c0) if cost else (0.0, 0.0, 0.0)
            by_bus.setdefault(gen.bus, []).append((gen, c2, c1, c0))

        gen_buses = []
        for bus in case.buses:
            units = by_bus.get(bus.id)
            if not units:
                continue
            pmax = sum(g.Pmax for g, _, _, _ in units)
            weights = [max(g.Pmax, 0.0) for g, _, _, _ in units]
            total = sum(weights)
            if total > 0:
                c2 = sum(w * c for w, (_, c, _, _) in zip(weights, units)) / total
            else:
                c2 = sum(c for _, c, _, _ in units) / len(units)
            if len(units) > 1:
                logger.debug(f"Aggregating {len(units)} generators at bus {bus.id}")
            gen_buses.append(GenBus(
                bus=bus.id,
                Pmax=pmax,
                Pmin=sum(g.Pmin for g, _, _, _ in units),
                Qmax=sum(g.Qmax for g, _, _, _ in units),
                Qmin=sum(g.Qmin for g, _, _, _ in units),
                c2=c2,
                c1=sum(c for _, _, c, _ in units),
                c0=sum(c for _, _, _, c in units),
                Pg=sum(g.Pg for g, _, _, _ in units),
                Qg=sum(g.Qg for g, _, _, _ in units),
                Vg=units[0][0].Vg
            ))
        return gen_buses


case_service = CaseService()
