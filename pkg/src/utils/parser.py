import math
import re
from loguru import logger

from src.models.case import (
    BUS_TYPES, Bus, Generator, Branch, GenCost, CaseData
)
from src.utils.errors import (
    MissingTable, MalformedRow, UnknownBusReference, MultipleSlackBuses, NoSlackBus
)


REQUIRED_TABLES = ("bus", "gen", "branch", "gencost")

# Minimum column counts of the MATPOWER tables we read
MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

_ASSIGNMENT = re.compile(r"^\s*(?:mpc\.)?(\w+)\s*=\s*(.*)$")


class Parser:
    """Parser for MATPOWER case files."""

    @staticmethod
    def parse_case(text, name="case"):
        """
        Parse a MATPOWER case into per-unit CaseData.

        Args:
            text: The case file content, a string or a readable stream
            name: Name given to the parsed case

        Returns:
            A CaseData object
        """
        if hasattr(text, "read"):
            text = text.read()

        base_mva, tables = Parser._extract_tables(text)
        if base_mva is None:
            raise MissingTable("baseMVA")
        for table in REQUIRED_TABLES:
            if table not in tables:
                raise MissingTable(table)

        buses = Parser._build_buses(tables["bus"], base_mva)
        known = {bus.id for bus in buses}
        generators = Parser._build_generators(tables["gen"], base_mva, known)
        branches = Parser._build_branches(tables["branch"], base_mva, known)
        costs = Parser._build_costs(tables["gencost"], base_mva, len(generators))

        case = CaseData(base_mva, buses, generators, branches, costs, name=name)
        logger.debug(f"Parsed {case}")
        return case

    @staticmethod
    def _extract_tables(text):
        """
        Collect the numeric tables and baseMVA of a case file.

        Args:
            text: The case file content

        Returns:
            Tuple of (baseMVA or None, dict of table name -> list of (line, values))
        """
        base_mva = None
        tables = {}
        current = None
        skipping = False

        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("%", 1)[0].strip()
            if not line:
                continue

            if skipping:
                # Cell arrays such as bus_name are not numeric
                if "}" in line:
                    skipping = False
                continue

            if current is None:
                match = _ASSIGNMENT.match(line)
                if not match:
                    continue
                key, value = match.group(1), match.group(2).strip()
                if value.startswith("{"):
                    skipping = "}" not in value
                    continue
                if value.startswith("["):
                    current = key
                    tables[current] = []
                    line = value[1:]
                elif key == "baseMVA":
                    try:
                        base_mva = float(value.rstrip(";").strip())
                    except ValueError:
                        raise MalformedRow("baseMVA", line_no, f"not a number: '{value}'")
                    continue
                else:
                    continue

            closing = "]" in line
            body = line.split("]", 1)[0] if closing else line
            for chunk in body.split(";"):
                tokens = chunk.replace(",", " ").split()
                if not tokens:
                    continue
                try:
                    values = [float(tok) for tok in tokens]
                except ValueError:
                    raise MalformedRow(current, line_no, f"non-numeric entry in '{chunk.strip()}'")
                tables[current].append((line_no, values))
            if closing:
                current = None

        if current is not None:
            raise MalformedRow(current, line_no, "table is not terminated by '];'")

        return base_mva, tables

    @staticmethod
    def _check_width(table, line, values):
        if len(values) < MIN_COLUMNS[table]:
            raise MalformedRow(
                table, line, f"expected at least {MIN_COLUMNS[table]} columns, got {len(values)}"
            )

    @staticmethod
    def _build_buses(rows, base_mva):
        buses = []
        seen = set()
        for line, values in rows:
            Parser._check_width("bus", line, values)
            bus_id = int(values[0])
            if bus_id in seen:
                raise MalformedRow("bus", line, f"duplicate bus id {bus_id}")
            seen.add(bus_id)

            code = int(values[1])
            if code == 4:
                logger.warning(f"Bus {bus_id} is isolated (type 4); treating it as a PQ bus")
                code = 1
            if code not in BUS_TYPES:
                raise MalformedRow("bus", line, f"unknown bus type {code}")

            vmax, vmin = values[11], values[12]
            if vmin > vmax:
                raise MalformedRow("bus", line, f"Vmin {vmin:g} > Vmax {vmax:g}")

            buses.append(Bus(
                id=bus_id,
                type=BUS_TYPES[code],
                Pd=values[2] / base_mva,
                Qd=values[3] / base_mva,
                Gs=values[4] / base_mva,
                Bs=values[5] / base_mva,
                Vmax=vmax,
                Vmin=vmin,
                Vm=values[7],
                Va=math.radians(values[8])
            ))

        slack = [bus.id for bus in buses if bus.type == "slack"]
        if not slack:
            raise NoSlackBus()
        if len(slack) > 1:
            raise MultipleSlackBuses(slack)
        return buses

    @staticmethod
    def _build_generators(rows, base_mva, known):
        generators = []
        for line, values in rows:
            Parser._check_width("gen", line, values)
            bus_id = int(values[0])
            if bus_id not in known:
                raise UnknownBusReference(bus_id, "gen")

            pmax, pmin = values[8] / base_mva, values[9] / base_mva
            qmax, qmin = values[3] / base_mva, values[4] / base_mva
            if pmin > pmax:
                raise MalformedRow("gen", line, f"Pmin {pmin:g} > Pmax {pmax:g}")
            if qmin > qmax:
                raise MalformedRow("gen", line, f"Qmin {qmin:g} > Qmax {qmax:g}")

            generators.append(Generator(
                bus=bus_id,
                Pmax=pmax,
                Pmin=pmin,
                Qmax=qmax,
                Qmin=qmin,
                status=values[7] > 0,
                Pg=values[1] / base_mva,
                Qg=values[2] / base_mva,
                Vg=values[5]
            ))
        return generators

    @staticmethod
    def _build_branches(rows, base_mva, known):
        branches = []
        for line, values in rows:
            Parser._check_width("branch", line, values)
            from_bus, to_bus = int(values[0]), int(values[1])
            for bus_id in (from_bus, to_bus):
                if bus_id not in known:
                    raise UnknownBusReference(bus_id, "branch")

            branches.append(Branch(
                from_bus=from_bus,
                to_bus=to_bus,
                r=values[2],
                x=values[3],
                b_charge=values[4],
                rateA=values[5] / base_mva,
                # A zero ratio marks a plain line
                tap=values[8] if values[8] != 0 else 1.0,
                shift=math.radians(values[9]),
                status=values[10] > 0
            ))
        return branches

    @staticmethod
    def _build_costs(rows, base_mva, n_gen):
        """
        Convert polynomial cost rows to per-unit quadratic coefficients.

        Rows beyond the first n_gen hold reactive costs and are ignored.
        """
        if len(rows) < n_gen:
            raise MalformedRow("gencost", rows[-1][0] if rows else 0,
                               f"{len(rows)} cost rows for {n_gen} generators")

        costs = []
        for gen_index, (line, values) in enumerate(rows[:n_gen]):
            Parser._check_width("gencost", line, values)
            model, n = int(values[0]), int(values[3])
            if model != 2:
                raise MalformedRow("gencost", line, "only polynomial costs (model 2) are supported")
            if n > 3:
                raise MalformedRow("gencost", line, f"polynomial of degree {n - 1} is not quadratic")
            if len(values) < 4 + n:
                raise MalformedRow("gencost", line, f"expected {n} coefficients")

            coeffs = [0.0] * (3 - n) + values[4:4 + n]
            c2, c1, c0 = coeffs
            costs.append(GenCost(
                gen_index=gen_index,
                c2=c2 * base_mva ** 2,
                c1=c1 * base_mva,
                c0=c0
            ))
        return costs
