import io
import math
import os
import unittest

from src.config import settings
from src.utils.errors import (
    MissingTable, MalformedRow, UnknownBusReference, MultipleSlackBuses, NoSlackBus
)
from src.utils.parser import Parser


TWO_BUS = """
function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
    1  3  0   0   0  0  1  1.0  0  230  1  1.1  0.9;
    2  1  50  20  0  0  1  1.0  0  230  1  1.1  0.9;
];
mpc.gen = [
    1  0  0  100  -100  1.0  100  1  200  0;
];
mpc.branch = [
    1  2  0.01  0.1  0.02  150  0  0  0  0  1  -360  360;
];
mpc.gencost = [
    2  0  0  3  0.01  10  5;
];
"""


class TestParser(unittest.TestCase):
    """Test cases for the MATPOWER Parser."""

    def setUp(self):
        """Set up test fixtures."""
        with open(os.path.join(settings.CASES_DIR, "case9.m"), encoding="utf-8") as handle:
            self.case9_text = handle.read()

    def test_case9_tables(self):
        """Test that case9 is parsed into per-unit data."""
        case = Parser.parse_case(self.case9_text, name="case9")

        self.assertEqual(case.name, "case9")
        self.assertEqual(case.baseMVA, 100.0)
        self.assertEqual(len(case.buses), 9)
        self.assertEqual(len(case.generators), 3)
        self.assertEqual(len(case.branches), 9)
        self.assertEqual(len(case.costs), 3)
        self.assertEqual(case.slack_bus().id, 1)

        bus5 = case.buses[4]
        self.assertEqual(bus5.id, 5)
        self.assertEqual(bus5.type, "PQ")
        self.assertAlmostEqual(bus5.Pd, 0.9, places=12)
        self.assertAlmostEqual(bus5.Qd, 0.3, places=12)
        self.assertEqual(bus5.Vmax, 1.1)
        self.assertEqual(bus5.Vmin, 0.9)

        gen2 = case.generators[1]
        self.assertEqual(gen2.bus, 2)
        self.assertAlmostEqual(gen2.Pmax, 3.0, places=12)
        self.assertAlmostEqual(gen2.Pmin, 0.1, places=12)
        self.assertAlmostEqual(gen2.Qmax, 3.0, places=12)
        self.assertAlmostEqual(gen2.Qmin, -3.0, places=12)
        self.assertAlmostEqual(gen2.Vg, 1.025, places=12)

        branch = case.branches[1]
        self.assertEqual((branch.from_bus, branch.to_bus), (4, 5))
        self.assertAlmostEqual(branch.r, 0.017, places=12)
        self.assertAlmostEqual(branch.x, 0.092, places=12)
        self.assertAlmostEqual(branch.b_charge, 0.158, places=12)
        self.assertAlmostEqual(branch.rateA, 2.5, places=12)
        self.assertEqual(branch.tap, 1.0)

    def test_case9_costs_per_unit(self):
        """Test that cost coefficients are scaled to per-unit generation."""
        case = Parser.parse_case(self.case9_text)
        cost = case.costs[0]

        self.assertAlmostEqual(cost.c2, 0.11 * 100 ** 2, places=9)
        self.assertAlmostEqual(cost.c1, 5 * 100, places=9)
        self.assertAlmostEqual(cost.c0, 150, places=9)

    def test_case14_taps_and_cell_arrays(self):
        """Test transformer taps and that bus_name cell arrays are skipped."""
        with open(os.path.join(settings.CASES_DIR, "case14.m"), encoding="utf-8") as handle:
            case = Parser.parse_case(handle, name="case14")

        self.assertEqual(len(case.buses), 14)
        self.assertEqual(len(case.generators), 5)
        self.assertEqual(len(case.branches), 20)
        taps = sorted(br.tap for br in case.branches if br.tap != 1.0)
        self.assertEqual(taps, [0.932, 0.969, 0.978])
        self.assertTrue(all(br.rateA == 0 for br in case.branches))

    def test_stream_input(self):
        """Test that a readable stream is accepted."""
        case = Parser.parse_case(io.StringIO(TWO_BUS), name="two_bus")

        self.assertEqual(len(case.buses), 2)
        self.assertAlmostEqual(case.buses[1].Pd, 0.5)
        self.assertAlmostEqual(case.buses[0].Va, 0.0)

    def test_angle_in_radians(self):
        """Test that voltage angles are converted to radians."""
        text = TWO_BUS.replace("2  1  50  20  0  0  1  1.0  0  230", "2  1  50  20  0  0  1  1.0  -30  230")
        case = Parser.parse_case(text)

        self.assertAlmostEqual(case.buses[1].Va, -math.pi / 6, places=12)

    def test_missing_table(self):
        """Test that a missing gencost table is reported."""
        text = TWO_BUS.split("mpc.gencost")[0]

        with self.assertRaises(MissingTable) as ctx:
            Parser.parse_case(text)
        self.assertEqual(ctx.exception.name, "gencost")

    def test_missing_base(self):
        """Test that a missing baseMVA is reported."""
        with self.assertRaises(MissingTable):
            Parser.parse_case(TWO_BUS.replace("mpc.baseMVA = 100;", ""))

    def test_short_row(self):
        """Test that a bus row with too few columns is malformed."""
        text = TWO_BUS.replace("2  1  50  20  0  0  1  1.0  0  230  1  1.1  0.9;", "2  1  50  20;")

        with self.assertRaises(MalformedRow) as ctx:
            Parser.parse_case(text)
        self.assertEqual(ctx.exception.table, "bus")
        self.assertEqual(ctx.exception.line, 6)

    def test_inverted_voltage_box(self):
        """Test that Vmin > Vmax is malformed."""
        text = TWO_BUS.replace("230  1  1.1  0.9;\n];", "230  1  0.9  1.1;\n];")

        with self.assertRaises(MalformedRow):
            Parser.parse_case(text)

    def test_unknown_bus(self):
        """Test that a branch to an undeclared bus is rejected."""
        text = TWO_BUS.replace("1  2  0.01", "1  7  0.01")

        with self.assertRaises(UnknownBusReference) as ctx:
            Parser.parse_case(text)
        self.assertEqual(ctx.exception.bus_id, 7)

    def test_slack_count(self):
        """Test that exactly one slack bus is required."""
        two_slacks = TWO_BUS.replace("2  1  50  20", "2  3  50  20")
        no_slack = TWO_BUS.replace("1  3  0   0", "1  2  0   0")

        with self.assertRaises(MultipleSlackBuses):
            Parser.parse_case(two_slacks)
        with self.assertRaises(NoSlackBus):
            Parser.parse_case(no_slack)

    def test_linear_cost_padded(self):
        """Test that a linear cost row is padded to quadratic form."""
        text = TWO_BUS.replace("2  0  0  3  0.01  10  5;", "2  0  0  2  10  5;")
        cost = Parser.parse_case(text).costs[0]

        self.assertEqual(cost.c2, 0.0)
        self.assertAlmostEqual(cost.c1, 1000.0)
        self.assertAlmostEqual(cost.c0, 5.0)

    def test_piecewise_cost_rejected(self):
        """Test that piecewise-linear costs are malformed."""
        text = TWO_BUS.replace("2  0  0  3  0.01  10  5;", "1  0  0  2  0  0  100  1000;")

        with self.assertRaises(MalformedRow):
            Parser.parse_case(text)


if __name__ == "__main__":
    unittest.main()
