import unittest

import numpy as np

from src.models.case import GenCost, Generator, Perturbation
from src.services.case_service import case_service, CaseService
from src.utils.errors import FeasprojError, InvalidPerturbation, IoFailure, ResultingEmptyBox


class TestCaseService(unittest.TestCase):
    """Test cases for loading and perturbing cases."""

    def setUp(self):
        """Set up test fixtures."""
        self.case = case_service.load_case("case9")

    def test_load_by_name(self):
        """Test that a bare name resolves against the cases directory."""
        self.assertEqual(self.case.name, "case9")
        self.assertEqual(len(self.case.buses), 9)

    def test_missing_case(self):
        """Test that an unknown case is an IoFailure."""
        with self.assertRaises(IoFailure):
            CaseService(cases_dir="/nonexistent").load_case("case9")

    def test_presets(self):
        """Test the benchmark perturbation labels."""
        p70 = case_service.perturbation_preset("P70")
        self.assertEqual((p70.kind, p70.shrink_max_pct, p70.grow_min_pct), ("P_tighten", 70.0, 70.0))
        q80 = case_service.perturbation_preset("Q80")
        self.assertEqual((q80.kind, q80.shrink_max_pct), ("Q_tighten", 80.0))
        p60 = case_service.perturbation_preset("P60")
        self.assertEqual((p60.shrink_max_pct, p60.grow_min_pct), (0.0, 60.0))
        custom = case_service.perturbation_preset("custom:V_tighten:10:20")
        self.assertEqual((custom.kind, custom.shrink_max_pct, custom.grow_min_pct), ("V_tighten", 10.0, 20.0))

        with self.assertRaises(ValueError):
            case_service.perturbation_preset("X99")
        with self.assertRaises(ValueError):
            Perturbation("P_tighten", 120, 0)

    def test_invalid_perturbation(self):
        """Test that bad perturbations raise the project error, which is also a ValueError."""
        with self.assertRaises(InvalidPerturbation) as ctx:
            Perturbation("P_tighten", -5, 0)
        self.assertIsInstance(ctx.exception, FeasprojError)
        self.assertIsInstance(ctx.exception, ValueError)
        with self.assertRaises(InvalidPerturbation):
            Perturbation("S_tighten", 10, 10)
        with self.assertRaises(ValueError):
            case_service.perturbation_preset("custom:S_tighten:10:10")

    def test_p_tighten(self):
        """Test that P70 scales Pmax down and Pmin up by 70%."""
        perturbed = case_service.apply_perturbation(self.case, case_service.perturbation_preset("P70"))

        self.assertEqual(perturbed.name, "case9-P70")
        for before, after in zip(self.case.generators, perturbed.generators):
            self.assertAlmostEqual(after.Pmax, 0.3 * before.Pmax, places=12)
            self.assertAlmostEqual(after.Pmin, 1.7 * before.Pmin, places=12)
            self.assertEqual(after.Qmax, before.Qmax)
        # The input is left unchanged
        self.assertAlmostEqual(self.case.generators[0].Pmax, 2.5)

    def test_zero_percent_is_identity(self):
        """Test that a 0/0 perturbation keeps every bound."""
        perturbed = case_service.apply_perturbation(self.case, Perturbation("Q_tighten", 0, 0))

        for before, after in zip(self.case.generators, perturbed.generators):
            self.assertEqual((after.Qmax, after.Qmin), (before.Qmax, before.Qmin))

    def test_v_tighten(self):
        """Test that V40 shrinks the voltage band around its midpoint."""
        perturbed = case_service.apply_perturbation(self.case, case_service.perturbation_preset("V40"))

        for bus in perturbed.buses:
            self.assertAlmostEqual(bus.Vmax, 1.06, places=12)
            self.assertAlmostEqual(bus.Vmin, 0.94, places=12)

    def test_v40_on_case14(self):
        """Test that V40 keeps 60% of each half-width of the case14 band."""
        case14 = case_service.load_case("case14")
        perturbed = case_service.apply_perturbation(case14, case_service.perturbation_preset("V40"))

        for before, after in zip(case14.buses, perturbed.buses):
            self.assertEqual((before.Vmax, before.Vmin), (1.06, 0.94))
            self.assertAlmostEqual(after.Vmax, 1.036, places=12)
            self.assertAlmostEqual(after.Vmin, 0.964, places=12)

    def test_empty_box(self):
        """Test that a perturbation crossing the bounds is reported."""
        with self.assertRaises(ResultingEmptyBox) as ctx:
            case_service.apply_perturbation(self.case, Perturbation("P_tighten", 100, 100))
        self.assertEqual(ctx.exception.quantity, "P")

    def test_aggregate_generators(self):
        """Test that generators sharing a bus are merged."""
        case = self.case.copy()
        case.generators.append(Generator(
            bus=1, Pmax=1.0, Pmin=0.0, Qmax=1.0, Qmin=-1.0
        ))
        case.costs.append(GenCost(gen_index=3, c2=0.0, c1=100.0, c0=10.0))

        merged = {g.bus: g for g in case_service.aggregate_generators(case)}
        self.assertEqual(sorted(merged), [1, 2, 3])
        np.testing.assert_allclose(merged[1].Pmax, 3.5)
        np.testing.assert_allclose(merged[1].Qmin, -4.0)
        np.testing.assert_allclose(merged[1].c1, 600.0)
        np.testing.assert_allclose(merged[1].c0, 160.0)


if __name__ == "__main__":
    unittest.main()
