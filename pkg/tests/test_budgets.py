"""Modulus presets and the budget-table calculators."""

import math

import numpy as np
import pytest

from mono.budgets import (BudgetInputs, RangeError, active_complexity_order,
                          budget_tables, expert_depth_order, expert_rank,
                          lipschitz_modulus, logarithmic_modulus,
                          small_ball_radius, table_modulus)


class TestModuli:
    def test_lipschitz_roundtrip(self):
        m = lipschitz_modulus(2.0)
        assert m.omega(0.5) == 1.0
        assert m.omega_inv(m.omega(0.37)) == pytest.approx(0.37)

    def test_logarithmic_roundtrip_and_shape(self):
        m = logarithmic_modulus(c0=1.5, c1=0.8)
        for t in (1e-3, 1e-2, 0.5):
            assert m.omega_inv(m.omega(t)) == pytest.approx(t, rel=1e-10)
        assert m.omega(1e-6) < m.omega(1e-3) < m.omega(1.0)

    def test_logarithmic_underflow_guard(self):
        m = logarithmic_modulus()
        assert m.omega_inv(1e-6) == 0.0

    def test_table_modulus_interpolates_and_guards(self):
        ts = [0.0, 0.5, 1.0]
        vals = [0.0, 1.0, 3.0]
        m = table_modulus(ts, vals)
        assert m.omega(0.25) == pytest.approx(0.5)
        assert m.omega_inv(2.0) == pytest.approx(0.75)
        with pytest.raises(RangeError):
            m.omega(2.0)
        with pytest.raises(RangeError):
            m.omega_inv(5.0)


class TestCalculators:
    def test_preconditions(self):
        with pytest.raises(ValueError):
            BudgetInputs(epsilon=0.1, modulus=lipschitz_modulus(), s1=0.5)
        with pytest.raises(ValueError):
            BudgetInputs(epsilon=-1.0, modulus=lipschitz_modulus())

    def test_depth_order_grows_with_precision(self):
        lip = lipschitz_modulus()
        a = BudgetInputs(epsilon=0.2, modulus=lip)
        b = BudgetInputs(epsilon=0.02, modulus=lip)
        assert expert_depth_order(b, expert_rank(b)) > \
            expert_depth_order(a, expert_rank(a))

    def test_active_order_positive_and_monotone(self):
        lip = lipschitz_modulus()
        values = [active_complexity_order(BudgetInputs(epsilon=e, modulus=lip))
                  for e in (0.2, 0.05, 0.01)]
        assert all(v > 0 for v in values)
        assert values[0] < values[1] < values[2]

    def test_small_ball_radius_shrinks(self):
        lip = lipschitz_modulus()
        a = BudgetInputs(epsilon=0.2, modulus=lip)
        b = BudgetInputs(epsilon=0.02, modulus=lip)
        assert small_ball_radius(b, expert_rank(b)) < \
            small_ball_radius(a, expert_rank(a))

    def test_report_structure(self):
        report = budget_tables(BudgetInputs(epsilon=0.1,
                                            modulus=lipschitz_modulus()))
        names_single = [e.name for e in report.single]
        assert names_single == ["rank", "width", "depth", "leaves", "routing"]
        names_mix = [e.name for e in report.distributed]
        assert "active" in names_mix and "leaves" in names_mix
        # classical column: one leaf, one routing query
        entries = report.entries()
        assert entries["single_leaves"].value == 1
        assert entries["single_routing"].value == 1

    def test_log10_field(self):
        report = budget_tables(BudgetInputs(epsilon=0.05,
                                            modulus=lipschitz_modulus()))
        for entry in report.single + report.distributed:
            if entry.value > 0 and math.isfinite(entry.value):
                assert entry.log10 == pytest.approx(math.log10(entry.value))

    def test_logarithmic_modulus_budget_finite(self):
        # the curse in action: the log modulus drives leaf counts out of
        # exact-integer range, and the report falls back to order form
        report = budget_tables(BudgetInputs(epsilon=1e-3,
                                            modulus=logarithmic_modulus()))
        entries = report.entries()
        assert entries["mixture_leaves"].value >= 1 or \
            math.isinf(entries["mixture_leaves"].value)
