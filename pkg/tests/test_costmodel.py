import json
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from smtpaudit.costmodel import (
    CostInputs, InvalidInput, compute, format_amount, render_cost_table, report_json, round_half_up,
)

TABLE2 = CostInputs(680, 230, "15.00", 25, 3)


def cents_by_hand(employees, workdays, wage_cents, spam, seconds):
    """Annual cost in cents, integer arithmetic only; exact for these inputs."""
    numerator = employees * workdays * spam * seconds * wage_cents
    assert numerator % 3600 == 0
    return numerator // 3600


def test_oracle_value():
    assert cents_by_hand(680, 230, 1500, 25, 3) == 4_887_500


class TestTable2:
    def test_financial_rows(self):
        r = compute(TABLE2)
        annual_cents = cents_by_hand(680, 230, 1500, 25, 3)
        assert r.annual_cost == Fraction(annual_cents, 100)
        assert round_half_up(r.annual_cost) == Decimal("48875.00")
        assert round_half_up(r.daily_cost) == Decimal("212.50")
        assert round_half_up(r.annual_cost_per_employee) == Decimal("71.88")
        assert round_half_up(r.daily_cost_per_employee) == Decimal("0.31")

    def test_unrounded_values(self):
        r = compute(TABLE2)
        assert r.annual_cost_per_employee == Fraction("71.875")
        assert r.daily_cost_per_employee == Fraction("0.3125")

    def test_productivity(self):
        r = compute(TABLE2)
        assert r.annual_hours_lost == Fraction(680 * 230 * 25 * 3, 3600)
        assert abs(float(r.annual_hours_lost) - 3258.33) < 0.01
        assert round_half_up(r.annual_productivity_days) == Decimal("407.29")

    def test_locales(self):
        assert "48.875,00" in render_cost_table(compute(TABLE2), locale="eu")
        assert "48,875.00" in render_cost_table(compute(TABLE2), locale="en")


def test_zero_rate():
    r = compute(CostInputs(680, 230, 15, 0, 3))
    assert r.annual_cost == r.daily_cost == r.annual_productivity_days == 0
    assert set(render_cost_table(r).split()) >= {"0.00"}


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(employees=0),
        dict(workdays_per_year=-1),
        dict(hourly_wage=0),
        dict(spam_per_day_per_employee=-1),
        dict(employees="1.5"),
    ],
)
def test_invalid(kwargs):
    base = dict(employees=1, workdays_per_year=1, hourly_wage=1, spam_per_day_per_employee=1, seconds_per_spam=1)
    base.update(kwargs)
    with pytest.raises(InvalidInput):
        CostInputs(**base)


def test_float_inputs_are_taken_at_face_value():
    assert CostInputs(1, 1, 15.1, 1, 1).hourly_wage == Fraction("15.1")


def test_round_half_up():
    assert round_half_up(Fraction("0.125")) == Decimal("0.13")
    assert round_half_up(Fraction("0.124999")) == Decimal("0.12")
    assert format_amount(Fraction(1234567, 1)) == "1,234,567.00"


positive = st.integers(1, 5000)
rates = st.fractions(min_value=0, max_value=500, max_denominator=100)


@given(positive, positive, st.fractions(min_value=Fraction(1, 100), max_value=200, max_denominator=100), rates, rates)
def test_invariants(emp, days, wage, spam, secs):
    r = compute(CostInputs(emp, days, wage, spam, secs))
    assert r.daily_cost * days == r.annual_cost
    assert r.annual_cost_per_employee * emp == r.annual_cost
    assert r.daily_cost_per_employee * emp == r.daily_cost
    assert r.annual_cost >= 0
    doubled = compute(CostInputs(emp * 2, days, wage, spam, secs))
    assert doubled.annual_cost == 2 * r.annual_cost
    assert doubled.annual_hours_lost == 2 * r.annual_hours_lost
    assert doubled.annual_cost_per_employee == r.annual_cost_per_employee
    more = compute(CostInputs(emp, days, wage, spam + 1, secs + 1))
    assert more.annual_cost >= r.annual_cost


def test_json_output():
    doc = json.loads(render_cost_table(compute(TABLE2), format="json"))
    out = doc["outputs"]
    assert out["annual_cost"] == {"exact": "48875", "display": "48,875.00"}
    assert out["annual_cost_per_employee"] == {"exact": "575/8", "display": "71.88"}
    assert Fraction(out["daily_cost_per_employee"]["exact"]) == Fraction(5, 16)
    assert doc["inputs"]["employees"] == 680
    assert report_json(compute(TABLE2), "eu")["outputs"]["annual_cost"]["display"] == "48.875,00"
