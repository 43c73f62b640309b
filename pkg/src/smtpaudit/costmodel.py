"""Spam cost calculator.

All arithmetic is on exact fractions; money is rounded half-up to the cent
only when it is displayed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from decimal import Decimal
from fractions import Fraction
from math import floor
from typing import Union

Number = Union[int, float, str, Decimal, Fraction]


class InvalidInput(ValueError):
    pass


def _exact(value: Number) -> Fraction:
    if isinstance(value, float):
        # 15.0 should mean fifteen, not its binary approximation
        value = repr(value)
    return Fraction(value)


@dataclass(frozen=True)
class CostInputs:
    employees: int
    workdays_per_year: int
    hourly_wage: Fraction
    spam_per_day_per_employee: Fraction
    seconds_per_spam: Fraction
    hours_per_workday: Fraction = Fraction(8)

    def __post_init__(self) -> None:
        for f in fields(self):
            object.__setattr__(self, f.name, _exact(getattr(self, f.name)))
        for name in ("employees", "workdays_per_year"):
            value = getattr(self, name)
            if value <= 0 or value.denominator != 1:
                raise InvalidInput(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))
        for name in ("hourly_wage", "hours_per_workday"):
            if getattr(self, name) <= 0:
                raise InvalidInput(f"{name} must be positive")
        for name in ("spam_per_day_per_employee", "seconds_per_spam"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must not be negative")


@dataclass(frozen=True)
class CostReport:
    inputs: CostInputs
    annual_hours_lost: Fraction
    annual_cost: Fraction
    daily_cost: Fraction
    annual_cost_per_employee: Fraction
    daily_cost_per_employee: Fraction
    annual_productivity_days: Fraction
    per_employee_productivity_days: Fraction


def compute(inputs: CostInputs) -> CostReport:
    i = inputs
    hours = Fraction(i.employees * i.workdays_per_year) * i.spam_per_day_per_employee * i.seconds_per_spam / 3600
    annual = hours * i.hourly_wage
    return CostReport(
        inputs=i,
        annual_hours_lost=hours,
        annual_cost=annual,
        daily_cost=annual / i.workdays_per_year,
        annual_cost_per_employee=annual / i.employees,
        daily_cost_per_employee=annual / i.workdays_per_year / i.employees,
        annual_productivity_days=hours / i.hours_per_workday,
        per_employee_productivity_days=hours / i.hours_per_workday / i.employees,
    )


def round_half_up(value: Fraction, places: int = 2) -> Decimal:
    scale = 10**places
    units = floor(abs(value) * scale + Fraction(1, 2))
    sign = -1 if value < 0 else 1
    return Decimal(sign * units).scaleb(-places)


def format_amount(value: Fraction, locale: str = "en", places: int = 2) -> str:
    """``48875`` -> ``48,875.00`` (en) or ``48.875,00`` (eu)."""
    text = f"{round_half_up(value, places):,.{places}f}"
    if locale == "eu":
        text = text.translate(str.maketrans(",.", ".,"))
    elif locale != "en":
        raise ValueError(f"unknown locale {locale!r}")
    return text


_ROWS = (
    ("Financial cost (EUR)", "Per year", "annual_cost", "annual_cost_per_employee"),
    ("", "Per day", "daily_cost", "daily_cost_per_employee"),
    ("Productivity lost (days)", "Per year", "annual_productivity_days", "per_employee_productivity_days"),
)


def _fraction_str(value: Fraction) -> str:
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


def report_json(report: CostReport, locale: str = "en") -> dict:
    out = {"inputs": {}, "outputs": {}}
    for f in fields(report.inputs):
        value = getattr(report.inputs, f.name)
        out["inputs"][f.name] = value if isinstance(value, int) else _fraction_str(value)
    for f in fields(report):
        if f.name == "inputs":
            continue
        value = getattr(report, f.name)
        out["outputs"][f.name] = {
            "exact": _fraction_str(value),
            "display": format_amount(value, locale),
        }
    return out


def render_cost_table(report: CostReport, format: str = "text", locale: str = "en") -> str:
    if format == "json":
        return json.dumps(report_json(report, locale), indent=2)
    if format != "text":
        raise ValueError(f"unknown format {format!r}")

    header = ("", "", "Total corporate cost", "Cost per employee")
    body = [
        (label, period, format_amount(getattr(report, corp), locale), format_amount(getattr(report, each), locale))
        for label, period, corp, each in _ROWS
    ]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
    lines = [
        "  ".join(
            cell.ljust(w) if i < 2 else cell.rjust(w)
            for i, (cell, w) in enumerate(zip(row, widths))
        ).rstrip()
        for row in [header, *body]
    ]
    hours = format_amount(report.annual_hours_lost, locale)
    per_day = format_amount(report.inputs.hours_per_workday, locale)
    lines.append(f"Hours lost per year: {hours} (days counted at {per_day} h)")
    return "\n".join(lines) + "\n"
