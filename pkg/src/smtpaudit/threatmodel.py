"""STRIDE threat categories and DREAD risk scores."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from math import floor


class StrideCategory(str, enum.Enum):
    SPOOFING = "Spoofing"
    TAMPERING = "Tampering"
    REPUDIATION = "Repudiation"
    INFORMATION_DISCLOSURE = "Information disclosure"
    DENIAL_OF_SERVICE = "Denial of service"
    ELEVATION_OF_PRIVILEGE = "Elevation of privilege"

    @classmethod
    def parse(cls, name: str) -> "StrideCategory":
        """Accept the display value or the enum name, in any case."""
        key = name.strip().lower()
        for c in cls:
            if key in (c.value.lower(), c.name.lower(), c.name.lower().replace("_", "")):
                return c
        raise ValueError(f"unknown STRIDE category: {name!r}")


_DEFINITIONS = {
    StrideCategory.SPOOFING: (
        "Attempt to gain access to a system using a forged identity. "
        "A compromised system would have access control vulnerability."
    ),
    StrideCategory.TAMPERING: (
        "Manipulation of data during communication through the network. "
        "The integrity of the data is threatened."
    ),
    StrideCategory.REPUDIATION: (
        "Denial of participation in a transaction. "
        "The availability of a resource is threatened."
    ),
    StrideCategory.INFORMATION_DISCLOSURE: (
        "Unwanted exposure and loss of confidentiality of private data."
    ),
    StrideCategory.DENIAL_OF_SERVICE: (
        "Attack on system availability through the depletion of system resources."
    ),
    StrideCategory.ELEVATION_OF_PRIVILEGE: (
        "A user with limited privileges assumes the identity of a privileged user "
        "to gain access to an application. The confidentiality, integrity, and "
        "availability of a resource are threatened."
    ),
}

# Attribute glossary. The affected-users entry is truncated in the source
# text; it is kept as printed rather than guessed at.
DREAD_ATTRIBUTES = {
    "damage_potential": "The damage that will be done if the vulnerability is exploited by the attacker.",
    "reproducibility": "The ease of repeatedly exploiting a vulnerability.",
    "exploitability": "The skill level required to exploit a vulnerability.",
    "affected_users": "The parties by the exploitation of a vulnerability.",
    "discoverability": "The ease of exploration and discovery of a vulnerability.",
}


def describe(category: StrideCategory) -> str:
    return _DEFINITIONS[StrideCategory(category)]


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class DreadScore:
    damage_potential: int
    reproducibility: int
    exploitability: int
    affected_users: int
    discoverability: int

    def __post_init__(self) -> None:
        for name in DREAD_ATTRIBUTES:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 10:
                raise OutOfRange(f"{name} must be an integer from 1 to 10, got {value!r}")

    def values(self) -> tuple:
        return tuple(getattr(self, name) for name in DREAD_ATTRIBUTES)


def risk(score: DreadScore) -> Fraction:
    """Mean of the five attributes, exact."""
    return Fraction(sum(score.values()), 5)


def format_risk(value: Fraction) -> str:
    """One decimal, halves rounded up."""
    tenths = floor(value * 10 + Fraction(1, 2))
    return f"{tenths // 10}.{tenths % 10}"


@dataclass(frozen=True)
class ThreatRecord:
    name: str
    categories: frozenset
    score: DreadScore
    notes: str = ""

    def __post_init__(self) -> None:
        cats = frozenset(StrideCategory(c) for c in self.categories)
        if not cats:
            raise ValueError(f"threat {self.name!r} needs at least one STRIDE category")
        object.__setattr__(self, "categories", cats)

    @property
    def risk(self) -> Fraction:
        return risk(self.score)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "categories": sorted(c.value for c in self.categories),
            "score": dict(zip(DREAD_ATTRIBUTES, self.score.values())),
            "risk": format_risk(self.risk),
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ThreatRecord":
        return cls(
            doc["name"],
            frozenset(StrideCategory.parse(c) for c in doc["categories"]),
            DreadScore(**{k: doc["score"][k] for k in DREAD_ATTRIBUTES}),
            doc.get("notes", ""),
        )


def rank(threats) -> list[ThreatRecord]:
    """Highest risk first; equal risks ordered by name.

    Remaining ties fall back to the attribute values, categories and notes,
    so the order never depends on input order.
    """
    return sorted(
        threats,
        key=lambda t: (-t.risk, t.name, t.score.values(), sorted(c.value for c in t.categories), t.notes),
    )


def load_threats(path) -> list[ThreatRecord]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if isinstance(doc, dict):
        doc = doc.get("threats", [])
    return [ThreatRecord.from_json(d) for d in doc]
