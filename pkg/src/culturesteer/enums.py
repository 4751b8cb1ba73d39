"""Enumerations used across the cultural probing and steering pipeline."""

from __future__ import annotations

from enum import Enum


class Axis(Enum):
    """Axes of the Inglehart-Welzel map.

    ``X`` runs Survival -> Self-Expression, ``Y`` runs
    Traditional -> Secular-Rational.
    """

    X = "X"
    Y = "Y"

    @property
    def other(self) -> "Axis":
        return Axis.Y if self is Axis.X else Axis.X

    @property
    def dimension_label(self) -> str:
        """Heading used for the axis in the dataset generation prompt."""
        if self is Axis.Y:
            return "Traditional vs. Secular-Rational"
        return "Survival vs. Self-Expression"

    @property
    def mapping_key(self) -> str:
        """Key of the axis inside a dataset entry's ``mapping`` object."""
        return "Dimension 1" if self is Axis.Y else "Dimension 2"


class Domain(Enum):
    """Social domains the scenarios are written for."""

    FAMILY = "family"
    WORKPLACE = "workplace"
    LEGAL = "legal"


class LabelKey(Enum):
    """Which option letter carries the positive pole on a given trial."""

    HIGH_IS_A = "HighIsA"
    HIGH_IS_B = "HighIsB"


class PersonaKind(Enum):
    """System preamble used in front of a situational prompt."""

    NONE = "none"
    BASIC = "basic"
    ADVANCED = "advanced"


class GroupBy(Enum):
    """Aggregation granularity for question scores."""

    QID = "qid"
    QID_DOMAIN = "qid_domain"


__all__ = ["Axis", "Domain", "LabelKey", "PersonaKind", "GroupBy"]
