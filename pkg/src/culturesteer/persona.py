"""Basic and advanced country personas used as system preambles.

Input files::

    stats.json     {"country": "India", "means": {"A008": 2.9, ...}}   (or a list of these)
    codebook.json  {"A008": [{"index": 1, "description": "Very happy"}, ...], ...}
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .enums import PersonaKind
from .errors import DataError, EmptyCountry, MissingName, MissingVariable
from .utils import read_json

logger = logging.getLogger(__name__)

DEFAULT_NAMES: dict[str, str] = {
    "India": "Aarav",
    "Vietnam": "Minh",
    "Mexico": "Mateo",
    "Denmark": "Soren",
}

BASIC_TEMPLATE = "You are a person born in {country} and live in {country}"
ADVANCED_OPENING = "You are {name}, a person from {country}."

# Sentence frames in persona order; ``{}`` receives the codebook description.
ADVANCED_FRAMES: tuple[tuple[str, str], ...] = (
    ("A008", "You described yourself as {}."),
    ("A165", "Generally speaking, you would say that {}."),
    ("E018", "If greater respect for authority takes place in the near future, you think it would be {}."),
    ("E025", "You have {}."),
    ("F063", "In your life, you believe god is {}."),
    ("F118", "You think homosexuality is {}."),
    ("F120", "You think abortion is {}."),
    ("G006", "You are {} about your nationality."),
    ("Y002", "In the next 10 years, you think the most important goal for your country should be {}."),
    ("Y003", "Given list of qualities that children can be encouraged to learn at home, {}"),
)
ADVANCED_VARIABLES: tuple[str, ...] = tuple(var for var, _ in ADVANCED_FRAMES)


@dataclass(frozen=True)
class CountryStats:
    country: str
    means: Mapping[str, float]


@dataclass(frozen=True)
class Codebook:
    entries: Mapping[str, tuple[tuple[float, str], ...]]

    def __post_init__(self) -> None:
        for variable, answers in self.entries.items():
            indices = [index for index, _ in answers]
            if not indices:
                raise DataError(f"codebook {variable}: no answers")
            if any(b <= a for a, b in zip(indices, indices[1:])):
                raise DataError(f"codebook {variable}: indices must be strictly increasing")
            if any(not description for _, description in answers):
                raise DataError(f"codebook {variable}: empty description")

    def description(self, variable: str, index: float) -> str:
        for candidate, description in self.entries[variable]:
            if candidate == index:
                return description
        raise MissingVariable(f"codebook {variable} has no index {index}")


@dataclass(frozen=True)
class PersonaProfile:
    country: str
    name: str
    kind: PersonaKind
    text: str
    selections: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "name": self.name,
            "kind": self.kind.value,
            "text": self.text,
            "selections": dict(self.selections),
        }


def build_basic(country: str) -> PersonaProfile:
    if not country or not country.strip():
        raise EmptyCountry("persona country must be non-empty")
    return PersonaProfile(
        country=country,
        name="",
        kind=PersonaKind.BASIC,
        text=BASIC_TEMPLATE.format(country=country),
    )


def nearest_category(mean: float, entries: Sequence[float]) -> float:
    """Index closest to ``mean``; ties go to the lower index."""

    if not entries:
        raise DataError("nearest_category needs at least one index")
    return min(entries, key=lambda index: (abs(index - mean), index))


def build_advanced(
    country: str,
    stats: CountryStats,
    codebook: Codebook,
    names: Mapping[str, str] = DEFAULT_NAMES,
    variables: Sequence[str] = ADVANCED_VARIABLES,
) -> PersonaProfile:
    """Persona grounded in the answer category nearest to each country mean."""

    if not country or not country.strip():
        raise EmptyCountry("persona country must be non-empty")
    name = names.get(country)
    if not name:
        raise MissingName(f"no persona name configured for {country!r}")

    frames = dict(ADVANCED_FRAMES)
    sentences = [ADVANCED_OPENING.format(name=name, country=country)]
    selections: dict[str, float] = {}
    for variable in variables:
        if variable not in stats.means:
            raise MissingVariable(f"country stats for {country} lack {variable}")
        if variable not in codebook.entries:
            raise MissingVariable(f"codebook lacks {variable}")
        if variable not in frames:
            raise MissingVariable(f"no sentence frame for {variable}")

        mean = float(stats.means[variable])
        answers = codebook.entries[variable]
        indices = [index for index, _ in answers]
        if not indices[0] <= mean <= indices[-1]:
            message = f"{country} {variable} mean {mean} outside codebook range [{indices[0]}, {indices[-1]}]"
            logger.warning(message)
            warnings.warn(message)
        chosen = nearest_category(mean, indices)
        selections[variable] = chosen
        sentences.append(frames[variable].format(codebook.description(variable, chosen)))

    return PersonaProfile(
        country=country,
        name=name,
        kind=PersonaKind.ADVANCED,
        text="\n".join(sentences),
        selections=selections,
    )


def _stats_from_obj(obj: object) -> CountryStats:
    if not isinstance(obj, dict) or "country" not in obj or not isinstance(obj.get("means"), dict):
        raise DataError("stats entries need 'country' and a 'means' object")
    return CountryStats(
        country=str(obj["country"]),
        means={str(k): float(v) for k, v in obj["means"].items()},
    )


def load_country_stats(path: str | Path) -> dict[str, CountryStats]:
    raw = read_json(path)
    items = raw if isinstance(raw, list) else [raw]
    try:
        stats = [_stats_from_obj(item) for item in items]
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    return {s.country: s for s in stats}


def load_codebook(path: str | Path) -> Codebook:
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: codebook must be an object keyed by variable")
    try:
        entries = {
            str(variable): tuple((float(a["index"]), str(a["description"])) for a in answers)
            for variable, answers in raw.items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: every codebook answer needs a numeric index and a description ({exc!r})") from exc
    return Codebook(entries)


__all__ = [
    "DEFAULT_NAMES",
    "BASIC_TEMPLATE",
    "ADVANCED_FRAMES",
    "ADVANCED_VARIABLES",
    "CountryStats",
    "Codebook",
    "PersonaProfile",
    "build_basic",
    "nearest_category",
    "build_advanced",
    "load_country_stats",
    "load_codebook",
]
