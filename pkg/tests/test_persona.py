"""Basic and advanced persona preambles."""

from __future__ import annotations

from pathlib import Path

import pytest

from culturesteer.enums import PersonaKind
from culturesteer.errors import DataError, EmptyCountry, MissingName, MissingVariable
from culturesteer.persona import (
    Codebook,
    CountryStats,
    build_advanced,
    build_basic,
    load_codebook,
    load_country_stats,
    nearest_category,
)

INDIA = [
    "You are Aarav, a person from India.",
    "You described yourself as Not very happy.",
    "Generally speaking, you would say that You need to be very careful in dealing with people.",
    "If greater respect for authority takes place in the near future, you think it would be A thing You don't mind.",
    "You have Might sign a petition.",
    "In your life, you believe god is Very important.",
    "You think homosexuality is Rarely justifiable.",
    "You think abortion is Rarely justifiable.",
    "You are Very proud about your nationality.",
    "In the next 10 years, you think the most important goal for your country should be "
    "Balances between physical/economic security and self-expression/quality of life.",
    "Given list of qualities that children can be encouraged to learn at home, You are a person who either "
    "selected an equal number of autonomy and conformity traits (e.g., one from each side) or selected none "
    "of them at all. You view child-rearing as a balance where following rules and thinking for oneself are "
    "of equal importance, or you prioritize other traits like 'Hard work' instead.",
]


@pytest.fixture(scope="module")
def codebook(data_dir: Path) -> Codebook:
    return load_codebook(data_dir / "codebook.json")


@pytest.fixture(scope="module")
def stats(data_dir: Path) -> dict[str, CountryStats]:
    return load_country_stats(data_dir / "country_stats.json")


@pytest.mark.parametrize("country", ["India", "Vietnam", "Mexico", "Denmark"])
def test_basic_template(country: str) -> None:
    persona = build_basic(country)
    assert persona.text == f"You are a person born in {country} and live in {country}"
    assert persona.kind is PersonaKind.BASIC


def test_basic_needs_a_country() -> None:
    with pytest.raises(EmptyCountry):
        build_basic("  ")


def test_advanced_india(codebook: Codebook, stats: dict[str, CountryStats]) -> None:
    persona = build_advanced("India", stats["India"], codebook)
    assert persona.text.splitlines() == INDIA
    assert persona.text.startswith("You are Aarav, a person from India.")
    assert "you believe god is Very important" in persona.text
    assert persona.selections["F063"] == 10
    assert persona.name == "Aarav"


def test_advanced_vietnam_selects_other_categories(codebook: Codebook, stats: dict[str, CountryStats]) -> None:
    text = build_advanced("Vietnam", stats["Vietnam"], codebook).text
    assert text.startswith("You are Minh, a person from Vietnam.\n")
    assert "you think it would be A good thing." in text
    assert "You have Would never sign a petition." in text
    assert "god is Moderately important." in text
    assert "You think homosexuality is Often justifiable." in text
    assert "You think abortion is Sometimes justifiable." in text


@pytest.mark.parametrize("country", ["India", "Vietnam", "Mexico", "Denmark"])
def test_advanced_selections_come_from_codebook(
    country: str, codebook: Codebook, stats: dict[str, CountryStats]
) -> None:
    persona = build_advanced(country, stats[country], codebook)
    assert len(persona.text.splitlines()) == 11
    for variable, index in persona.selections.items():
        assert index in [i for i, _ in codebook.entries[variable]]
    assert build_advanced(country, stats[country], codebook) == persona


def test_nearest_category_ties_go_low() -> None:
    assert nearest_category(1.5, [1, 2, 3]) == 1
    assert nearest_category(8.3, [1, 5, 10]) == 10
    assert nearest_category(-0.2, [-2, -1, 0, 1, 2]) == 0


def test_out_of_range_mean_warns_and_clamps(codebook: Codebook, stats: dict[str, CountryStats]) -> None:
    means = dict(stats["India"].means, F063=11.0)
    with pytest.warns(UserWarning, match="outside codebook range"):
        persona = build_advanced("India", CountryStats("India", means), codebook)
    assert persona.selections["F063"] == 10


def test_advanced_errors(codebook: Codebook, stats: dict[str, CountryStats]) -> None:
    with pytest.raises(MissingName):
        build_advanced("Chile", CountryStats("Chile", stats["India"].means), codebook)

    means = {k: v for k, v in stats["India"].means.items() if k != "G006"}
    with pytest.raises(MissingVariable):
        build_advanced("India", CountryStats("India", means), codebook)

    partial = Codebook({k: v for k, v in codebook.entries.items() if k != "A165"})
    with pytest.raises(MissingVariable):
        build_advanced("India", stats["India"], partial)

    names = {"Chile": "Valentina"}
    persona = build_advanced("Chile", CountryStats("Chile", stats["Mexico"].means), codebook, names)
    assert persona.text.startswith("You are Valentina, a person from Chile.")


def test_codebook_indices_must_increase() -> None:
    with pytest.raises(DataError):
        Codebook({"A008": ((2.0, "Quite happy"), (1.0, "Very happy"))})


@pytest.mark.parametrize(
    "text",
    [
        None,
        "{not json",
        '{"A008": [{"idx": 1, "description": "Very happy"}]}',
        '{"A008": [{"index": "high", "description": "Very happy"}]}',
        '{"A008": 3}',
    ],
)
def test_bad_codebook_files_are_data_errors(tmp_path: Path, text: str | None) -> None:
    path = tmp_path / "codebook.json"
    if text is not None:
        path.write_text(text, encoding="utf-8")
    with pytest.raises(DataError):
        load_codebook(path)


@pytest.mark.parametrize(
    "text",
    [
        None,
        "[1, 2",
        '{"country": "India"}',
        '{"country": "India", "means": {"F063": "lots"}}',
    ],
)
def test_bad_stats_files_are_data_errors(tmp_path: Path, text: str | None) -> None:
    path = tmp_path / "stats.json"
    if text is not None:
        path.write_text(text, encoding="utf-8")
    with pytest.raises(DataError):
        load_country_stats(path)
