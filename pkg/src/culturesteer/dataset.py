"""Behavioural scenario dataset: loading, validation, splitting and labelling.

The on-disk format is a UTF-8 JSON array of objects shaped like::

    {
      "id": "optional stable key",
      "wvs_id": "F063",
      "dimension": "Traditional vs. Secular-Rational",
      "domain": "workplace",
      "scenario_text": "...",
      "options": {"A": "...", "B": "..."},
      "mapping": {"Dimension 1": "B", "Dimension 2": "B"}
    }

``mapping[<axis key>]`` names the option letter holding the HIGH pole
(Secular-Rational for "Dimension 1", Self-Expression for "Dimension 2").
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .enums import Axis, Domain, LabelKey
from .errors import (
    AxisMismatch,
    DatasetParseError,
    DuplicateScenarioId,
    EmptyConfig,
    EmptyDataset,
    InvalidConfig,
    InvalidMapping,
    UnknownWvsId,
)
from .utils import derive_seed, hash64, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WvsItem:
    """One of the ten survey items the scenarios are written against."""

    wvs_id: str
    qid: str
    title: str
    low: str
    high: str

    @property
    def axis(self) -> Axis:
        return Axis(self.qid[0])


# Order follows the generation prompt: Dimension 1 first, then Dimension 2.
WVS_ITEMS: tuple[WvsItem, ...] = (
    WvsItem("F063", "Y01", "Importance of God", "God is very important", "God is not very important"),
    WvsItem("Y003", "Y02", "Autonomy Index", "Child learns obedience/faith", "Child learns independence"),
    WvsItem("F120", "Y03", "Abortion", "Never justifiable", "Justifiable"),
    WvsItem("G006", "Y04", "National Pride", "Strong sense", "Weak sense"),
    WvsItem("E018", "Y05", "Authority", "Favors more respect", "Favors less respect"),
    WvsItem("Y002", "X01", "Security/Expression", "Economic/physical security", "Self-expression"),
    WvsItem("A008", "X02", "Happiness", "Not very happy", "Very happy"),
    WvsItem("F118", "X03", "Homosexuality", "Never justifiable", "Justifiable"),
    WvsItem("E025", "X04", "Political Action", "Would not sign a petition", "Has or would sign"),
    WvsItem("A165", "X05", "Trust", "Be very careful", "Most people can be trusted"),
)
WVS_BY_ID: dict[str, WvsItem] = {item.wvs_id: item for item in WVS_ITEMS}
QID_BY_WVS: dict[str, str] = {item.wvs_id: item.qid for item in WVS_ITEMS}
ALL_QIDS: tuple[str, ...] = tuple(sorted(QID_BY_WVS.values()))

_REQUIRED_KEYS = ("wvs_id", "dimension", "domain", "scenario_text", "options", "mapping")
_OPTIONAL_KEYS = ("id", "qid")


@dataclass(frozen=True)
class Scenario:
    """A situational dilemma with one option per pole of its axis."""

    id: str
    wvs_id: str
    domain: Domain
    scenario_text: str
    option_low: str
    option_high: str

    def __post_init__(self) -> None:
        if self.wvs_id not in WVS_BY_ID:
            raise UnknownWvsId(f"unknown wvs_id {self.wvs_id!r}")
        if not self.option_low or not self.option_high:
            raise DatasetParseError(f"scenario {self.id}: options must be non-empty")
        if self.option_low == self.option_high:
            raise DatasetParseError(f"scenario {self.id}: options must differ")

    @property
    def qid(self) -> str:
        return QID_BY_WVS[self.wvs_id]

    @property
    def axis(self) -> Axis:
        return WVS_BY_ID[self.wvs_id].axis


@dataclass(frozen=True)
class LabeledScenario:
    scenario: Scenario
    key: LabelKey
    seed_trace: int

    @property
    def option_a(self) -> str:
        s = self.scenario
        return s.option_high if self.key is LabelKey.HIGH_IS_A else s.option_low

    @property
    def option_b(self) -> str:
        s = self.scenario
        return s.option_low if self.key is LabelKey.HIGH_IS_A else s.option_high


@dataclass(frozen=True)
class DatasetSplit:
    optimization: list[Scenario]
    evaluation: list[Scenario]


@dataclass
class ValidationReport:
    total: int
    per_domain: dict[str, int]
    per_qid: dict[str, int]
    per_cell: dict[str, int]
    passed: bool
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "per_domain": self.per_domain,
            "per_qid": self.per_qid,
            "per_cell": self.per_cell,
            "passed": self.passed,
            "failures": self.failures,
        }


@dataclass(frozen=True)
class GenerationConfig:
    wvs_ids: tuple[str, ...] = tuple(item.wvs_id for item in WVS_ITEMS)
    domains: tuple[Domain, ...] = (Domain.WORKPLACE, Domain.FAMILY, Domain.LEGAL)
    per_combination: int = 2


def content_id(wvs_id: str, domain: str, scenario_text: str) -> str:
    """Default id for entries without one: sha256 over the identifying fields."""

    digest = hashlib.sha256(f"{wvs_id}\x1f{domain}\x1f{scenario_text}".encode("utf-8"))
    return digest.hexdigest()[:16]


def _axis_from_dimension(value: object) -> Axis:
    text = str(value).strip().lower()
    if text == "dimension 1" or "secular" in text or "traditional" in text:
        return Axis.Y
    if text == "dimension 2" or "survival" in text or "self-expression" in text:
        return Axis.X
    raise DatasetParseError(f"unrecognised dimension {value!r}")


def _normalise_letter(value: object) -> str:
    text = str(value).strip().upper()
    if text.startswith("OPTION"):
        text = text[len("OPTION") :].strip()
    return text


def _scenario_from_entry(entry: object, index: int) -> Scenario:
    if not isinstance(entry, dict):
        raise DatasetParseError(f"entry {index} is not an object")
    missing = [key for key in _REQUIRED_KEYS if key not in entry]
    if missing:
        raise DatasetParseError(f"entry {index} lacks keys {missing}")
    unknown = sorted(set(entry) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS))
    if unknown:
        message = f"entry {index}: ignoring unknown keys {unknown}"
        logger.warning(message)
        warnings.warn(message)

    wvs_id = str(entry["wvs_id"]).strip()
    item = WVS_BY_ID.get(wvs_id)
    if item is None:
        raise UnknownWvsId(f"entry {index}: unknown wvs_id {wvs_id!r}")

    axis = _axis_from_dimension(entry["dimension"])
    if axis is not item.axis:
        raise AxisMismatch(
            f"entry {index}: dimension {entry['dimension']!r} contradicts {wvs_id} ({item.qid})"
        )
    if "qid" in entry and entry["qid"] != item.qid:
        raise DatasetParseError(f"entry {index}: qid {entry['qid']!r} != {item.qid}")

    try:
        domain = Domain(str(entry["domain"]).strip().lower())
    except ValueError:
        raise DatasetParseError(f"entry {index}: unknown domain {entry['domain']!r}")

    options = entry["options"]
    if not isinstance(options, dict) or len(options) != 2:
        raise DatasetParseError(f"entry {index}: options must hold exactly two letters")
    options = {_normalise_letter(k): str(v) for k, v in options.items()}
    if len(options) != 2:
        raise DatasetParseError(f"entry {index}: option letters collide once normalised")

    mapping = entry["mapping"]
    if not isinstance(mapping, dict) or axis.mapping_key not in mapping:
        raise InvalidMapping(f"entry {index}: mapping lacks {axis.mapping_key!r}")
    high_letter = _normalise_letter(mapping[axis.mapping_key])
    if high_letter not in options:
        raise InvalidMapping(
            f"entry {index}: mapping names option {high_letter!r}, options are {sorted(options)}"
        )
    (low_letter,) = [letter for letter in options if letter != high_letter]

    scenario_text = str(entry["scenario_text"])
    scenario_id = entry.get("id")
    if scenario_id is None:
        scenario_id = content_id(wvs_id, domain.value, scenario_text)

    return Scenario(
        id=str(scenario_id),
        wvs_id=wvs_id,
        domain=domain,
        scenario_text=scenario_text,
        option_low=options[low_letter],
        option_high=options[high_letter],
    )


def parse_dataset(entries: object) -> list[Scenario]:
    if not isinstance(entries, list):
        raise DatasetParseError("dataset must be a JSON array")
    scenarios = [_scenario_from_entry(entry, i) for i, entry in enumerate(entries)]
    seen: set[str] = set()
    for scenario in scenarios:
        if scenario.id in seen:
            raise DuplicateScenarioId(f"duplicate scenario id {scenario.id!r}")
        seen.add(scenario.id)
    return scenarios


def load_dataset(path: str | Path) -> list[Scenario]:
    """Read a dataset file into validated :class:`Scenario` objects."""

    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path} is not valid JSON: {exc}") from exc
    scenarios = parse_dataset(raw)
    logger.info("loaded %d scenarios from %s", len(scenarios), path)
    return scenarios


def scenario_to_entry(scenario: Scenario) -> dict:
    axis = scenario.axis
    return {
        "id": scenario.id,
        "wvs_id": scenario.wvs_id,
        "qid": scenario.qid,
        "dimension": axis.dimension_label,
        "domain": scenario.domain.value,
        "scenario_text": scenario.scenario_text,
        "options": {"A": scenario.option_low, "B": scenario.option_high},
        "mapping": {axis.mapping_key: "B"},
    }


def dump_dataset(scenarios: Iterable[Scenario], path: str | Path) -> Path:
    return write_json(path, [scenario_to_entry(s) for s in scenarios])


def _cell_key(qid: str, domain: Domain) -> str:
    return f"{qid}|{domain.value}"


def validate(
    dataset: Sequence[Scenario],
    expected_total: int = 600,
    expected_per_domain: int = 200,
    expected_per_qid: int = 60,
    expected_per_cell: int = 20,
) -> ValidationReport:
    """Count the dataset layout against the canonical balanced design."""

    per_domain = {d.value: 0 for d in Domain}
    per_qid = {qid: 0 for qid in ALL_QIDS}
    per_cell = {_cell_key(q, d): 0 for q in ALL_QIDS for d in Domain}
    for scenario in dataset:
        per_domain[scenario.domain.value] += 1
        per_qid[scenario.qid] += 1
        per_cell[_cell_key(scenario.qid, scenario.domain)] += 1

    failures: list[str] = []
    if len(dataset) != expected_total:
        failures.append(f"total {len(dataset)} != {expected_total}")
    failures += [
        f"domain {k}: {v} != {expected_per_domain}"
        for k, v in per_domain.items()
        if v != expected_per_domain
    ]
    failures += [
        f"qid {k}: {v} != {expected_per_qid}"
        for k, v in per_qid.items()
        if v != expected_per_qid
    ]
    failures += [
        f"cell {k}: {v} != {expected_per_cell}"
        for k, v in per_cell.items()
        if v != expected_per_cell
    ]
    return ValidationReport(
        total=len(dataset),
        per_domain=per_domain,
        per_qid=per_qid,
        per_cell=per_cell,
        passed=not failures,
        failures=failures,
    )


def split(dataset: Sequence[Scenario], global_seed: int, ratio: float = 0.5) -> DatasetSplit:
    """Stratified split over (qid, domain) cells.

    Each cell is sorted by id, permuted by a generator seeded from
    ``(global_seed, qid, domain)``, and its first ``ceil(ratio * size)``
    members go to the optimization half.
    """

    if not 0.0 < ratio < 1.0:
        raise InvalidConfig(f"split ratio must lie in (0, 1), got {ratio}")
    if not dataset:
        raise EmptyDataset("cannot split an empty dataset")

    cells: dict[tuple[str, str], list[Scenario]] = {}
    for scenario in dataset:
        cells.setdefault((scenario.qid, scenario.domain.value), []).append(scenario)

    optimization: list[Scenario] = []
    evaluation: list[Scenario] = []
    for (qid, domain), members in sorted(cells.items()):
        members = sorted(members, key=lambda s: s.id)
        rng = np.random.default_rng(derive_seed(global_seed, qid, domain))
        order = rng.permutation(len(members))
        # rounding guards against 0.3 * 10 == 3.0000000000000004
        n_opt = math.ceil(round(ratio * len(members), 9))
        optimization.extend(members[i] for i in order[:n_opt])
        evaluation.extend(members[i] for i in order[n_opt:])
    return DatasetSplit(optimization=optimization, evaluation=evaluation)


def assign_label(scenario: Scenario, global_seed: int) -> LabeledScenario:
    """Positional randomisation key, a pure function of (seed, id)."""

    trace = hash64(global_seed, scenario.id)
    key = LabelKey.HIGH_IS_A if trace & 1 == 0 else LabelKey.HIGH_IS_B
    return LabeledScenario(scenario=scenario, key=key, seed_trace=trace)


def label_dataset(dataset: Iterable[Scenario], global_seed: int) -> list[LabeledScenario]:
    return [assign_label(s, global_seed) for s in dataset]


_PROMPT_HEAD = (
    "You are a social science research assistant specializing in the World Values Survey (WVS) "
    "framework. Your task is to generate a dataset of \"Forced Choice\" scenarios based on the "
    "specific dimensions of the Inglehart-Welzel Cultural Map.\n"
)

_PROMPT_TAIL = """### Scenario Requirements:
1. Each scenario must present a realistic conflict ({domains}) where a character must choose between the Low Value and the High Value.
2. Provide exactly two options (A and B). 
3. Randomize whether Option A or B represents the Low or High Value.

### Output Format:
Return ONLY a valid JSON list of objects. Use this structure:
[
  {{
    "wvs_id": "ID_HERE",
    "dimension": "...",
    "domain": "...",
    "scenario_text": "...",
    "options": {{"A": "...", "B": "..."}},
    "mapping": {{"Dimension 1": "A or B", "Dimension 2": "A or B"}}
  }}
]"""


def emit_generation_prompt(config: GenerationConfig | None = None) -> str:
    """Prompt text that asks a generator model to write scenarios for ``config``."""

    config = config or GenerationConfig()
    if not config.wvs_ids:
        raise EmptyConfig("generation prompt needs at least one WVS id")
    if not config.domains:
        raise EmptyConfig("generation prompt needs at least one domain")
    for wvs_id in config.wvs_ids:
        if wvs_id not in WVS_BY_ID:
            raise UnknownWvsId(f"unknown wvs_id {wvs_id!r}")

    domains = ", ".join(d.value for d in config.domains)
    conflict_domains = ", ".join(d.value for d in config.domains[:-1])
    if len(config.domains) > 1:
        conflict_domains += f", or {config.domains[-1].value}"
    else:
        conflict_domains = config.domains[0].value

    lines = [
        _PROMPT_HEAD,
        f"Task: Generate {config.per_combination} realistic \"Forced Choice\" scenarios for each "
        f"combination of the following {len(config.wvs_ids)} WVS IDs and "
        f"{len(config.domains)} Domains ({domains}).\n",
    ]
    for number, axis in ((1, Axis.Y), (2, Axis.X)):
        items = [WVS_BY_ID[w] for w in config.wvs_ids if WVS_BY_ID[w].axis is axis]
        if not items:
            continue
        lines.append(f"### Dimension {number}: {axis.dimension_label}")
        lines.extend(
            f"- {item.wvs_id}: {item.title} (Low: {item.low}; High: {item.high})" for item in items
        )
        lines.append("")
    lines.append(_PROMPT_TAIL.format(domains=conflict_domains))
    return "\n".join(lines)


__all__ = [
    "WvsItem",
    "WVS_ITEMS",
    "WVS_BY_ID",
    "QID_BY_WVS",
    "ALL_QIDS",
    "Scenario",
    "LabeledScenario",
    "DatasetSplit",
    "ValidationReport",
    "GenerationConfig",
    "content_id",
    "parse_dataset",
    "load_dataset",
    "scenario_to_entry",
    "dump_dataset",
    "validate",
    "split",
    "assign_label",
    "label_dataset",
    "emit_generation_prompt",
]
