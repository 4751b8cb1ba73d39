"""Situational prompts, option-letter probabilities and question scores.

A probe renders one labelled scenario as::

    {scenario_text}
    Option A: {a}
    Option B: {b}
    What will you do (A/B)?

with an optional persona preamble and a blank line in front, reads the
next-token logits of the letters ``A`` and ``B`` and converts them into the
probability of the option that carries the positive pole.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .dataset import LabeledScenario, Scenario
from .enums import Domain, GroupBy, LabelKey, PersonaKind
from .errors import (
    CultureSteerError,
    DanglingScenarioId,
    DataError,
    InvalidConfig,
    MissingRange,
    NonFiniteLogit,
    ProbeFailure,
)
from .persona import PersonaProfile
from .runtime import InterventionSpec, ModelBackend, Session
from .utils import parallel_map

logger = logging.getLogger(__name__)

QUESTION_LINE = "What will you do (A/B)?"


# ----------------------------------------------------------------------
# Types
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ProbeResult:
    scenario_id: str
    key: LabelKey
    logit_a: float
    logit_b: float
    p_high: float
    persona_kind: PersonaKind = PersonaKind.NONE
    country: str | None = None

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "key": self.key.value,
            "logit_a": self.logit_a,
            "logit_b": self.logit_b,
            "p_high": self.p_high,
            "persona_kind": self.persona_kind.value,
            "country": self.country,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProbeResult":
        return cls(
            scenario_id=str(data["scenario_id"]),
            key=LabelKey(data["key"]),
            logit_a=float(data["logit_a"]),
            logit_b=float(data["logit_b"]),
            p_high=float(data["p_high"]),
            persona_kind=PersonaKind(data.get("persona_kind", "none")),
            country=data.get("country"),
        )


@dataclass(frozen=True)
class QuestionScore:
    qid: str
    domain: Domain | None
    mean_p: float
    n: int
    rescaled: float | None = None


@dataclass(frozen=True)
class WvsRange:
    min: float
    max: float
    high_pole_at_max: bool = True

    def __post_init__(self) -> None:
        if not self.min < self.max:
            raise InvalidConfig(f"WVS range needs min < max, got ({self.min}, {self.max})")


DEFAULT_WVS_RANGES: dict[str, WvsRange] = {
    "Y01": WvsRange(1.0, 10.0, False),
    "Y02": WvsRange(0.0, 1.0, True),
    "Y03": WvsRange(1.0, 10.0, True),
    "Y04": WvsRange(1.0, 4.0, True),
    "Y05": WvsRange(1.0, 4.0, True),
    "X01": WvsRange(0.0, 1.0, True),
    "X02": WvsRange(1.0, 4.0, False),
    "X03": WvsRange(1.0, 10.0, True),
    "X04": WvsRange(0.0, 1.0, True),
    "X05": WvsRange(0.0, 1.0, True),
}


@dataclass(frozen=True)
class WvsRangeConfig:
    ranges: Mapping[str, WvsRange] = field(default_factory=lambda: dict(DEFAULT_WVS_RANGES))

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "WvsRangeConfig":
        """Defaults updated with ``{qid: [min, max, high_pole_at_max]}`` or mapping entries."""

        ranges = dict(DEFAULT_WVS_RANGES)
        for qid, value in data.items():
            if isinstance(value, Mapping):
                ranges[str(qid)] = WvsRange(
                    float(value["min"]), float(value["max"]), bool(value.get("high_pole_at_max", True))
                )
            elif isinstance(value, (list, tuple)) and len(value) in (2, 3):
                high = bool(value[2]) if len(value) == 3 else True
                ranges[str(qid)] = WvsRange(float(value[0]), float(value[1]), high)
            else:
                raise InvalidConfig(f"WVS range for {qid}: expected [min, max, high_pole_at_max]")
        return cls(ranges)

    def to_dict(self) -> dict:
        return {
            qid: {"min": r.min, "max": r.max, "high_pole_at_max": r.high_pole_at_max}
            for qid, r in sorted(self.ranges.items())
        }


# ----------------------------------------------------------------------
# Probing
# ----------------------------------------------------------------------
def render_prompt(labeled: LabeledScenario, persona: PersonaProfile | None = None) -> str:
    body = "\n".join(
        (
            labeled.scenario.scenario_text,
            f"Option A: {labeled.option_a}",
            f"Option B: {labeled.option_b}",
            QUESTION_LINE,
        )
    )
    if persona is not None and persona.text:
        return f"{persona.text}\n\n{body}"
    return body


def compute_p(logit_a: float, logit_b: float, key: LabelKey) -> float:
    """Softmax weight of the letter carrying the positive pole."""

    if not (math.isfinite(logit_a) and math.isfinite(logit_b)):
        raise NonFiniteLogit(f"option logits must be finite, got ({logit_a}, {logit_b})")
    z_pos, z_neg = (logit_a, logit_b) if key is LabelKey.HIGH_IS_A else (logit_b, logit_a)
    top = max(z_pos, z_neg)
    e_pos = math.exp(z_pos - top)
    e_neg = math.exp(z_neg - top)
    return e_pos / (e_pos + e_neg)


def probe(
    model: ModelBackend,
    session: Session,
    labeled: LabeledScenario,
    persona: PersonaProfile | None = None,
) -> ProbeResult:
    """Forward the rendered prompt once and score the two option letters."""

    scenario_id = labeled.scenario.id
    try:
        prompt = render_prompt(labeled, persona)
        logger.debug("prompt %s: %r", scenario_id, prompt)
        logits = session.forward_last_logits(model.encode(prompt))
        logit_a = float(logits[model.letter_token("A")])
        logit_b = float(logits[model.letter_token("B")])
        p_high = compute_p(logit_a, logit_b, labeled.key)
    except ProbeFailure:
        raise
    except CultureSteerError as exc:
        raise ProbeFailure(scenario_id, exc) from exc
    return ProbeResult(
        scenario_id=scenario_id,
        key=labeled.key,
        logit_a=logit_a,
        logit_b=logit_b,
        p_high=p_high,
        persona_kind=persona.kind if persona is not None else PersonaKind.NONE,
        country=persona.country if persona is not None else None,
    )


def probe_many(
    model: ModelBackend,
    labeled: Sequence[LabeledScenario],
    persona: PersonaProfile | None = None,
    jobs: int = 1,
    interventions: InterventionSpec | None = None,
    progress: bool = False,
    desc: str = "probe",
) -> list[ProbeResult]:
    """Probe every scenario in a fresh session; results follow input order."""

    def _one(item: LabeledScenario) -> ProbeResult:
        return probe(model, model.open_session(interventions), item, persona)

    return parallel_map(_one, list(labeled), jobs=jobs, progress=progress, desc=desc)


# ----------------------------------------------------------------------
# Result files
# ----------------------------------------------------------------------
def write_results(results: Iterable[ProbeResult], path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    return out


def read_results(path: str | Path) -> list[ProbeResult]:
    results: list[ProbeResult] = []
    with Path(path).open(encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                results.append(ProbeResult.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{number}: bad probe result: {exc}") from exc
    return results


def write_prompts(
    labeled: Iterable[LabeledScenario], persona: PersonaProfile | None, path: str | Path
) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for item in labeled:
            record = {"scenario_id": item.scenario.id, "prompt": render_prompt(item, persona)}
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    return out


def probe_to_file(
    model: ModelBackend,
    labeled: Sequence[LabeledScenario],
    path: str | Path,
    persona: PersonaProfile | None = None,
    jobs: int = 1,
    interventions: InterventionSpec | None = None,
    resume: bool = False,
    progress: bool = False,
) -> list[ProbeResult]:
    """Probe into a JSON-lines file; with ``resume`` ids already in the file are kept."""

    out = Path(path)
    done: dict[str, ProbeResult] = {}
    if resume and out.exists():
        done = {r.scenario_id: r for r in read_results(out)}
        logger.info("resuming %s: %d of %d scenarios already probed", out.name, len(done), len(labeled))
    pending = [item for item in labeled if item.scenario.id not in done]
    fresh = probe_many(model, pending, persona, jobs, interventions, progress, desc=out.stem)
    done.update((r.scenario_id, r) for r in fresh)
    results = [done[item.scenario.id] for item in labeled]
    write_results(results, out)
    return results


# ----------------------------------------------------------------------
# Aggregation
# ----------------------------------------------------------------------
def aggregate(
    results: Iterable[ProbeResult],
    dataset: Iterable[Scenario],
    group_by: GroupBy = GroupBy.QID,
) -> list[QuestionScore]:
    """Mean ``p_high`` per question, or per question and domain."""

    by_id = {s.id: s for s in dataset}
    rows = []
    for result in sorted(results, key=lambda r: (r.scenario_id, r.p_high)):
        scenario = by_id.get(result.scenario_id)
        if scenario is None:
            raise DanglingScenarioId(f"result for unknown scenario {result.scenario_id!r}")
        rows.append({"qid": scenario.qid, "domain": scenario.domain.value, "p_high": result.p_high})
    if not rows:
        return []

    keys = ["qid"] if group_by is GroupBy.QID else ["qid", "domain"]
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(keys, sort=True)["p_high"].agg(mean_p="mean", n="count").reset_index()
    return [
        QuestionScore(
            qid=str(row["qid"]),
            domain=Domain(row["domain"]) if group_by is GroupBy.QID_DOMAIN else None,
            mean_p=float(row["mean_p"]),
            n=int(row["n"]),
        )
        for row in grouped.to_dict("records")
    ]


def rescale(score: QuestionScore, config: WvsRangeConfig) -> QuestionScore:
    """Map ``mean_p`` onto the question's survey scale."""

    bounds = config.ranges.get(score.qid)
    if bounds is None:
        raise MissingRange(f"no WVS range configured for {score.qid}")
    t = score.mean_p if bounds.high_pole_at_max else 1.0 - score.mean_p
    return replace(score, rescaled=bounds.min + t * (bounds.max - bounds.min))


def scores_frame(scores: Iterable[QuestionScore]) -> pd.DataFrame:
    rows = [
        {
            "qid": s.qid,
            "domain": s.domain.value if s.domain is not None else "",
            "mean_p": s.mean_p,
            "n": s.n,
            "rescaled": s.rescaled,
        }
        for s in scores
    ]
    return pd.DataFrame(rows, columns=["qid", "domain", "mean_p", "n", "rescaled"])


__all__ = [
    "QUESTION_LINE",
    "ProbeResult",
    "QuestionScore",
    "WvsRange",
    "WvsRangeConfig",
    "DEFAULT_WVS_RANGES",
    "render_prompt",
    "compute_p",
    "probe",
    "probe_many",
    "write_results",
    "read_results",
    "write_prompts",
    "probe_to_file",
    "aggregate",
    "rescale",
    "scores_frame",
]
