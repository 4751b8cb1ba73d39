"""Cultural-map coordinates and the analyses built on them.

Anchor file (``anchors.json``)::

    {"Denmark": {"x": 2.1, "y": 1.9}, "India": {"x": -0.3, "y": -0.4}, ...}
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from .dataset import WVS_ITEMS, LabeledScenario
from .enums import Axis, Domain, GroupBy
from .errors import (
    AxisMismatch,
    DataError,
    DegenerateVariance,
    EmptyAxis,
    EmptyContinuation,
    EmptyPrompts,
    InvalidConfig,
    MissingDomain,
    UnknownCountry,
    ZeroIntendedShift,
)
from .persona import PersonaProfile
from .probing import ProbeResult, QuestionScore, aggregate, probe_many
from .runtime import (
    DEFAULT_GEN_SEED,
    DEFAULT_PPL_WINDOW,
    DEFAULT_TEMPERATURE,
    InterventionSpec,
    ModelBackend,
)
from .steering import ALPHA_CAP, SteeringVectorSet, steered_probe
from .utils import parallel_map, read_json

logger = logging.getLogger(__name__)

AXIS_BY_QID: dict[str, Axis] = {item.qid: item.axis for item in WVS_ITEMS}


# ----------------------------------------------------------------------
# Projection
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ProjectionConfig:
    """Affine map from the [0, 1] axis mean onto map units, per axis."""

    offset_x: float = 0.0
    scale_x: float = 2.5
    offset_y: float = 0.0
    scale_y: float = 2.5
    loadings: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("offset_x", "scale_x", "offset_y", "scale_y"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidConfig(f"projection {name} must be finite")
        if self.scale_x == 0 or self.scale_y == 0:
            raise InvalidConfig("projection scales must be non-zero")
        bad = {q: w for q, w in self.loadings.items() if not w > 0}
        if bad:
            raise InvalidConfig(f"projection loadings must be positive: {bad}")

    def offset(self, axis: Axis) -> float:
        return self.offset_x if axis is Axis.X else self.offset_y

    def scale(self, axis: Axis) -> float:
        return self.scale_x if axis is Axis.X else self.scale_y

    def to_dict(self) -> dict:
        return {
            "offset_x": self.offset_x,
            "scale_x": self.scale_x,
            "offset_y": self.offset_y,
            "scale_y": self.scale_y,
            "loadings": dict(sorted(self.loadings.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProjectionConfig":
        unknown = set(data) - {"offset_x", "scale_x", "offset_y", "scale_y", "loadings"}
        if unknown:
            raise InvalidConfig(f"unknown projection keys {sorted(unknown)}")
        return cls(
            offset_x=float(data.get("offset_x", 0.0)),
            scale_x=float(data.get("scale_x", 2.5)),
            offset_y=float(data.get("offset_y", 0.0)),
            scale_y=float(data.get("scale_y", 2.5)),
            loadings={str(k): float(v) for k, v in (data.get("loadings") or {}).items()},
        )


@dataclass(frozen=True)
class CulturalCoordinate:
    x: float
    y: float
    per_question: Mapping[str, float]
    label: str = ""
    counts: Mapping[str, int] = field(default_factory=dict)
    raw: Mapping[str, float] = field(default_factory=dict)

    def along(self, axis: Axis) -> float:
        return self.x if axis is Axis.X else self.y

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "label": self.label,
            "per_question": dict(sorted(self.per_question.items())),
            "counts": dict(sorted(self.counts.items())),
            "raw": dict(sorted(self.raw.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CulturalCoordinate":
        try:
            return cls(
                x=float(data["x"]),
                y=float(data["y"]),
                per_question={str(k): float(v) for k, v in (data.get("per_question") or {}).items()},
                label=str(data.get("label", "")),
                counts={str(k): int(v) for k, v in (data.get("counts") or {}).items()},
                raw={str(k): float(v) for k, v in (data.get("raw") or {}).items()},
            )
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed coordinate record: {exc!r}") from exc


def _per_question(scores: Iterable[QuestionScore]) -> dict[str, float]:
    """n-weighted mean per qid, so per-domain scores collapse to per-question ones."""

    totals: dict[str, tuple[float, int]] = {}
    for score in scores:
        weighted, count = totals.get(score.qid, (0.0, 0))
        totals[score.qid] = (weighted + score.mean_p * score.n, count + score.n)
    return {qid: weighted / count for qid, (weighted, count) in sorted(totals.items()) if count > 0}


def project(
    scores: Iterable[QuestionScore],
    calibration: ProjectionConfig | None = None,
    label: str = "",
) -> CulturalCoordinate:
    """Place question scores on the two-axis map."""

    calibration = calibration or ProjectionConfig()
    per_question = _per_question(scores)
    unknown = sorted(set(per_question) - set(AXIS_BY_QID))
    if unknown:
        raise DataError(f"scores for unknown questions {unknown}")

    coords: dict[Axis, float] = {}
    counts: dict[str, int] = {}
    raw: dict[str, float] = {}
    for axis in Axis:
        qids = [q for q in per_question if AXIS_BY_QID[q] is axis]
        if not qids:
            raise EmptyAxis(f"no question scores on axis {axis.value}")
        weights = [calibration.loadings.get(q, 1.0) for q in qids]
        axis_raw = sum(w * per_question[q] for w, q in zip(weights, qids)) / sum(weights)
        coords[axis] = calibration.offset(axis) + calibration.scale(axis) * (2.0 * axis_raw - 1.0)
        counts[axis.value] = len(qids)
        raw[axis.value] = axis_raw
    return CulturalCoordinate(
        x=coords[Axis.X],
        y=coords[Axis.Y],
        per_question=per_question,
        label=label,
        counts=counts,
        raw=raw,
    )


def coordinate_from_results(
    results: Sequence[ProbeResult],
    probe_set: Sequence[LabeledScenario],
    calibration: ProjectionConfig | None = None,
    label: str = "",
) -> CulturalCoordinate:
    scores = aggregate(results, [item.scenario for item in probe_set], GroupBy.QID)
    return project(scores, calibration, label)


# ----------------------------------------------------------------------
# Anchors, distances and calibration
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class HumanAnchors:
    coords: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for country, (x, y) in self.coords.items():
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError(f"anchor {country} has non-finite coordinates")

    def __getitem__(self, country: str) -> tuple[float, float]:
        if country not in self.coords:
            raise UnknownCountry(f"no anchor for {country!r}")
        return self.coords[country]


def load_anchors(path: str | Path) -> HumanAnchors:
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: anchors must be an object keyed by country")
    try:
        coords = {str(c): (float(v["x"]), float(v["y"])) for c, v in raw.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: every anchor needs numeric x and y: {exc}") from exc
    return HumanAnchors(coords)


def distance(model_coord: CulturalCoordinate, anchors: HumanAnchors, country: str) -> float:
    hx, hy = anchors[country]
    return math.hypot(model_coord.x - hx, model_coord.y - hy)


def distance_table(
    coords: Sequence[CulturalCoordinate],
    anchors: HumanAnchors,
    countries: Sequence[str] | None = None,
) -> pd.DataFrame:
    """One row per (coordinate, country) pair."""

    rows = []
    for coord in coords:
        for country in countries if countries is not None else sorted(anchors.coords):
            hx, hy = anchors[country]
            rows.append(
                {
                    "label": coord.label,
                    "country": country,
                    "x": coord.x,
                    "y": coord.y,
                    "anchor_x": hx,
                    "anchor_y": hy,
                    "distance": distance(coord, anchors, country),
                }
            )
    return pd.DataFrame(rows, columns=["label", "country", "x", "y", "anchor_x", "anchor_y", "distance"])


def calibrate_projection(
    raw_points: Mapping[str, tuple[float, float]],
    anchors: HumanAnchors,
    loadings: Mapping[str, float] | None = None,
) -> ProjectionConfig:
    """Least-squares offset and scale per axis from runs anchored to known countries.

    ``raw_points`` maps a country to the (x, y) axis means in [0, 1] of a run
    made with that country's persona (``CulturalCoordinate.raw``).
    """

    countries = sorted(raw_points)
    if len(countries) < 2:
        raise DegenerateVariance("calibration needs at least two anchored runs")
    fitted: dict[Axis, tuple[float, float]] = {}
    for index, axis in enumerate((Axis.X, Axis.Y)):
        u = np.array([2.0 * raw_points[c][index] - 1.0 for c in countries])
        target = np.array([anchors[c][index] for c in countries])
        if np.ptp(u) == 0:
            raise DegenerateVariance(f"calibration runs do not vary along axis {axis.value}")
        scale, offset = np.polyfit(u, target, 1)
        fitted[axis] = (float(offset), float(scale))
    return ProjectionConfig(
        offset_x=fitted[Axis.X][0],
        scale_x=fitted[Axis.X][1],
        offset_y=fitted[Axis.Y][0],
        scale_y=fitted[Axis.Y][1],
        loadings=dict(loadings or {}),
    )


def axis_correlation(anchors: HumanAnchors) -> float:
    """Pearson r between the x and y anchor coordinates."""

    if len(anchors.coords) < 2:
        raise DegenerateVariance("correlation needs at least two countries")
    countries = sorted(anchors.coords)
    xs = np.array([anchors.coords[c][0] for c in countries])
    ys = np.array([anchors.coords[c][1] for c in countries])
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise DegenerateVariance("an anchor axis has zero variance")
    r = float(pearsonr(xs, ys)[0])
    return max(-1.0, min(1.0, r))


# ----------------------------------------------------------------------
# Entanglement
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class EntanglementRecord:
    target_axis: Axis
    delta_intended: float
    delta_unintended: float
    e: float

    def to_dict(self) -> dict:
        return {
            "target_axis": self.target_axis.value,
            "delta_intended": self.delta_intended,
            "delta_unintended": self.delta_unintended,
            "e": self.e,
        }


def entanglement(
    baseline: CulturalCoordinate, steered: CulturalCoordinate, target_axis: Axis
) -> EntanglementRecord:
    """Unintended over intended shift for a single-axis intervention."""

    intended = steered.along(target_axis) - baseline.along(target_axis)
    unintended = steered.along(target_axis.other) - baseline.along(target_axis.other)
    if intended == 0:
        raise ZeroIntendedShift(f"steering produced no shift along axis {target_axis.value}")
    return EntanglementRecord(target_axis, intended, unintended, abs(unintended) / abs(intended))


# ----------------------------------------------------------------------
# Cross-domain shifts
# ----------------------------------------------------------------------
DOMAIN_ORDER: tuple[Domain, ...] = (Domain.FAMILY, Domain.WORKPLACE, Domain.LEGAL)


@dataclass(frozen=True)
class DomainShiftMatrix:
    axis_steered: Axis
    alpha: float
    cells: Mapping[tuple[Domain, Domain], tuple[float, float]]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "source": source.value,
                "target": target.value,
                "dx": self.cells[(source, target)][0],
                "dy": self.cells[(source, target)][1],
            }
            for source in DOMAIN_ORDER
            for target in DOMAIN_ORDER
        ]
        return pd.DataFrame(rows, columns=["source", "target", "dx", "dy"])

    def to_dict(self) -> dict:
        return {
            "axis_steered": self.axis_steered.value,
            "alpha": self.alpha,
            "cells": self.to_frame().to_dict("records"),
        }


def domain_matrix(
    model: ModelBackend,
    runs: Mapping[Domain, SteeringVectorSet],
    probe_sets: Mapping[Domain, Sequence[LabeledScenario]],
    alpha: float,
    axis: Axis,
    layers: Sequence[int],
    calibration: ProjectionConfig | None = None,
    persona: PersonaProfile | None = None,
    force: bool = False,
    alpha_cap: float = ALPHA_CAP,
    jobs: int = 1,
) -> DomainShiftMatrix:
    """Shift on target-domain probes when steering with source-domain vectors."""

    for side, mapping in (("source", runs), ("target", probe_sets)):
        missing = [d.value for d in DOMAIN_ORDER if d not in mapping]
        if missing:
            raise MissingDomain(f"{side} domains missing: {missing}")
    for source, vectors in runs.items():
        if vectors.axis is not axis:
            raise AxisMismatch(f"{source.value} vectors steer axis {vectors.axis.value}, not {axis.value}")

    baselines = {
        target: coordinate_from_results(
            probe_many(model, probe_sets[target], persona, jobs), probe_sets[target], calibration
        )
        for target in DOMAIN_ORDER
    }
    cells: dict[tuple[Domain, Domain], tuple[float, float]] = {}
    for source in DOMAIN_ORDER:
        for target in DOMAIN_ORDER:
            results = steered_probe(
                model, runs[source], layers, alpha, probe_sets[target], persona, force, alpha_cap, jobs
            )
            moved = coordinate_from_results(results, probe_sets[target], calibration)
            base = baselines[target]
            cells[(source, target)] = (moved.x - base.x, moved.y - base.y)
            logger.debug("domain shift %s -> %s: %s", source.value, target.value, cells[(source, target)])
    return DomainShiftMatrix(axis, float(alpha), cells)


# ----------------------------------------------------------------------
# Perplexity
# ----------------------------------------------------------------------
def perplexity_curve(
    model: ModelBackend,
    vectors: SteeringVectorSet,
    layers: Sequence[int],
    alphas: Sequence[float],
    prompts: Sequence[str],
    window: int = DEFAULT_PPL_WINDOW,
    temperature: float = DEFAULT_TEMPERATURE,
    gen_seed: int = DEFAULT_GEN_SEED,
    baseline_scored: bool = False,
    jobs: int = 1,
) -> list[tuple[float, float]]:
    """Mean perplexity of steered generations for each alpha.

    A prompt that ends before producing a token at any alpha is left out of
    every point, so the means stay comparable along the curve.
    """

    if not prompts:
        raise EmptyPrompts("perplexity curve needs at least one prompt")
    if not any(a == 0 for a in alphas):
        raise InvalidConfig("perplexity curve alphas must include 0")
    encoded = [model.encode(p) for p in prompts]

    def _row(alpha: float) -> list[float | None]:
        spec = InterventionSpec.from_vectors(vectors.vectors, layers, alpha)
        row: list[float | None] = []
        for tokens in encoded:
            session = model.open_session(spec)
            scorer = model.open_session() if baseline_scored else None
            try:
                row.append(session.perplexity(tokens, window, temperature, gen_seed, scorer))
            except EmptyContinuation:
                row.append(None)
        return row

    alphas = list(alphas)
    rows = parallel_map(_row, alphas, jobs=jobs, desc="perplexity")
    # every alpha averages over the same prompts
    for alpha, row in zip(alphas, rows):
        for index, value in enumerate(row):
            if value is None:
                message = f"prompt {index} produced no continuation at alpha {alpha}; dropped at every alpha"
                logger.warning(message)
                warnings.warn(message)
    kept = [i for i in range(len(encoded)) if all(row[i] is not None for row in rows)]
    if not kept:
        raise EmptyPrompts("no prompt produced a continuation at every alpha")
    return [(float(alpha), float(np.mean([row[i] for i in kept]))) for alpha, row in zip(alphas, rows)]


def curve_frame(curve: Iterable[tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(curve), columns=["alpha", "mean_ppl"])


__all__ = [
    "AXIS_BY_QID",
    "DOMAIN_ORDER",
    "ProjectionConfig",
    "CulturalCoordinate",
    "HumanAnchors",
    "EntanglementRecord",
    "DomainShiftMatrix",
    "project",
    "coordinate_from_results",
    "load_anchors",
    "distance",
    "distance_table",
    "calibrate_projection",
    "axis_correlation",
    "entanglement",
    "domain_matrix",
    "perplexity_curve",
    "curve_frame",
]
