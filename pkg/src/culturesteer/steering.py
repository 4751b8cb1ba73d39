"""Mean-difference steering vectors, per-layer search and steered probing."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import LabeledScenario, Scenario
from .enums import Axis
from .errors import (
    AlphaOverCap,
    AxisMismatch,
    DataError,
    EmptyAxis,
    EmptyDataset,
    InvalidConfig,
    MissingLayerVector,
    WeightsFileError,
    ZeroAlpha,
)
from .persona import PersonaProfile
from .probing import ProbeResult, probe_many
from .runtime import InterventionSpec, ModelBackend
from .utils import parallel_map
from .weights import read_tensors, write_tensors

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.2
ALPHA_CAP = 0.4
DEFAULT_TOP_K = 4
DEFAULT_THRESHOLD = 0.25

_LAYER_NAME = re.compile(r"^layer\.(\d+)$")


@dataclass(frozen=True)
class ContrastPair:
    scenario_id: str
    text_pos: str
    text_neg: str
    axis: Axis


@dataclass(frozen=True, eq=False)
class SteeringVectorSet:
    axis: Axis
    n: int
    vectors: Mapping[int, np.ndarray]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidConfig("a steering vector set needs n >= 1")

    @property
    def layers(self) -> list[int]:
        return sorted(self.vectors)

    @classmethod
    def zeros(cls, axis: Axis, n_layers: int, d_model: int, n: int = 1) -> "SteeringVectorSet":
        return cls(axis, n, {layer: np.zeros(d_model) for layer in range(n_layers)})


def build_pairs(scenarios: Iterable[Scenario], axis: Axis) -> list[ContrastPair]:
    return [
        ContrastPair(
            scenario_id=s.id,
            text_pos=f"{s.scenario_text} {s.option_high}",
            text_neg=f"{s.scenario_text} {s.option_low}",
            axis=axis,
        )
        for s in scenarios
        if s.axis is axis
    ]


def _final_token_residuals(model: ModelBackend, text: str) -> np.ndarray:
    session = model.open_session()
    for layer in range(model.n_layers):
        session.request_capture(layer, -1)
    session.forward_last_logits(model.encode(text))
    return np.stack([session.captured[(layer, -1)] for layer in range(model.n_layers)])


def extract_vectors(
    model: ModelBackend,
    pairs: Sequence[ContrastPair],
    jobs: int = 1,
    progress: bool = False,
) -> SteeringVectorSet:
    """Per-layer mean of (positive - negative) final-token residuals."""

    if not pairs:
        raise EmptyAxis("no contrast pairs to extract steering vectors from")
    axes = {pair.axis for pair in pairs}
    if len(axes) != 1:
        raise AxisMismatch("contrast pairs mix both axes")

    def _difference(pair: ContrastPair) -> np.ndarray:
        return _final_token_residuals(model, pair.text_pos) - _final_token_residuals(model, pair.text_neg)

    diffs = parallel_map(_difference, list(pairs), jobs=jobs, progress=progress, desc="extract")
    mean = np.mean(np.stack(diffs), axis=0)
    logger.info("extracted steering vectors from %d pairs over %d layers", len(pairs), mean.shape[0])
    return SteeringVectorSet(
        axis=axes.pop(),
        n=len(pairs),
        vectors={layer: mean[layer] for layer in range(mean.shape[0])},
    )


def save_vectors(vectors: SteeringVectorSet, path: str | Path) -> Path:
    tensors = {f"layer.{layer}": vectors.vectors[layer] for layer in vectors.layers}
    return write_tensors(path, tensors, {"axis": vectors.axis.value, "n": vectors.n})


def load_vectors(path: str | Path) -> SteeringVectorSet:
    tensors, metadata = read_tensors(path)
    if "axis" not in metadata or "n" not in metadata:
        raise WeightsFileError(f"{path} is not a steering vector file")
    vectors: dict[int, np.ndarray] = {}
    for name, array in tensors.items():
        match = _LAYER_NAME.match(name)
        if match is None:
            raise WeightsFileError(f"{path}: unexpected tensor {name!r}")
        vectors[int(match.group(1))] = array.astype(np.float64)
    return SteeringVectorSet(Axis(metadata["axis"]), int(metadata["n"]), vectors)


# ----------------------------------------------------------------------
# Layer search
# ----------------------------------------------------------------------
@dataclass
class LayerSearchReport:
    alpha: float
    cells: dict[tuple[int, str], float]
    layer_means: dict[int, float]
    selected: list[int]
    threshold: float = DEFAULT_THRESHOLD
    k: int = DEFAULT_TOP_K
    axis: Axis | None = None
    qids: list[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Full (layer, qid) differential grid."""

        rows = [
            {
                "layer": layer,
                "qid": qid,
                "differential": value,
                "meets_threshold": abs(value) >= self.threshold,
                "selected": layer in self.selected,
            }
            for (layer, qid), value in sorted(self.cells.items())
        ]
        return pd.DataFrame(rows, columns=["layer", "qid", "differential", "meets_threshold", "selected"])

    def summary(self) -> pd.DataFrame:
        """Largest-magnitude differential per question over the selected layers."""

        rows = []
        for qid in sorted({q for _, q in self.cells}):
            candidates = [(layer, self.cells[(layer, qid)]) for layer in self.selected if (layer, qid) in self.cells]
            if not candidates:
                continue
            layer, value = max(candidates, key=lambda c: (abs(c[1]), -c[0]))
            rows.append(
                {"qid": qid, "layer": layer, "differential": value, "meets_threshold": abs(value) >= self.threshold}
            )
        return pd.DataFrame(rows, columns=["qid", "layer", "differential", "meets_threshold"])

    def meeting_threshold(self) -> list[str]:
        return [str(row["qid"]) for row in self.summary().to_dict("records") if row["meets_threshold"]]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "axis": self.axis.value if self.axis is not None else None,
            "k": self.k,
            "threshold": self.threshold,
            "selected": list(self.selected),
            "layer_means": {str(layer): value for layer, value in sorted(self.layer_means.items())},
            "cells": [
                {"layer": layer, "qid": qid, "differential": value}
                for (layer, qid), value in sorted(self.cells.items())
            ],
            "meeting_threshold": self.meeting_threshold(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LayerSearchReport":
        try:
            cells = {(int(c["layer"]), str(c["qid"])): float(c["differential"]) for c in data["cells"]}
            return cls(
                alpha=float(data["alpha"]),
                cells=cells,
                layer_means={int(k): float(v) for k, v in data["layer_means"].items()},
                selected=[int(layer) for layer in data["selected"]],
                threshold=float(data.get("threshold", DEFAULT_THRESHOLD)),
                k=int(data.get("k", DEFAULT_TOP_K)),
                axis=Axis(data["axis"]) if data.get("axis") else None,
                qids=sorted({q for _, q in cells}),
            )
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed layer search report: {exc!r}") from exc


def _mean_differentials(
    probe_set: Sequence[LabeledScenario], baseline: Sequence[ProbeResult], steered: Sequence[ProbeResult]
) -> dict[str, float]:
    by_qid: dict[str, list[float]] = {}
    for item, base, moved in zip(probe_set, baseline, steered):
        by_qid.setdefault(item.scenario.qid, []).append(moved.p_high - base.p_high)
    return {qid: float(np.mean(values)) for qid, values in sorted(by_qid.items())}


def layer_search(
    model: ModelBackend,
    vectors: SteeringVectorSet,
    probe_set: Sequence[LabeledScenario],
    alpha: float,
    k: int = DEFAULT_TOP_K,
    threshold: float = DEFAULT_THRESHOLD,
    persona: PersonaProfile | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> LayerSearchReport:
    """Steer one layer at a time and rank layers by mean |differential|."""

    if alpha == 0:
        raise ZeroAlpha("layer search needs a non-zero alpha")
    if not probe_set:
        raise EmptyDataset("layer search needs at least one probe scenario")
    if k < 1:
        raise InvalidConfig("top-k must be >= 1")

    baseline = probe_many(model, probe_set, persona, jobs, progress=progress, desc="baseline")
    cells: dict[tuple[int, str], float] = {}
    layer_means: dict[int, float] = {}
    for layer in vectors.layers:
        spec = InterventionSpec.from_vectors(vectors.vectors, [layer], alpha)
        steered = probe_many(model, probe_set, persona, jobs, spec, progress, desc=f"layer {layer}")
        per_qid = _mean_differentials(probe_set, baseline, steered)
        for qid, value in per_qid.items():
            cells[(layer, qid)] = value
        layer_means[layer] = float(np.mean([abs(v) for v in per_qid.values()]))
        logger.debug("layer %d mean |differential| %.6f", layer, layer_means[layer])

    selected = sorted(layer_means, key=lambda layer: (-layer_means[layer], layer))[:k]
    logger.info("layer search at alpha %g selected layers %s", alpha, selected)
    return LayerSearchReport(
        alpha=float(alpha),
        cells=cells,
        layer_means=layer_means,
        selected=selected,
        threshold=threshold,
        k=k,
        axis=vectors.axis,
        qids=sorted({item.scenario.qid for item in probe_set}),
    )


def steering_spec(
    vectors: SteeringVectorSet,
    layers: Sequence[int],
    alpha: float,
    force: bool = False,
    alpha_cap: float = ALPHA_CAP,
) -> InterventionSpec:
    """Shared-alpha intervention over ``layers``."""

    if not layers:
        raise InvalidConfig("steering needs at least one layer")
    if abs(alpha) > alpha_cap and not force:
        raise AlphaOverCap(f"|alpha| {abs(alpha)} exceeds the cap {alpha_cap}; pass --force to override")
    missing = [layer for layer in layers if layer not in vectors.vectors]
    if missing:
        raise MissingLayerVector(f"no steering vector for layers {missing}")
    return InterventionSpec.from_vectors(vectors.vectors, layers, alpha)


def steered_probe(
    model: ModelBackend,
    vectors: SteeringVectorSet,
    layers: Sequence[int],
    alpha: float,
    probe_set: Sequence[LabeledScenario],
    persona: PersonaProfile | None = None,
    force: bool = False,
    alpha_cap: float = ALPHA_CAP,
    jobs: int = 1,
    progress: bool = False,
) -> list[ProbeResult]:
    spec = steering_spec(vectors, layers, alpha, force, alpha_cap)
    return probe_many(model, probe_set, persona, jobs, spec, progress, desc="steered")


__all__ = [
    "DEFAULT_ALPHA",
    "ALPHA_CAP",
    "DEFAULT_TOP_K",
    "DEFAULT_THRESHOLD",
    "ContrastPair",
    "SteeringVectorSet",
    "LayerSearchReport",
    "build_pairs",
    "extract_vectors",
    "save_vectors",
    "load_vectors",
    "layer_search",
    "steering_spec",
    "steered_probe",
]
