"""Shared fixtures: paths, the canonical scenario set and scripted models."""

from __future__ import annotations

import os
import re
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
DATA = ROOT / "tests" / "data"

for path in (SRC, ROOT):
    if str(path) not in sys.path:
        sys.path.insert(0, str(path))

from culturesteer.dataset import WVS_ITEMS, Scenario  # noqa: E402
from culturesteer.enums import Domain  # noqa: E402
from culturesteer.probing import QUESTION_LINE  # noqa: E402
from culturesteer.runtime import (  # noqa: E402
    InterventionSpec,
    ModelConfig,
    ModelHandle,
    Session,
    decode,
    encode,
    load_model,
    resolve_letter_token,
)

HIGH_MARK = "progressive"
LOW_MARK = "customary"
QID_TAG = re.compile(r"\(([XY]\d\d)\)")

PLANTED_LAYER = 5
PLANTED_GAIN = 5.0
PLANTED_D_MODEL = 4
NOISE_DIM = 2
FILLER_TOKEN = encode("a")[0]


@pytest.fixture(scope="session")
def artifacts_dir() -> Path:
    """Return the directory used for pytest artefacts.

    Defaults to ``tests/artifacts``; the ``CULTURESTEER_ARTIFACTS`` environment
    variable overrides it. The directory is created if missing.
    """

    env_value = os.environ.get("CULTURESTEER_ARTIFACTS")
    base_path = Path(env_value) if env_value else ROOT / "tests" / "artifacts"
    base_path.mkdir(parents=True, exist_ok=True)
    return base_path


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


# ----------------------------------------------------------------------
# Scenarios
# ----------------------------------------------------------------------
def build_canonical_dataset(per_cell: int = 20) -> list[Scenario]:
    """10 questions x 3 domains x ``per_cell`` scenarios, option text marked by pole."""

    scenarios = []
    for item in WVS_ITEMS:
        for domain in (Domain.FAMILY, Domain.WORKPLACE, Domain.LEGAL):
            for index in range(per_cell):
                scenarios.append(
                    Scenario(
                        id=f"{item.qid}-{domain.value}-{index:02d}",
                        wvs_id=item.wvs_id,
                        domain=domain,
                        scenario_text=f"Case {index:02d} ({item.qid}) in a {domain.value} setting about {item.title.lower()}.",
                        option_low=f"Follow the {LOW_MARK} view: {item.low.lower()}.",
                        option_high=f"Follow the {HIGH_MARK} view: {item.high.lower()}.",
                    )
                )
    return scenarios


@pytest.fixture(scope="session")
def canonical_dataset() -> list[Scenario]:
    return build_canonical_dataset()


# ----------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------
TINY_CONFIG = ModelConfig(d_model=16, n_layers=4, n_heads=2, d_ff=32, max_seq=1024, init_seed=0)


@pytest.fixture(scope="session")
def tiny_model() -> ModelHandle:
    return load_model(TINY_CONFIG)


LogitFn = Callable[[list[int], str, dict[int, np.ndarray]], np.ndarray]
ActivationFn = Callable[[str, int], np.ndarray]


class ScriptedSession(Session):
    """Session whose logits and residuals come from plain Python functions."""

    def __init__(self, owner: "ScriptedModel", interventions: InterventionSpec | None = None) -> None:
        super().__init__(owner.n_layers, owner.d_model, owner.max_seq, interventions)
        self.owner = owner

    def forward_last_logits(self, tokens):
        tokens = list(tokens)
        deltas = {
            layer: np.sum(vectors, axis=0) for layer, vectors in self.interventions.deltas_by_layer().items()
        }
        text = decode(tokens)
        self.captured = {}
        for layer, position in self.capture_requests:
            self.captured[(layer, position)] = self.owner.activation(text, layer) + deltas.get(
                layer, np.zeros(self.d_model)
            )
        return self.owner.logits(tokens, text, deltas)


class ScriptedModel:
    """Backend-protocol model driven by ``logits(tokens, text, deltas)``."""

    def __init__(
        self,
        logits: LogitFn,
        activation: ActivationFn | None = None,
        n_layers: int = 8,
        d_model: int = PLANTED_D_MODEL,
        max_seq: int = 4096,
    ) -> None:
        self.logits = logits
        self.activation = activation or (lambda text, layer: np.zeros(d_model))
        self.n_layers = n_layers
        self.d_model = d_model
        self.max_seq = max_seq

    def encode(self, text: str) -> list[int]:
        return encode(text)

    def letter_token(self, letter: str) -> int:
        return resolve_letter_token(self.encode, letter)

    def open_session(self, interventions: InterventionSpec | None = None) -> ScriptedSession:
        return ScriptedSession(self, interventions)


@pytest.fixture(scope="session")
def scripted_model() -> type[ScriptedModel]:
    return ScriptedModel


def _axis_dim(text: str) -> int:
    match = QID_TAG.search(text)
    assert match is not None, text
    return 0 if match.group(1).startswith("X") else 1


def _planted_activation(text: str, layer: int) -> np.ndarray:
    vec = np.zeros(PLANTED_D_MODEL)
    if layer != PLANTED_LAYER or QUESTION_LINE in text:
        return vec
    sign = 1.0 if HIGH_MARK in text else -1.0 if LOW_MARK in text else 0.0
    vec[_axis_dim(text)] = sign
    return vec


def _planted_logits(tokens: list[int], text: str, deltas: dict[int, np.ndarray]) -> np.ndarray:
    out = np.zeros(259)
    planted = deltas.get(PLANTED_LAYER, np.zeros(PLANTED_D_MODEL))
    if QUESTION_LINE in text:
        shift = PLANTED_GAIN * float(planted[_axis_dim(text)])
        option_a = next(line for line in text.splitlines() if line.startswith("Option A:"))
        high, low = ("A", "B") if HIGH_MARK in option_a else ("B", "A")
        out[encode(high)[0]] = shift / 2
        out[encode(low)[0]] = -shift / 2
        return out
    noise = sum(abs(float(delta[NOISE_DIM])) for delta in deltas.values())
    out[FILLER_TOKEN] = 5.0 - 3.0 * noise
    return out


@pytest.fixture(scope="session")
def planted_model() -> ScriptedModel:
    """Only the residual at layer 5 moves the option-letter gap.

    Contrast texts put +1 (high pole) or -1 (low pole) on the scenario's axis
    dimension at layer 5, so extracted vectors are 2 * e_axis there and zero
    elsewhere. Non-probe text favours one filler token less as the injected
    component on dimension 2 grows.
    """

    return ScriptedModel(_planted_logits, _planted_activation)
