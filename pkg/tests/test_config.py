"""Run configuration defaults, YAML loading and override precedence."""

from __future__ import annotations

from pathlib import Path

import pytest

from culturesteer.config import (
    ALPHA_CAP,
    DEFAULT_ALPHA,
    DEFAULT_PPL_WINDOW,
    DEFAULT_SEED,
    DEFAULT_SPLIT_RATIO,
    DEFAULT_TEMPERATURE,
    DEFAULT_THRESHOLD,
    DEFAULT_TOP_K,
    OUTPUT_DIR_ENV,
    RunConfig,
    load_run_config,
)
from culturesteer.enums import Axis, PersonaKind
from culturesteer.errors import AlphaOverCap, InvalidConfig


@pytest.fixture(autouse=True)
def _no_env_output_dir(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


def _yaml(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_experimental_defaults() -> None:
    assert (DEFAULT_SEED, DEFAULT_TEMPERATURE, DEFAULT_PPL_WINDOW) == (42, 0.7, 128)
    assert (DEFAULT_ALPHA, ALPHA_CAP, DEFAULT_TOP_K, DEFAULT_THRESHOLD) == (0.2, 0.4, 4, 0.25)
    assert DEFAULT_SPLIT_RATIO == 0.5

    config = load_run_config()
    assert config == RunConfig()
    assert config.seed == 42
    assert config.alpha == 0.2
    assert config.axis is Axis.X
    assert config.persona.kind is PersonaKind.NONE
    assert config.output_dir == Path("runs")


def test_yaml_file_is_read(tmp_path: Path) -> None:
    path = _yaml(
        tmp_path,
        """
dataset: data/scenarios.json
seed: 7
top-k: 2
axis: y
model: {d_model: 32, n_layers: 4, n_heads: 2}
persona: {kind: advanced, country: India, stats: stats.json, codebook: codebook.json}
wvs_ranges: {Y04: [1, 5, false]}
projection: {scale_x: 3.0}
ppl_alphas: [0, 0.2]
""",
    )
    config = load_run_config(path)
    base = tmp_path.resolve()
    assert config.dataset == base / "data" / "scenarios.json"
    assert (config.seed, config.top_k, config.axis) == (7, 2, Axis.Y)
    assert (config.model.d_model, config.model.n_layers, config.model.n_heads) == (32, 4, 2)
    assert config.persona.kind is PersonaKind.ADVANCED
    assert config.persona.stats == base / "stats.json"
    assert config.persona.names["India"] == "Aarav"
    assert config.wvs_ranges.ranges["Y04"].max == 5.0
    assert config.projection.scale_x == 3.0
    assert config.ppl_alphas == (0.0, 0.2)


def test_precedence_flags_env_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = _yaml(tmp_path, "seed: 7\nalpha: 0.1\noutput_dir: from-file\n")
    assert load_run_config(path).output_dir == tmp_path.resolve() / "from-file"

    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "from-env"))
    config = load_run_config(path, {"seed": None, "alpha": 0.3})
    assert config.output_dir == tmp_path / "from-env"
    assert (config.seed, config.alpha) == (7, 0.3)

    flagged = load_run_config(path, {"output_dir": tmp_path / "from-flag", "persona": "basic", "country": "Denmark"})
    assert flagged.output_dir == tmp_path / "from-flag"
    assert (flagged.persona.kind, flagged.persona.country) == (PersonaKind.BASIC, "Denmark")


def test_alpha_cap_needs_force(tmp_path: Path) -> None:
    with pytest.raises(AlphaOverCap):
        load_run_config(_yaml(tmp_path, "alpha: 0.6\n"))
    with pytest.raises(AlphaOverCap):
        load_run_config(None, {"alpha": 0.5})
    assert load_run_config(None, {"alpha": 0.5, "force": True}).alpha == 0.5
    assert load_run_config(_yaml(tmp_path, "alpha: -0.4\n")).alpha == -0.4


@pytest.mark.parametrize(
    "text",
    [
        "- a list\n",
        "unknown_key: 1\n",
        "split_ratio: 1.5\n",
        "seed: forty-two\n",
        "persona: {kind: sometimes}\n",
        "model: {d_model: 30, n_heads: 4}\n",
        "jobs: 0\n",
        "alpha: [0.2\n",
    ],
)
def test_bad_files_are_usage_errors(tmp_path: Path, text: str) -> None:
    with pytest.raises(InvalidConfig):
        load_run_config(_yaml(tmp_path, text))


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(InvalidConfig):
        load_run_config(tmp_path / "absent.yaml")
