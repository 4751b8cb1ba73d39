"""Run configuration: frozen defaults plus one YAML file and flag overrides.

Precedence is flags > ``CULTURESTEER_OUTPUT_DIR`` (output directory only) >
file > defaults. Keys may use dashes or underscores. Example::

    dataset: scenarios.json
    seed: 42
    alpha: 0.2
    axis: X
    model: {d_model: 64, n_layers: 8, init_seed: 0}
    persona: {kind: advanced, country: India, stats: stats.json, codebook: codebook.json}
    wvs_ranges: {Y04: [1, 4, true]}
    projection: {scale_x: 2.5, scale_y: 2.5}
    anchors: anchors.json
    output_dir: runs/tiny
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .analysis import ProjectionConfig
from .enums import Axis, PersonaKind
from .errors import AlphaOverCap, InvalidConfig
from .persona import DEFAULT_NAMES
from .probing import WvsRangeConfig
from .runtime import DEFAULT_PPL_WINDOW, DEFAULT_TEMPERATURE, ModelConfig
from .steering import ALPHA_CAP, DEFAULT_ALPHA, DEFAULT_THRESHOLD, DEFAULT_TOP_K

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
DEFAULT_SPLIT_RATIO = 0.5
DEFAULT_PPL_ALPHAS: tuple[float, ...] = (0.0, 0.1, 0.2, 0.4)
DEFAULT_PPL_PROMPTS = 4

OUTPUT_DIR_ENV = "CULTURESTEER_OUTPUT_DIR"


@dataclass(frozen=True)
class PersonaSettings:
    kind: PersonaKind = PersonaKind.NONE
    country: str | None = None
    stats: Path | None = None
    codebook: Path | None = None
    names: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_NAMES))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: Path | None = None
    backend_command: tuple[str, ...] | None = None
    dataset: Path | None = None
    seed: int = DEFAULT_SEED
    split_ratio: float = DEFAULT_SPLIT_RATIO
    alpha: float = DEFAULT_ALPHA
    alpha_cap: float = ALPHA_CAP
    force: bool = False
    top_k: int = DEFAULT_TOP_K
    threshold: float = DEFAULT_THRESHOLD
    temperature: float = DEFAULT_TEMPERATURE
    ppl_window: int = DEFAULT_PPL_WINDOW
    ppl_alphas: tuple[float, ...] = DEFAULT_PPL_ALPHAS
    ppl_prompts: int = DEFAULT_PPL_PROMPTS
    ppl_baseline_scored: bool = False
    axis: Axis = Axis.X
    persona: PersonaSettings = field(default_factory=PersonaSettings)
    wvs_ranges: WvsRangeConfig = field(default_factory=WvsRangeConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    anchors: Path | None = None
    output_dir: Path = Path("runs")
    jobs: int = 1

    def __post_init__(self) -> None:
        if abs(self.alpha) > self.alpha_cap and not self.force:
            raise AlphaOverCap(f"alpha {self.alpha} exceeds the cap {self.alpha_cap}; pass --force to override")
        if not 0.0 < self.split_ratio < 1.0:
            raise InvalidConfig("split_ratio must lie strictly between 0 and 1")
        if self.top_k < 1 or self.jobs < 1 or self.ppl_window < 1 or self.ppl_prompts < 1:
            raise InvalidConfig("top_k, jobs, ppl_window and ppl_prompts must be >= 1")
        if self.temperature < 0:
            raise InvalidConfig("temperature must be >= 0")


def _normalise_keys(data: Mapping[str, Any], where: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in data.items():
        if not isinstance(key, str):
            raise InvalidConfig(f"{where}: keys must be strings, got {key!r}")
        out[key.strip().lower().replace("-", "_")] = value
    return out


def _check_keys(data: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {unknown}")


def _path(value: Any, base: Path) -> Path | None:
    if value is None:
        return None
    path = Path(str(value)).expanduser()
    return path if path.is_absolute() else base / path


def _persona_settings(data: Mapping[str, Any], base: Path) -> PersonaSettings:
    data = _normalise_keys(data, "persona")
    _check_keys(data, {"kind", "country", "stats", "codebook", "names"}, "persona")
    try:
        kind = PersonaKind(str(data.get("kind", "none")).lower())
    except ValueError as exc:
        raise InvalidConfig(f"persona kind must be none, basic or advanced: {exc}") from exc
    names = dict(DEFAULT_NAMES)
    names.update({str(k): str(v) for k, v in (data.get("names") or {}).items()})
    return PersonaSettings(
        kind=kind,
        country=data.get("country"),
        stats=_path(data.get("stats"), base),
        codebook=_path(data.get("codebook"), base),
        names=names,
    )


def _from_mapping(data: Mapping[str, Any], base: Path) -> RunConfig:
    data = _normalise_keys(data, "config")
    _check_keys(data, {f.name for f in fields(RunConfig)}, "config")
    kwargs: dict[str, Any] = {}
    try:
        for key, value in data.items():
            if key == "model":
                model = _normalise_keys(value or {}, "model")
                _check_keys(model, {f.name for f in fields(ModelConfig)}, "model")
                kwargs[key] = ModelConfig(**{k: int(v) for k, v in model.items()})
            elif key == "persona":
                kwargs[key] = _persona_settings(value or {}, base)
            elif key == "wvs_ranges":
                kwargs[key] = WvsRangeConfig.from_dict(value or {})
            elif key == "projection":
                kwargs[key] = ProjectionConfig.from_dict(_normalise_keys(value or {}, "projection"))
            elif key in ("weights", "dataset", "anchors", "output_dir"):
                kwargs[key] = _path(value, base)
            elif key == "backend_command":
                kwargs[key] = tuple(str(part) for part in value) if value else None
            elif key == "axis":
                kwargs[key] = Axis(str(value).upper())
            elif key == "ppl_alphas":
                kwargs[key] = tuple(float(a) for a in value)
            elif key in ("seed", "top_k", "ppl_window", "ppl_prompts", "jobs"):
                kwargs[key] = int(value)
            elif key in ("force", "ppl_baseline_scored"):
                kwargs[key] = bool(value)
            else:
                kwargs[key] = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad configuration value: {exc}") from exc
    return RunConfig(**kwargs)


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Flag values win over the file; ``None`` means "not given".

    ``persona`` and ``country`` set the persona kind and country.
    """

    given = {k: v for k, v in _normalise_keys(overrides, "flags").items() if v is not None}
    persona = config.persona
    if "persona" in given:
        persona = replace(persona, kind=PersonaKind(str(given.pop("persona")).lower()))
    if "country" in given:
        persona = replace(persona, country=str(given.pop("country")))
    _check_keys(given, {f.name for f in fields(RunConfig)}, "flags")
    if "axis" in given and not isinstance(given["axis"], Axis):
        given["axis"] = Axis(str(given["axis"]).upper())
    for key in ("weights", "dataset", "anchors", "output_dir"):
        if key in given:
            given[key] = Path(given[key])
    return replace(config, persona=persona, **given)


def load_run_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data: Mapping[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        source = Path(path)
        try:
            loaded = yaml.safe_load(source.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {source}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"{source}: invalid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise InvalidConfig(f"{source}: top level must be a mapping")
        data = loaded or {}
        base = source.resolve().parent
        logger.debug("loaded run configuration from %s", source)

    data = _normalise_keys(data, "config")
    if overrides and overrides.get("force"):
        # the cap is checked on construction, so a flag-level --force must apply first
        data["force"] = True
    config = _from_mapping(data, base)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        config = replace(config, output_dir=Path(env_dir))
    if overrides:
        config = apply_overrides(config, overrides)
    return config


__all__ = [
    "DEFAULT_SEED",
    "DEFAULT_TEMPERATURE",
    "DEFAULT_PPL_WINDOW",
    "DEFAULT_ALPHA",
    "ALPHA_CAP",
    "DEFAULT_TOP_K",
    "DEFAULT_THRESHOLD",
    "DEFAULT_SPLIT_RATIO",
    "DEFAULT_PPL_ALPHAS",
    "DEFAULT_PPL_PROMPTS",
    "OUTPUT_DIR_ENV",
    "PersonaSettings",
    "RunConfig",
    "apply_overrides",
    "load_run_config",
]
