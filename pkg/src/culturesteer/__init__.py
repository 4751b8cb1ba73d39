"""Scenario-based cultural probing and activation steering for small language models."""

from .analysis import (
    CulturalCoordinate,
    DomainShiftMatrix,
    EntanglementRecord,
    HumanAnchors,
    ProjectionConfig,
    axis_correlation,
    distance,
    domain_matrix,
    entanglement,
    perplexity_curve,
    project,
)
from .config import RunConfig, load_run_config
from .dataset import LabeledScenario, Scenario, label_dataset, load_dataset, split, validate
from .enums import Axis, Domain, GroupBy, LabelKey, PersonaKind
from .errors import CultureSteerError
from .persona import PersonaProfile, build_advanced, build_basic
from .probing import ProbeResult, QuestionScore, WvsRangeConfig, aggregate, compute_p, probe, render_prompt, rescale
from .runtime import InterventionSpec, ModelConfig, ModelHandle, Session, load_model
from .steering import LayerSearchReport, SteeringVectorSet, build_pairs, extract_vectors, layer_search, steered_probe

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "Domain",
    "GroupBy",
    "LabelKey",
    "PersonaKind",
    "CultureSteerError",
    "Scenario",
    "LabeledScenario",
    "load_dataset",
    "validate",
    "split",
    "label_dataset",
    "ModelConfig",
    "ModelHandle",
    "Session",
    "InterventionSpec",
    "load_model",
    "PersonaProfile",
    "build_basic",
    "build_advanced",
    "ProbeResult",
    "QuestionScore",
    "WvsRangeConfig",
    "render_prompt",
    "compute_p",
    "probe",
    "aggregate",
    "rescale",
    "SteeringVectorSet",
    "LayerSearchReport",
    "build_pairs",
    "extract_vectors",
    "layer_search",
    "steered_probe",
    "CulturalCoordinate",
    "ProjectionConfig",
    "HumanAnchors",
    "EntanglementRecord",
    "DomainShiftMatrix",
    "project",
    "entanglement",
    "distance",
    "domain_matrix",
    "axis_correlation",
    "perplexity_curve",
    "RunConfig",
    "load_run_config",
    "__version__",
]
