"""Command line entry point: ``culturesteer <command> [options]``.

Exit status: 0 success, 1 usage error, 2 data error, 3 runtime error.
Every stage reads and writes files under the output directory so long runs
can be resumed and audited.
"""

from __future__ import annotations

import logging
import sys
from argparse import ArgumentParser, Namespace
from functools import cached_property
from pathlib import Path
from typing import Callable, NoReturn, Sequence

import pandas as pd

from .analysis import (
    DOMAIN_ORDER,
    CulturalCoordinate,
    axis_correlation,
    coordinate_from_results,
    curve_frame,
    distance_table,
    domain_matrix,
    entanglement,
    load_anchors,
    perplexity_curve,
    project,
)
from .backend import SubprocessBackend, serve
from .config import RunConfig, load_run_config
from .dataset import (
    GenerationConfig,
    LabeledScenario,
    Scenario,
    emit_generation_prompt,
    label_dataset,
    load_dataset,
    split,
    validate,
)
from .enums import Axis, Domain, GroupBy, PersonaKind
from .errors import (
    CultureSteerError,
    DataError,
    EmptyAxis,
    InvalidConfig,
    MissingArtifact,
    ShapeMismatch,
    UnknownCountry,
    ZeroIntendedShift,
)
from .persona import PersonaProfile, build_advanced, build_basic, load_codebook, load_country_stats
from .plotting import plot_cultural_map, plot_domain_heatmap, plot_layer_heatmap, plot_perplexity_curve
from .probing import aggregate, probe_to_file, render_prompt, rescale, scores_frame, write_prompts, write_results
from .runtime import ModelBackend, ModelHandle, config_from_weights, load_model, save_weights
from .steering import (
    LayerSearchReport,
    SteeringVectorSet,
    build_pairs,
    extract_vectors,
    layer_search,
    load_vectors,
    save_vectors,
    steered_probe,
)
from .utils import dumps_json, read_json, write_json

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class _Parser(ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------
# Run context
# ----------------------------------------------------------------------
class _Run:
    """Lazily built inputs shared by the command handlers."""

    def __init__(self, args: Namespace, config: RunConfig) -> None:
        self.args = args
        self.config = config
        self.progress = not args.quiet
        self._backend: SubprocessBackend | None = None

    def path(self, name: str) -> Path:
        out = self.config.output_dir / name
        out.parent.mkdir(parents=True, exist_ok=True)
        return out

    def require(self, name: str, producer: str) -> Path:
        path = self.config.output_dir / name
        if not path.exists():
            raise MissingArtifact(path, producer)
        return path

    @cached_property
    def model(self) -> ModelBackend:
        config = self.config
        if config.backend_command:
            logger.info("starting backend %s", " ".join(config.backend_command))
            self._backend = SubprocessBackend(config.backend_command)
            return self._backend
        return self.handle

    @cached_property
    def handle(self) -> ModelHandle:
        config = self.config
        if config.weights is None:
            return load_model(config.model)
        try:
            model_config = config_from_weights(config.weights)
        except ShapeMismatch:
            model_config = config.model
        return load_model(model_config, config.weights)

    @cached_property
    def dataset(self) -> list[Scenario]:
        if self.config.dataset is None:
            raise InvalidConfig("no dataset configured; pass --dataset or set it in --config")
        scenarios = load_dataset(self.config.dataset)
        report = validate(scenarios)
        if not report.passed:
            logger.warning("dataset %s deviates from the canonical counts: %s", self.config.dataset, report.failures)
        return scenarios

    def require_valid_dataset(self) -> None:
        report = validate(self.dataset)
        if not report.passed:
            sys.stderr.write(dumps_json(report.to_dict()))
            raise DataError(f"dataset {self.config.dataset} failed validation: {'; '.join(report.failures)}")

    @cached_property
    def labeled(self) -> list[LabeledScenario]:
        return label_dataset(self.dataset, self.config.seed)

    @cached_property
    def halves(self) -> tuple[list[LabeledScenario], list[LabeledScenario]]:
        """(optimization, evaluation) halves, labelled."""

        halves = split(self.dataset, self.config.seed, self.config.split_ratio)
        return (
            label_dataset(halves.optimization, self.config.seed),
            label_dataset(halves.evaluation, self.config.seed),
        )

    @cached_property
    def persona(self) -> PersonaProfile | None:
        settings = self.config.persona
        if settings.kind is PersonaKind.NONE:
            return None
        if not settings.country:
            raise InvalidConfig("persona needs a country (--country)")
        if settings.kind is PersonaKind.BASIC:
            return build_basic(settings.country)
        if settings.stats is None or settings.codebook is None:
            raise InvalidConfig("advanced persona needs persona.stats and persona.codebook files")
        stats = load_country_stats(settings.stats)
        if settings.country not in stats:
            raise UnknownCountry(f"{settings.stats} has no statistics for {settings.country}")
        return build_advanced(settings.country, stats[settings.country], load_codebook(settings.codebook), settings.names)

    @property
    def label(self) -> str:
        persona = self.persona
        if persona is None:
            return "model"
        return f"{persona.kind.value}:{persona.country}"

    def close(self) -> None:
        if self._backend is not None:
            self._backend.close()


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _write_coordinate(run: _Run, coord: CulturalCoordinate, name: str) -> CulturalCoordinate:
    write_json(run.path(name), coord.to_dict())
    logger.info("%s: x=%.4f y=%.4f", name, coord.x, coord.y)
    return coord


def _read_coordinate(run: _Run, name: str, producer: str) -> CulturalCoordinate:
    return CulturalCoordinate.from_dict(read_json(run.require(name, producer)))


def _axis_optimization(run: _Run, axis: Axis) -> list[LabeledScenario]:
    items = [item for item in run.halves[0] if item.scenario.axis is axis]
    if not items:
        raise EmptyAxis(f"dataset has no optimization scenarios on axis {axis.value}")
    return items


def _vectors(run: _Run, axis: Axis, optimization: Sequence[LabeledScenario]) -> SteeringVectorSet:
    path = run.config.output_dir / f"vectors_{axis.value}.bin"
    if run.args.resume and path.exists():
        logger.info("reusing %s", path)
        return load_vectors(path)
    pairs = build_pairs([item.scenario for item in optimization], axis)
    vectors = extract_vectors(run.model, pairs, run.config.jobs, run.progress)
    save_vectors(vectors, run.path(path.name))
    return vectors


def _layer_search(run: _Run) -> tuple[SteeringVectorSet, LayerSearchReport]:
    config = run.config
    axis = config.axis
    optimization = _axis_optimization(run, axis)
    vectors = _vectors(run, axis, optimization)
    report = layer_search(
        run.model,
        vectors,
        optimization,
        config.alpha,
        config.top_k,
        config.threshold,
        run.persona,
        config.jobs,
        run.progress,
    )
    write_json(run.path(f"layer_search_{axis.value}.json"), report.to_dict())
    _write_csv(report.to_frame(), run.path(f"layer_search_{axis.value}.csv"))
    _write_csv(report.summary(), run.path(f"layer_summary_{axis.value}.csv"))
    plot_layer_heatmap(report, run.path(f"layer_search_{axis.value}.svg"))
    return vectors, report


def _selected_layers(run: _Run, axis: Axis) -> list[int]:
    data = read_json(run.require(f"layer_search_{axis.value}.json", "layer-search"))
    return LayerSearchReport.from_dict(data).selected


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def cmd_validate(run: _Run) -> int:
    if run.config.dataset is None:
        raise InvalidConfig("no dataset configured; pass --dataset")
    report = validate(load_dataset(run.config.dataset))
    sys.stdout.write(dumps_json(report.to_dict()))
    return 0 if report.passed else DataError.exit_code


def cmd_emit_gen_prompt(run: _Run) -> int:
    args = run.args
    defaults = GenerationConfig()
    config = GenerationConfig(
        wvs_ids=tuple(args.wvs_ids) if args.wvs_ids else defaults.wvs_ids,
        domains=tuple(Domain(d) for d in args.domains) if args.domains else defaults.domains,
        per_combination=args.per_combination or defaults.per_combination,
    )
    sys.stdout.write(emit_generation_prompt(config) + "\n")
    return 0


def cmd_persona(run: _Run) -> int:
    persona = run.persona
    if persona is None:
        raise InvalidConfig("choose a persona kind with --persona basic|advanced")
    sys.stdout.write(persona.text + "\n")
    return 0


def cmd_init_model(run: _Run) -> int:
    out = Path(run.args.out) if run.args.out else run.path("model.bin")
    save_weights(load_model(run.config.model), out)
    logger.info("wrote seeded weights to %s", out)
    return 0


def cmd_serve(run: _Run) -> int:
    if run.config.backend_command:
        raise InvalidConfig("serve runs the built-in model; drop backend_command")
    serve(run.handle, sys.stdin, sys.stdout)
    return 0


def cmd_probe(run: _Run) -> int:
    run.require_valid_dataset()
    config = run.config
    persona = run.persona
    labeled = run.labeled
    write_prompts(labeled, persona, run.path("prompts.jsonl"))
    results = probe_to_file(
        run.model,
        labeled,
        run.path("probe_results.jsonl"),
        persona,
        config.jobs,
        resume=run.args.resume,
        progress=run.progress,
    )
    scores = [rescale(s, config.wvs_ranges) for s in aggregate(results, run.dataset, GroupBy.QID)]
    by_domain = [rescale(s, config.wvs_ranges) for s in aggregate(results, run.dataset, GroupBy.QID_DOMAIN)]
    _write_csv(scores_frame(scores), run.path("scores.csv"))
    _write_csv(scores_frame(by_domain), run.path("scores_by_domain.csv"))
    _write_coordinate(run, project(scores, config.projection, run.label), "coordinate.json")
    return 0


def cmd_layer_search(run: _Run) -> int:
    _, report = _layer_search(run)
    logger.info("selected layers %s; questions meeting threshold: %s", report.selected, report.meeting_threshold())
    return 0


def cmd_steer(run: _Run) -> int:
    config = run.config
    axis = config.axis
    vectors, report = _layer_search(run)
    evaluation = run.halves[1]

    baseline = probe_to_file(
        run.model,
        evaluation,
        run.path("baseline_results.jsonl"),
        run.persona,
        config.jobs,
        resume=run.args.resume,
        progress=run.progress,
    )
    steered = steered_probe(
        run.model,
        vectors,
        report.selected,
        config.alpha,
        evaluation,
        run.persona,
        config.force,
        config.alpha_cap,
        config.jobs,
        run.progress,
    )
    write_results(steered, run.path(f"steered_results_{axis.value}.jsonl"))

    base = coordinate_from_results(baseline, evaluation, config.projection, run.label)
    moved = coordinate_from_results(steered, evaluation, config.projection, f"{run.label} {axis.value}={config.alpha:g}")
    _write_coordinate(run, base, "coordinate_baseline.json")
    _write_coordinate(run, moved, f"coordinate_steered_{axis.value}.json")
    _write_entanglement(run, base, moved, axis)
    return 0


def _write_entanglement(run: _Run, base: CulturalCoordinate, moved: CulturalCoordinate, axis: Axis) -> None:
    try:
        record = entanglement(base, moved, axis).to_dict()
    except ZeroIntendedShift as exc:
        logger.warning("%s", exc)
        record = {
            "target_axis": axis.value,
            "delta_intended": 0.0,
            "delta_unintended": moved.along(axis.other) - base.along(axis.other),
            "e": None,
        }
    write_json(run.path(f"entanglement_{axis.value}.json"), record)


# --- analyze -----------------------------------------------------------
def analyze_entangle(run: _Run) -> int:
    axis = run.config.axis
    base = _read_coordinate(run, "coordinate_baseline.json", "steer")
    moved = _read_coordinate(run, f"coordinate_steered_{axis.value}.json", "steer")
    _write_entanglement(run, base, moved, axis)
    return 0


def _anchors(run: _Run):
    if run.config.anchors is None:
        raise InvalidConfig("no anchors file configured; pass --anchors")
    return load_anchors(run.config.anchors)


def analyze_distance(run: _Run) -> int:
    anchors = _anchors(run)
    names = ["coordinate.json", "coordinate_baseline.json", f"coordinate_steered_{run.config.axis.value}.json"]
    coords = [
        CulturalCoordinate.from_dict(read_json(run.config.output_dir / name))
        for name in names
        if (run.config.output_dir / name).exists()
    ]
    if not coords:
        raise MissingArtifact(run.config.output_dir / "coordinate.json", "probe")
    _write_csv(distance_table(coords, anchors), run.path("distance.csv"))
    return 0


def analyze_heatmap(run: _Run) -> int:
    config = run.config
    axis = config.axis
    layers = _selected_layers(run, axis)
    optimization, evaluation = run.halves
    runs: dict[Domain, SteeringVectorSet] = {}
    for domain in DOMAIN_ORDER:
        pairs = build_pairs([i.scenario for i in optimization if i.scenario.domain is domain], axis)
        if not pairs:
            raise EmptyAxis(f"no {domain.value} optimization scenarios on axis {axis.value}")
        runs[domain] = extract_vectors(run.model, pairs, config.jobs, run.progress)
    probe_sets = {d: [i for i in evaluation if i.scenario.domain is d] for d in DOMAIN_ORDER}
    matrix = domain_matrix(
        run.model,
        runs,
        probe_sets,
        config.alpha,
        axis,
        layers,
        config.projection,
        run.persona,
        config.force,
        config.alpha_cap,
        config.jobs,
    )
    write_json(run.path(f"domain_matrix_{axis.value}.json"), matrix.to_dict())
    _write_csv(matrix.to_frame(), run.path(f"domain_matrix_{axis.value}.csv"))
    plot_domain_heatmap(matrix, run.path(f"domain_matrix_{axis.value}.svg"))
    return 0


def analyze_correlation(run: _Run) -> int:
    anchors = _anchors(run)
    r = axis_correlation(anchors)
    write_json(run.path("correlation.json"), {"r": r, "countries": sorted(anchors.coords)})
    logger.info("axis correlation r=%.4f over %d countries", r, len(anchors.coords))
    return 0


def analyze_ppl_curve(run: _Run) -> int:
    config = run.config
    axis = config.axis
    vectors = load_vectors(run.require(f"vectors_{axis.value}.bin", "layer-search"))
    layers = _selected_layers(run, axis)
    prompts = [render_prompt(item) for item in run.halves[1][: config.ppl_prompts]]
    curve = perplexity_curve(
        run.model,
        vectors,
        layers,
        config.ppl_alphas,
        prompts,
        config.ppl_window,
        config.temperature,
        config.seed,
        config.ppl_baseline_scored,
        config.jobs,
    )
    frame = curve_frame(curve)
    _write_csv(frame, run.path(f"ppl_curve_{axis.value}.csv"))
    write_json(run.path(f"ppl_curve_{axis.value}.json"), frame.to_dict("records"))
    plot_perplexity_curve(curve, run.path(f"ppl_curve_{axis.value}.svg"), f"Steering {axis.value}")
    return 0


def analyze_plot(run: _Run) -> int:
    coords = [_read_coordinate(run, "coordinate.json", "probe")]
    arrows = []
    axis = run.config.axis
    base_path = run.config.output_dir / "coordinate_baseline.json"
    moved_path = run.config.output_dir / f"coordinate_steered_{axis.value}.json"
    if base_path.exists() and moved_path.exists():
        base = CulturalCoordinate.from_dict(read_json(base_path))
        moved = CulturalCoordinate.from_dict(read_json(moved_path))
        coords.extend([base, moved])
        arrows.append((base, moved))
    anchors = _anchors(run) if run.config.anchors is not None else None
    plot_cultural_map(coords, run.path("cultural_map.svg"), anchors, arrows)
    return 0


ANALYSES: dict[str, Callable[[_Run], int]] = {
    "entangle": analyze_entangle,
    "distance": analyze_distance,
    "heatmap": analyze_heatmap,
    "correlation": analyze_correlation,
    "ppl-curve": analyze_ppl_curve,
    "plot": analyze_plot,
}


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------
def _common() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration.")
    common.add_argument("--output-dir", type=Path, help="Directory for artifacts.")
    common.add_argument("--dataset", type=Path, help="Scenario dataset (JSON list).")
    common.add_argument("--weights", type=Path, help="Model weights file.")
    common.add_argument("--anchors", type=Path, help="Human anchor coordinates (JSON).")
    common.add_argument("--seed", type=int, help="Global seed (default 42).")
    common.add_argument("--alpha", type=float, help="Steering coefficient (default 0.2).")
    common.add_argument("--axis", choices=[a.value for a in Axis], help="Axis to steer (default X).")
    common.add_argument("--persona", choices=[k.value for k in PersonaKind], help="Persona preamble.")
    common.add_argument("--country", help="Persona country.")
    common.add_argument("--jobs", type=int, help="Worker threads (default 1).")
    common.add_argument("--force", action="store_true", default=None, help="Allow alpha above the cap.")
    common.add_argument("--resume", action="store_true", help="Keep finished work found in the output directory.")
    common.add_argument(
        "--ppl-baseline-scored",
        action="store_true",
        default=None,
        help="Score steered generations with the unsteered model.",
    )
    common.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars.")
    common.add_argument("--log-level", default="INFO", help="Logging level (default INFO).")
    return common


def build_parser() -> ArgumentParser:
    common = _common()
    parser = _Parser(prog="culturesteer", description="Probe and steer cultural alignment of a language model.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    commands.add_parser("validate", parents=[common], help="Check dataset counts.").set_defaults(handler=cmd_validate)

    gen = commands.add_parser("emit-gen-prompt", parents=[common], help="Print the scenario generation prompt.")
    gen.add_argument("--wvs-ids", nargs="+")
    gen.add_argument("--domains", nargs="+", choices=[d.value for d in Domain])
    gen.add_argument("--per-combination", type=int)
    gen.set_defaults(handler=cmd_emit_gen_prompt)

    commands.add_parser("persona", parents=[common], help="Print a persona preamble.").set_defaults(handler=cmd_persona)

    init = commands.add_parser("init-model", parents=[common], help="Write seeded tiny-model weights.")
    init.add_argument("--out", type=Path)
    init.set_defaults(handler=cmd_init_model)

    commands.add_parser("serve", parents=[common], help="Serve the model over stdin/stdout.").set_defaults(
        handler=cmd_serve
    )
    commands.add_parser("probe", parents=[common], help="Probe every scenario.").set_defaults(handler=cmd_probe)
    commands.add_parser("layer-search", parents=[common], help="Extract vectors and rank layers.").set_defaults(
        handler=cmd_layer_search
    )
    commands.add_parser("steer", parents=[common], help="Layer search plus steered probing.").set_defaults(
        handler=cmd_steer
    )

    analyze = commands.add_parser("analyze", help="Reports built on earlier artifacts.")
    analyses = analyze.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    for name, handler in ANALYSES.items():
        analyses.add_parser(name, parents=[common]).set_defaults(handler=handler)
    return parser


def _overrides(args: Namespace) -> dict:
    keys = (
        "output_dir",
        "dataset",
        "weights",
        "anchors",
        "seed",
        "alpha",
        "axis",
        "persona",
        "country",
        "jobs",
        "force",
        "ppl_baseline_scored",
    )
    return {key: getattr(args, key, None) for key in keys}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = "WARNING" if args.quiet else str(args.log_level).upper()
    if not isinstance(logging.getLevelName(level), int):
        parser.error(f"unknown log level {args.log_level!r}")
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)

    run: _Run | None = None
    try:
        config = load_run_config(args.config, _overrides(args))
        run = _Run(args, config)
        return args.handler(run)
    except CultureSteerError as exc:
        logger.debug("command failed", exc_info=True)
        sys.stderr.write(f"culturesteer: error: {exc}\n")
        return exc.exit_code
    finally:
        if run is not None:
            run.close()


__all__ = ["build_parser", "main"]


if __name__ == "__main__":
    raise SystemExit(main())
