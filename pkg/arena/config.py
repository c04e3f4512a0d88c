"""
Experiment configs: one TOML document per experiment.

Every string value may reference environment variables as ``${NAME}`` or
``${NAME:-default}``. Sections: ``[experiment]``, ``[cache]``,
``[providers.<id>]``, ``[[agents]]``, ``[grid]`` and ``[report]``.
"""
import os
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Optional

from arena.agents import AgentException, AgentSpec
from arena.conf import settings
from arena.games import GameException, resolve_games
from arena.prompting import (
    Intervention, PredictionMode, PromptException, PromptVariant, template_exists, variant_space,
)
from arena.providers import CompletionCache, ProviderException, ProviderRegistry
from arena.tournament import GridException, GridSpec

_VARIABLE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


class ExperimentConfigException(Exception):
    pass


def expand_variables(value, environ=None):
    """Substitute ``${NAME}`` references in every string of a parsed document."""
    environ = os.environ if environ is None else environ
    if isinstance(value, dict):
        return {key: expand_variables(item, environ) for key, item in value.items()}
    if isinstance(value, list):
        return [expand_variables(item, environ) for item in value]
    if not isinstance(value, str):
        return value

    def substitute(match):
        name, default = match.group(1), match.group(2)
        if name in environ:
            return environ[name]
        if default is not None:
            return default
        raise ExperimentConfigException("Environment variable {} is not set".format(name))

    return _VARIABLE.sub(substitute, value)


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    output: str
    grid: GridSpec
    providers: dict = field(default_factory=dict)
    agents: tuple = ()
    template: str = "base-v1"
    seed: Optional[int] = None
    cache_enabled: bool = True
    cache_location: Optional[str] = None
    max_workers: Optional[int] = None
    include_other_families: bool = False
    trajectory_games: tuple = ()

    def completion_cache(self) -> Optional[CompletionCache]:
        if not self.cache_enabled:
            return None
        if self.cache_location:
            return CompletionCache.at(self.cache_location)
        return CompletionCache()

    def configure_providers(self, offline: Optional[bool] = None) -> ProviderRegistry:
        try:
            return ProviderRegistry().configure(self.providers, cache=self.completion_cache(), offline=offline)
        except ProviderException as e:
            raise ExperimentConfigException(str(e)) from e


def _variants(value) -> tuple:
    if value is None:
        return (None,)
    if value == "all":
        return tuple(variant.id for variant in variant_space())
    return tuple(PromptVariant.from_id(item).id for item in _as_list(value))


def _agents(tables, providers) -> tuple:
    agents = []
    for table in tables:
        if "spec" in table:
            # short form: spec = "llm:gpt4" plus optional overrides
            extra = {key: value for key, value in table.items() if key != "spec"}
            table = dict(AgentSpec.parse(table["spec"]).to_dict(), **extra)
        spec = AgentSpec.from_dict(table)
        if spec.is_llm and spec.provider not in providers:
            raise ExperimentConfigException("Agent {} uses undefined provider '{}'".format(spec.label, spec.provider))
        agents.append(spec)
    return tuple(agents)


def load_experiment(path: str, *, output: Optional[str] = None, seed: Optional[int] = None,
                    include_other_families: Optional[bool] = None, environ=None) -> ExperimentConfig:
    """Read and validate an experiment; keyword arguments override the file."""
    try:
        with open(path, "rb") as handle:
            document = tomllib.load(handle)
    except OSError as e:
        raise ExperimentConfigException("Cannot read {}: {}".format(path, e)) from e
    except tomllib.TOMLDecodeError as e:
        raise ExperimentConfigException("{} is not valid TOML: {}".format(path, e)) from e
    document = expand_variables(document, environ)
    experiment = document.get("experiment", {})
    cache = document.get("cache", {})
    providers = document.get("providers", {})
    grid = document.get("grid", {})
    report = document.get("report", {})

    template = experiment.get("template", settings.ARENA_TEMPLATE)
    if not template_exists(template):
        raise ExperimentConfigException("Prompt template '{}' does not exist".format(template))
    for provider_id, definition in providers.items():
        if not isinstance(definition, dict):
            raise ExperimentConfigException("Provider {} must be a table".format(provider_id))

    if include_other_families is None:
        include_other_families = bool(grid.get("include_other_families", False))
    seed = seed if seed is not None else experiment.get("seed")
    output = output or experiment.get("output") or settings.ARENA_RUN_DIR

    try:
        agents = _agents(document.get("agents", []), providers)
        observer = grid.get("observer")
        observer = AgentSpec.parse(observer) if observer else None
        if observer is not None and observer.provider not in providers:
            raise ExperimentConfigException("Observer uses undefined provider '{}'".format(observer.provider))
        games = resolve_games(_as_list(grid.get("games", "all")), include_other_families)
        spec = GridSpec(
            agents=agents,
            games=tuple(games),
            rounds=grid.get("rounds"),
            variants=_variants(grid.get("variants")),
            interventions=tuple(Intervention.from_id(item).id for item in _as_list(grid.get("interventions", "none"))),
            predictions=tuple(PredictionMode.from_id(item).value for item in _as_list(grid.get("predictions", "none"))),
            repetitions=int(grid.get("repetitions", 1)),
            self_play=bool(grid.get("self_play", True)),
            seed=seed,
            template=template,
            observer=observer,
            observe_target=int(grid.get("observe_target", 2)),
        )
    except (AgentException, GameException, GridException, PromptException) as e:
        raise ExperimentConfigException(str(e)) from e

    try:
        os.makedirs(output, exist_ok=True)
    except OSError as e:
        raise ExperimentConfigException("Cannot create output directory {}: {}".format(output, e)) from e
    if not os.access(output, os.W_OK):
        raise ExperimentConfigException("Output directory {} is not writable".format(output))

    return ExperimentConfig(
        name=experiment.get("name") or os.path.splitext(os.path.basename(path))[0],
        output=output,
        grid=spec,
        providers=providers,
        agents=agents,
        template=template,
        seed=seed,
        cache_enabled=bool(cache.get("enabled", True)),
        cache_location=cache.get("location"),
        max_workers=grid.get("max_workers"),
        include_other_families=include_other_families,
        trajectory_games=tuple(_as_list(report.get("trajectory_games", ["pd", "bos"]))),
    )
