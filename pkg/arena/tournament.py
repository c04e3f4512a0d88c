"""
Grids of matches: expansion into match configs, a resumable threaded runner
writing one transcript per match, and aggregation with confidence intervals.
"""
import hashlib
import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from arena.agents import AgentSpec
from arena.conf import settings
from arena.games import game_family
from arena.history import Seat
from arena.matches import (
    MatchConfig, Transcript, load_transcript, match_metrics, observe_match, play_match, save_transcript,
    with_observation,
)
from arena.prompting import NO_INTERVENTION, PredictionMode
from arena.providers import ProviderRegistry, RunLog

logger = logging.getLogger("arena")

GROUP_KEYS = ("agent", "opponent", "pair", "family", "game", "seat", "variant", "intervention", "prediction")
FOCAL_SEATS = {"p1": (Seat.P1,), "p2": (Seat.P2,), "both": (Seat.P1, Seat.P2)}
UNRANKED = "Unranked"


class GridException(Exception):
    pass


class EmptyGridException(GridException):
    pass


class GridRunException(GridException):
    def __init__(self, result):
        super().__init__("{} of {} matches failed".format(len(result.failures), len(result.configs)))
        self.result = result


@dataclass(frozen=True)
class GridSpec:
    agents: tuple
    games: tuple
    rounds: Optional[int] = None
    # None: each model seat keeps the variant of its own spec
    variants: tuple = (None,)
    interventions: tuple = (NO_INTERVENTION.id,)
    predictions: tuple = (PredictionMode.NONE.value,)
    repetitions: int = 1
    self_play: bool = True
    seed: Optional[int] = None
    template: Optional[str] = None
    observer: Optional[AgentSpec] = None
    observe_target: int = 2

    def __post_init__(self):
        if not self.agents:
            raise GridException("A grid needs at least one agent")
        if not self.games:
            raise GridException("A grid needs at least one game")
        if self.repetitions < 1:
            raise GridException("repetitions must be at least 1")
        labels = [agent.label for agent in self.agents]
        if len(set(labels)) != len(labels):
            raise GridException("Agent names must be unique: {}".format(", ".join(labels)))
        if not (self.variants and self.interventions and self.predictions):
            raise GridException("variants, interventions and predictions cannot be empty")


def expand_grid(spec: GridSpec) -> list:
    """Match configs in a fixed order: pair, game, variant, intervention, prediction, repetition.

    Ordered pairs encode the seats. Variants, interventions and prediction
    modes only apply to model seats, so sweeps over them do not multiply
    scripted matches.
    """
    pairs = [(first, second) for first, second in itertools.product(spec.agents, repeat=2)
             if spec.self_play or first.label != second.label]
    configs, seen = [], set()
    for (first, second), game, variant, intervention, prediction, repetition in itertools.product(
            pairs, spec.games, spec.variants, spec.interventions, spec.predictions,
            range(1, spec.repetitions + 1)):
        config = MatchConfig(
            game=game,
            agent_p1=first,
            agent_p2=second,
            rounds=spec.rounds,
            variant=variant if (first.is_llm or second.is_llm) else None,
            interventions=tuple(intervention if agent.is_llm else NO_INTERVENTION.id for agent in (first, second)),
            predictions=tuple(prediction if agent.is_llm else PredictionMode.NONE.value
                              for agent in (first, second)),
            seed=spec.seed,
            repetition=repetition,
            template=spec.template,
        )
        if config.match_id in seen:
            continue
        seen.add(config.match_id)
        configs.append(config)
    if not configs:
        raise EmptyGridException("The grid expands to no matches")
    return configs


def grid_digest(configs) -> str:
    digest = hashlib.sha256()
    for config in configs:
        digest.update(config.match_id.encode("ascii"))
    return digest.hexdigest()[:12]


class RunDirectory:
    """``run-<digest>/`` holding transcripts, completion logs, metrics, plots and trajectories."""

    SUBDIRECTORIES = ("transcripts", "completions", "metrics", "plots", "trajectories")

    def __init__(self, root: str):
        self.root = root

    @classmethod
    def for_grid(cls, output: str, configs) -> "RunDirectory":
        return cls(os.path.join(output, "run-{}".format(grid_digest(configs))))

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def create(self) -> "RunDirectory":
        for name in self.SUBDIRECTORIES:
            os.makedirs(self.path(name), exist_ok=True)
        return self

    def transcript_path(self, match_id: str) -> str:
        return self.path("transcripts", "{}.json".format(match_id))

    def completions_path(self, match_id: str) -> str:
        return self.path("completions", "{}.jsonl".format(match_id))

    def has_transcript(self, match_id: str) -> bool:
        return os.path.isfile(self.transcript_path(match_id))

    def load_transcripts(self) -> list:
        folder = self.path("transcripts")
        if not os.path.isdir(folder):
            return []
        return [load_transcript(os.path.join(folder, name))
                for name in sorted(os.listdir(folder)) if name.endswith(".json")]


@dataclass
class GridResult:
    run_dir: RunDirectory
    configs: list
    transcripts: list = field(default_factory=list)
    executed: int = 0
    failures: dict = field(default_factory=dict)

    @property
    def invalid(self) -> list:
        return [transcript for transcript in self.transcripts if not transcript.valid]


def _run_one(config: MatchConfig, spec: GridSpec, run_dir: RunDirectory, registry) -> Transcript:
    run_log = RunLog()
    transcript = play_match(config, registry, run_log)
    if spec.observer is not None and transcript.valid:
        observation = observe_match(transcript, spec.observer, spec.observe_target, registry, run_log)
        transcript = with_observation(transcript, observation)
    if len(run_log):
        run_log.write(run_dir.completions_path(config.match_id))
    save_transcript(transcript, run_dir.transcript_path(config.match_id))
    return transcript


def run_grid(spec: GridSpec, output: Optional[str] = None, registry: Optional[ProviderRegistry] = None,
             max_workers: Optional[int] = None, configs: Optional[list] = None) -> GridResult:
    """Play every match of the grid not already saved in its run directory.

    ``configs`` restricts the run to part of the grid; the run directory is
    always the one of the whole grid.
    """
    grid = expand_grid(spec)
    configs = configs if configs is not None else grid
    run_dir = RunDirectory.for_grid(output or settings.ARENA_RUN_DIR, grid).create()
    registry = registry or ProviderRegistry()
    pending = [config for config in configs if not run_dir.has_transcript(config.match_id)]
    logger.info("Grid %s: %d matches, %d to play", run_dir.root, len(configs), len(pending))

    result = GridResult(run_dir, configs)
    workers = max_workers or settings.ARENA_MAX_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_run_one, config, spec, run_dir, registry): config for config in pending}
        for done, future in enumerate(as_completed(futures), start=1):
            config = futures[future]
            try:
                future.result()
                result.executed += 1
            except Exception as e:
                logger.error("Match %s failed: %s", config.match_id, e)
                result.failures[config.match_id] = "{}: {}".format(type(e).__name__, e)
            if done % 100 == 0:
                logger.info("Grid %s: %d of %d played", run_dir.root, done, len(pending))

    result.transcripts = [load_transcript(run_dir.transcript_path(config.match_id))
                          for config in configs if run_dir.has_transcript(config.match_id)]
    for transcript in result.invalid:
        logger.warning("Match %s is invalid: %s", transcript.match_id, transcript.error)
    if result.failures:
        raise GridRunException(result)
    return result


@dataclass(frozen=True)
class MetricsRow:
    key: tuple
    n: int
    invalid: int
    mean_score: float
    ci_half_width: float
    defection_rate: float
    coordination_rate: float
    preferred_option_rate: Optional[float]

    @property
    def single(self) -> bool:
        return self.n == 1

    def value(self, name: str):
        return dict(self.key)[name]

    def to_dict(self) -> dict:
        document = dict(self.key)
        document.update(
            n=self.n,
            invalid=self.invalid,
            mean_score=self.mean_score,
            ci_half_width=self.ci_half_width,
            defection_rate=self.defection_rate,
            coordination_rate=self.coordination_rate,
            preferred_option_rate=self.preferred_option_rate,
            single=self.single,
        )
        return document


def mean_and_half_width(values, z: Optional[float] = None) -> tuple:
    """Mean and normal-approximation confidence half-width; the half-width is 0 for one value."""
    z = settings.ARENA_CI_Z if z is None else z
    sample = np.asarray(values, dtype=float)
    if sample.size == 0:
        raise GridException("No values to aggregate")
    mean = float(sample.mean())
    if sample.size == 1:
        return mean, 0.0
    return mean, float(z * sample.std(ddof=1) / np.sqrt(sample.size))


def seat_key(transcript: Transcript, seat: Seat, name: str) -> str:
    config = transcript.config
    if name == "agent":
        return config.agent(seat).label
    if name == "opponent":
        return config.agent(seat.other).label
    if name == "pair":
        return "{} vs {}".format(config.agent_p1.label, config.agent_p2.label)
    if name == "family":
        family = game_family(config.game)
        return family.value if family is not None else UNRANKED
    if name == "game":
        return config.game.name
    if name == "seat":
        return "p{}".format(int(seat))
    if name == "variant":
        return config.variant_for(seat) if config.agent(seat).is_llm else "-"
    if name == "intervention":
        return config.intervention(seat)
    if name == "prediction":
        return config.prediction_mode(seat)
    raise GridException("Unknown grouping key '{}'".format(name))


def aggregate(transcripts, group_by, focal: str = "both", z: Optional[float] = None) -> list:
    """One row per group of (transcript, focal seat) observations, sorted by key.

    Invalid transcripts are counted in their row but never enter a mean;
    groups without a valid transcript produce no row.
    """
    group_by = (group_by,) if isinstance(group_by, str) else tuple(group_by)
    for name in group_by:
        if name not in GROUP_KEYS:
            raise GridException("Unknown grouping key '{}'".format(name))
    try:
        seats = FOCAL_SEATS[focal]
    except KeyError:
        raise GridException("focal must be one of {}".format(", ".join(FOCAL_SEATS)))

    groups = {}
    for transcript in transcripts:
        metrics = match_metrics(transcript) if transcript.valid else None
        for seat in seats:
            key = tuple((name, seat_key(transcript, seat, name)) for name in group_by)
            group = groups.setdefault(key, {"scores": [], "defection": [], "coordination": [],
                                            "preferred": [], "invalid": 0})
            if metrics is None:
                group["invalid"] += 1
                continue
            group["scores"].append(metrics.normalized_score[seat.index])
            group["defection"].append(metrics.defection_rate[seat.index])
            group["coordination"].append(metrics.coordination_rate)
            if metrics.preferred_option_rate[seat.index] is not None:
                group["preferred"].append(metrics.preferred_option_rate[seat.index])

    rows = []
    for key in sorted(groups):
        group = groups[key]
        if not group["scores"]:
            continue
        mean, half_width = mean_and_half_width(group["scores"], z)
        rows.append(MetricsRow(
            key=key,
            n=len(group["scores"]),
            invalid=group["invalid"],
            mean_score=mean,
            ci_half_width=half_width,
            defection_rate=float(np.mean(group["defection"])),
            coordination_rate=float(np.mean(group["coordination"])),
            preferred_option_rate=float(np.mean(group["preferred"])) if group["preferred"] else None,
        ))
    return rows


def pair_matrix(transcripts, agents, metric: str, seat=Seat.P1) -> list:
    """agents x agents means of a per-match metric, row = Player 1; None where no valid match exists."""
    seat = Seat(seat)
    labels = [agent if isinstance(agent, str) else agent.label for agent in agents]
    cells = {}
    for transcript in transcripts:
        if not transcript.valid:
            continue
        metrics = match_metrics(transcript)
        values = {
            "defection_rate": metrics.defection_rate[seat.index],
            "score": metrics.normalized_score[seat.index],
            "preferred_option_rate": metrics.preferred_option_rate[seat.index],
            "coordination_rate": metrics.coordination_rate,
        }
        if metric not in values:
            raise GridException("Unknown pair metric '{}'".format(metric))
        if values[metric] is None:
            continue
        key = (transcript.config.agent_p1.label, transcript.config.agent_p2.label)
        cells.setdefault(key, []).append(values[metric])
    return [
        [float(np.mean(cells[(row, col)])) if (row, col) in cells else None for col in labels]
        for row in labels
    ]
