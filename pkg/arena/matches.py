"""
One finitely repeated game between two agents, its transcript and metrics.
"""
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

from arena.agents import (
    AgentSpec, LlmObserver, MoveException, PreferenceTieException, build_player, preferred_option,
)
from arena.conf import settings
from arena.games import PayoffGame
from arena.history import DEFECT, History, Round, Seat
from arena.prompting import Intervention, NO_INTERVENTION, PredictionMode, PromptVariant
from arena.providers import ProviderRegistry, ProviderTransportException, RunLog

logger = logging.getLogger("arena")


class MatchException(Exception):
    pass


class MatchConfigException(MatchException):
    pass


class InvalidTranscriptException(MatchException):
    pass


@dataclass(frozen=True)
class MatchConfig:
    game: PayoffGame
    agent_p1: AgentSpec
    agent_p2: AgentSpec
    rounds: Optional[int] = None
    # None lets each model seat use the variant of its own spec
    variant: Optional[str] = None
    interventions: tuple = (NO_INTERVENTION.id, NO_INTERVENTION.id)
    predictions: tuple = (PredictionMode.NONE.value, PredictionMode.NONE.value)
    seed: Optional[int] = None
    repetition: int = 1
    template: Optional[str] = None

    def __post_init__(self):
        if self.rounds is None:
            object.__setattr__(self, "rounds", settings.ARENA_ROUNDS)
        if self.template is None:
            object.__setattr__(self, "template", settings.ARENA_TEMPLATE)
        if int(self.rounds) < 1:
            raise MatchConfigException("rounds must be at least 1")
        if int(self.repetition) < 1:
            raise MatchConfigException("repetition must be at least 1")
        if len(self.interventions) != 2 or len(self.predictions) != 2:
            raise MatchConfigException("interventions and predictions are given per seat")
        object.__setattr__(self, "interventions", tuple(Intervention.from_id(i).id for i in self.interventions))
        modes = tuple(PredictionMode.from_id(mode) for mode in self.predictions)
        if PredictionMode.PREDICT_AS_OBSERVER in modes:
            raise MatchConfigException("A seated player cannot be an observer")
        object.__setattr__(self, "predictions", tuple(mode.value for mode in modes))
        if self.variant is not None:
            PromptVariant.from_id(self.variant)

    def agent(self, seat) -> AgentSpec:
        return self.agent_p1 if Seat(seat) is Seat.P1 else self.agent_p2

    def intervention(self, seat) -> str:
        chosen = self.interventions[Seat(seat).index]
        return chosen if chosen != NO_INTERVENTION.id else self.agent(seat).intervention

    def prediction_mode(self, seat) -> str:
        mode = self.predictions[Seat(seat).index]
        if mode == PredictionMode.NONE.value and self.agent(seat).predict_then_act:
            return PredictionMode.PREDICT_THEN_ACT.value
        return mode

    def variant_for(self, seat) -> str:
        return self.variant or self.agent(seat).variant

    def to_dict(self) -> dict:
        return {
            "game": self.game.to_dict(),
            "agent_p1": self.agent_p1.to_dict(),
            "agent_p2": self.agent_p2.to_dict(),
            "rounds": self.rounds,
            "variant": self.variant,
            "interventions": list(self.interventions),
            "predictions": list(self.predictions),
            "seed": self.seed,
            "repetition": self.repetition,
            "template": self.template,
        }

    @classmethod
    def from_dict(cls, document: dict) -> "MatchConfig":
        return cls(
            game=PayoffGame.from_dict(document["game"]),
            agent_p1=AgentSpec.from_dict(document["agent_p1"]),
            agent_p2=AgentSpec.from_dict(document["agent_p2"]),
            rounds=document.get("rounds"),
            variant=document.get("variant"),
            interventions=tuple(document.get("interventions", (NO_INTERVENTION.id,) * 2)),
            predictions=tuple(document.get("predictions", (PredictionMode.NONE.value,) * 2)),
            seed=document.get("seed"),
            repetition=document.get("repetition", 1),
            template=document.get("template"),
        )

    @property
    def match_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Observation:
    observer: str
    target: int
    predictions: tuple
    lock_round: Optional[int]
    completions: tuple = ()

    def to_dict(self) -> dict:
        return {
            "observer": self.observer,
            "target": self.target,
            "predictions": list(self.predictions),
            "lock_round": self.lock_round,
            "completions": [list(refs) for refs in self.completions],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "Observation":
        return cls(
            observer=document["observer"],
            target=document["target"],
            predictions=tuple(document["predictions"]),
            lock_round=document.get("lock_round"),
            completions=tuple(tuple(refs) for refs in document.get("completions", ())),
        )


@dataclass(frozen=True)
class Transcript:
    config: MatchConfig
    rounds: tuple = ()
    valid: bool = True
    error: str = ""
    invalid_round: Optional[int] = None
    observations: tuple = ()

    @property
    def match_id(self) -> str:
        return self.config.match_id

    @property
    def history(self) -> History:
        return History(self.rounds)

    def total(self, seat) -> int:
        seat = Seat(seat)
        return sum(played.payoff(seat) for played in self.rounds)

    @property
    def totals(self) -> tuple:
        return self.total(Seat.P1), self.total(Seat.P2)

    def to_dict(self) -> dict:
        return {
            "match_id": self.match_id,
            "config": self.config.to_dict(),
            "valid": self.valid,
            "error": self.error,
            "invalid_round": self.invalid_round,
            "totals": list(self.totals),
            "rounds": [played.to_dict() for played in self.rounds],
            "metrics": match_metrics(self).to_dict() if self.valid else None,
            "observations": [observation.to_dict() for observation in self.observations],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "Transcript":
        return cls(
            config=MatchConfig.from_dict(document["config"]),
            rounds=tuple(Round.from_dict(played) for played in document["rounds"]),
            valid=document["valid"],
            error=document.get("error", ""),
            invalid_round=document.get("invalid_round"),
            observations=tuple(Observation.from_dict(o) for o in document.get("observations", ())),
        )


def play_match(config: MatchConfig, registry: Optional[ProviderRegistry] = None,
               run_log: Optional[RunLog] = None, query_order=(Seat.P1, Seat.P2)) -> Transcript:
    """Play every round; each seat decides from the rounds before the current one only."""
    query_order = tuple(Seat(seat) for seat in query_order)
    if sorted(query_order) != [Seat.P1, Seat.P2]:
        raise MatchConfigException("Query order must list both seats once")
    registry = registry or ProviderRegistry()
    run_log = run_log if run_log is not None else RunLog()
    players = {
        seat: build_player(
            config.agent(seat), seat, config.game,
            registry=registry,
            variant=config.variant_for(seat),
            intervention=config.intervention(seat),
            mode=config.prediction_mode(seat),
            rounds=config.rounds,
            template=config.template,
            run_log=run_log,
            seed=config.seed,
        )
        for seat in Seat
    }

    history = History()
    for number in range(1, config.rounds + 1):
        decisions = {}
        try:
            for seat in query_order:
                decisions[seat] = players[seat].decide(history)
        except (MoveException, PreferenceTieException, ProviderTransportException) as e:
            logger.warning("Match %s is invalid from round %d: %s", config.match_id, number, e)
            return Transcript(config, history.rounds, valid=False, error=str(e), invalid_round=number)
        actions = (decisions[Seat.P1].action, decisions[Seat.P2].action)
        history = history.extended(Round(
            number=number,
            actions=actions,
            payoffs=config.game.cell_values(actions),
            predictions=(decisions[Seat.P1].prediction, decisions[Seat.P2].prediction),
            completions=(decisions[Seat.P1].completions, decisions[Seat.P2].completions),
        ))
    return Transcript(config, history.rounds)


def normalized_score(transcript: Transcript, seat) -> float:
    if not transcript.valid:
        raise InvalidTranscriptException("Match {} is invalid".format(transcript.match_id))
    seat = Seat(seat)
    ideal = transcript.config.rounds * transcript.config.game.max_value(seat)
    return transcript.total(seat) / ideal


def prediction_lock_round(predictions, actuals) -> Optional[int]:
    """First round from which every prediction is right, or None."""
    lock = None
    for number in range(len(actuals), 0, -1):
        predicted = predictions[number - 1]
        if predicted is None or predicted != actuals[number - 1]:
            break
        lock = number
    return lock


@dataclass(frozen=True)
class MatchMetrics:
    normalized_score: tuple
    defection_rate: tuple
    preferred_option_rate: tuple
    coordination_rate: float
    prediction_lock_round: tuple

    def to_dict(self) -> dict:
        return {key: list(value) if isinstance(value, tuple) else value
                for key, value in dataclasses.asdict(self).items()}


def match_metrics(transcript: Transcript) -> MatchMetrics:
    if not transcript.valid:
        raise InvalidTranscriptException("Match {} is invalid".format(transcript.match_id))
    rounds = transcript.config.rounds
    history = transcript.history
    game = transcript.config.game

    def preferred_rate(seat):
        try:
            preferred = preferred_option(game, seat)
        except PreferenceTieException:
            return None
        return history.actions(seat).count(preferred) / rounds

    def lock_round(seat):
        predictions = [played.prediction(seat) for played in history]
        return prediction_lock_round(predictions, history.actions(seat.other))

    return MatchMetrics(
        normalized_score=tuple(normalized_score(transcript, seat) for seat in Seat),
        defection_rate=tuple(history.actions(seat).count(DEFECT) / rounds for seat in Seat),
        preferred_option_rate=tuple(preferred_rate(seat) for seat in Seat),
        coordination_rate=sum(1 for played in history if played.actions[0] == played.actions[1]) / rounds,
        prediction_lock_round=tuple(lock_round(seat) for seat in Seat),
    )


def observe_match(transcript: Transcript, observer: AgentSpec, target=Seat.P2,
                  registry: Optional[ProviderRegistry] = None, run_log: Optional[RunLog] = None) -> Observation:
    """Replay a finished match to an observer that predicts ``target``'s move every round."""
    registry = registry or ProviderRegistry()
    target = Seat(target)
    config = transcript.config
    watcher = LlmObserver(observer, config.game, registry.get(observer.provider),
                          rounds=config.rounds, template=config.template, run_log=run_log)
    predictions, refs = [], []
    history = History()
    for played in transcript.rounds:
        prediction, completions = watcher.predict(history, target)
        predictions.append(prediction)
        refs.append(completions)
        history = history.extended(played)
    return Observation(
        observer=observer.label,
        target=int(target),
        predictions=tuple(predictions),
        lock_round=prediction_lock_round(predictions, history.actions(target)),
        completions=tuple(refs),
    )


def with_observation(transcript: Transcript, observation: Observation) -> Transcript:
    return dataclasses.replace(transcript, observations=transcript.observations + (observation,))


def save_transcript(transcript: Transcript, path: str):
    temporary = "{}.partial".format(path)
    with open(temporary, "w", encoding="utf-8") as handle:
        json.dump(transcript.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.replace(temporary, path)


def load_transcript(path: str) -> Transcript:
    with open(path, encoding="utf-8") as handle:
        return Transcript.from_dict(json.load(handle))
