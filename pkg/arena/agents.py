"""
Players: the scripted strategies and the model-backed player.

Scripted strategies are pure functions of (seat, game, history). A model
seat renders its prompt, asks its provider for one token and parses it,
asking again up to ``ARENA_PARSE_RETRIES`` times before giving up on the
move.
"""
import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from arena.conf import settings
from arena.games import CELLS, pure_nash
from arena.history import COOPERATE, DEFECT, History, Seat
from arena.prompting import (
    BASE_VARIANT, ChoiceParseException, Intervention, NO_INTERVENTION, PredictionMode, PromptException,
    PromptVariant, parse_choice, render_history_line, render_round_prompt, render_rules,
)
from arena.providers import PromptContext, ProviderRegistry, RunLog

logger = logging.getLogger("arena")

ACTION_ALIASES = {
    "0": DEFECT, "f": DEFECT, "d": DEFECT, "defect": DEFECT,
    "1": COOPERATE, "j": COOPERATE, "c": COOPERATE, "cooperate": COOPERATE,
}


class AgentException(Exception):
    pass


class AgentSpecException(AgentException):
    pass


class PreferenceTieException(AgentException):
    pass


class MoveException(AgentException):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class AgentKind(Enum):
    CONSTANT = "constant"
    DEFECT_THEN_COOPERATE = "defect-then-cooperate"
    ALTERNATOR = "alternator"
    LLM = "llm"


def parse_action(value) -> int:
    try:
        return ACTION_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise AgentSpecException("Unknown action '{}'".format(value))


@dataclass(frozen=True)
class AgentSpec:
    kind: AgentKind
    action: Optional[int] = None
    provider: Optional[str] = None
    variant: str = BASE_VARIANT.id
    intervention: str = NO_INTERVENTION.id
    predict_then_act: bool = False
    name: str = ""

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, AgentKind) else AgentKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is AgentKind.LLM:
            if not self.provider:
                raise AgentSpecException("Model agents need a provider")
        elif self.provider:
            raise AgentSpecException("Scripted agent {} cannot use a provider".format(kind.value))
        if kind is AgentKind.CONSTANT:
            if self.action not in (DEFECT, COOPERATE):
                raise AgentSpecException("Constant agents need an action")
        elif self.action is not None:
            raise AgentSpecException("Only constant agents take an action")
        try:
            PromptVariant.from_id(self.variant)
            Intervention.from_id(self.intervention)
        except PromptException as e:
            raise AgentSpecException(str(e)) from e

    @property
    def is_llm(self) -> bool:
        return self.kind is AgentKind.LLM

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind is AgentKind.CONSTANT:
            return "constant-{}".format("D" if self.action == DEFECT else "C")
        if self.kind is AgentKind.LLM:
            return self.provider
        return self.kind.value

    @classmethod
    def parse(cls, text) -> "AgentSpec":
        """``constant:D``, ``defect-then-cooperate``, ``alternator`` or ``llm:<provider>``."""
        if isinstance(text, AgentSpec):
            return text
        if isinstance(text, dict):
            return cls.from_dict(text)
        kind, _, argument = str(text).strip().partition(":")
        try:
            kind = AgentKind(kind)
        except ValueError:
            raise AgentSpecException("Unknown agent '{}'".format(text))
        if kind is AgentKind.CONSTANT:
            return cls(kind, action=parse_action(argument))
        if kind is AgentKind.LLM:
            return cls(kind, provider=argument)
        if argument:
            raise AgentSpecException("Agent {} takes no argument".format(kind.value))
        return cls(kind)

    def to_dict(self) -> dict:
        document = {"kind": self.kind.value}
        if self.name:
            document["name"] = self.name
        if self.kind is AgentKind.CONSTANT:
            document["action"] = self.action
        if self.is_llm:
            document.update(provider=self.provider, variant=self.variant,
                            intervention=self.intervention, predict_then_act=self.predict_then_act)
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "AgentSpec":
        if "kind" not in document:
            raise AgentSpecException("Agent definition has no kind")
        action = document.get("action")
        try:
            return cls(
                kind=AgentKind(document["kind"]),
                action=parse_action(action) if action is not None else None,
                provider=document.get("provider"),
                variant=document.get("variant", BASE_VARIANT.id),
                intervention=document.get("intervention", NO_INTERVENTION.id),
                predict_then_act=bool(document.get("predict_then_act", False)),
                name=document.get("name", ""),
            )
        except ValueError as e:
            raise AgentSpecException("Unknown agent kind '{}'".format(document["kind"])) from e


def preferred_option(game, seat) -> int:
    """This seat's action in its best cell: among the two coordination cells if the game has them."""
    seat = Seat(seat)
    equilibria = sorted(pure_nash(game))
    candidates = equilibria if len(equilibria) == 2 else list(CELLS)
    best = max(game.value(seat, *cell) for cell in candidates)
    winners = [cell for cell in candidates if game.value(seat, *cell) == best]
    if len(winners) > 1:
        raise PreferenceTieException("Seat {} has no single preferred cell in {}".format(int(seat), game.name))
    return winners[0][seat.index]


def scripted_move(spec: AgentSpec, seat, game, history: History) -> int:
    if spec.kind is AgentKind.CONSTANT:
        return spec.action
    if spec.kind is AgentKind.DEFECT_THEN_COOPERATE:
        return DEFECT if not len(history) else COOPERATE
    if spec.kind is AgentKind.ALTERNATOR:
        # starts with the other seat's preferred option
        start = preferred_option(game, Seat(seat).other)
        return start if len(history) % 2 == 0 else 1 - start
    raise AgentSpecException("{} is not a scripted agent".format(spec.label))


@dataclass(frozen=True)
class Decision:
    action: int
    prediction: Optional[int] = None
    completions: tuple = ()


class Player:

    def __init__(self, spec: AgentSpec, seat, game):
        self.spec = spec
        self.seat = Seat(seat)
        self.game = game

    def decide(self, history: History) -> Decision:
        raise NotImplementedError


class ScriptedPlayer(Player):

    def decide(self, history):
        return Decision(scripted_move(self.spec, self.seat, self.game, history))


def ask_for_choice(provider, prompt: str, context: PromptContext, variant: PromptVariant,
                   run_log: RunLog, refs: list, params=None) -> int:
    """One parsed option from the provider; unparsable answers are re-asked without the cache."""
    raw = None
    attempts = settings.ARENA_PARSE_RETRIES + 1
    for attempt in range(attempts):
        asked = dataclasses.replace(context, sequence=context.sequence + attempt)
        record = provider.complete_record(prompt, params, asked, use_cache=attempt == 0, attempt=attempt)
        refs.append(run_log.append(record))
        try:
            return parse_choice(record.completion, variant)
        except ChoiceParseException as e:
            raw = e.raw
            logger.warning("%s answered %r (%s), attempt %d of %d",
                           provider.provider_id, raw, context.query, attempt + 1, attempts)
    raise MoveException("{} gave no legal option after {} attempts".format(provider.provider_id, attempts), raw=raw)


class LlmPlayer(Player):

    def __init__(self, spec, seat, game, provider, *, variant: PromptVariant = BASE_VARIANT,
                 intervention: Intervention = NO_INTERVENTION, mode: PredictionMode = PredictionMode.NONE,
                 rounds: Optional[int] = None, template: Optional[str] = None,
                 run_log: Optional[RunLog] = None, seed: Optional[int] = None):
        super().__init__(spec, seat, game)
        if mode is PredictionMode.PREDICT_AS_OBSERVER:
            raise AgentSpecException("Observers do not take a seat")
        self.provider = provider
        self.variant = variant
        self.intervention = intervention
        self.mode = mode
        self.template = template or settings.ARENA_TEMPLATE
        self.run_log = run_log if run_log is not None else RunLog()
        self.params = provider.params if seed is None else dataclasses.replace(provider.params, seed=seed)
        self.rules = render_rules(game, variant, self.seat, rounds, self.template)
        self.asked = 0
        self._history_lines = []

    def _lines(self, history: History) -> list:
        for played in history.rounds[len(self._history_lines):]:
            self._history_lines.append(render_history_line(played, self.seat, self.variant, self.template))
        return self._history_lines[:len(history)]

    def _prompt(self, history, mode, prediction=None) -> str:
        return render_round_prompt(self.rules, self.seat, history, self.intervention, mode, self.variant,
                                   prediction=prediction, template=self.template,
                                   history_lines=self._lines(history))

    def _ask(self, prompt, query, history, refs) -> int:
        context = PromptContext(self.seat, self.game, history, query, self.variant,
                                self.seat.other if query == "predict" else None, sequence=self.asked)
        before = len(refs)
        try:
            return ask_for_choice(self.provider, prompt, context, self.variant, self.run_log, refs, self.params)
        finally:
            self.asked += len(refs) - before

    def decide(self, history):
        refs = []
        prediction = None
        action_mode = PredictionMode.NONE
        if self.mode is PredictionMode.PREDICT_AS_PLAYER:
            prediction = self._ask(self._prompt(history, self.mode), "predict", history, refs)
        elif self.mode is PredictionMode.PREDICT_THEN_ACT:
            prediction = self._ask(self._prompt(history, self.mode), "predict", history, refs)
            action_mode = self.mode
        prompt = self._prompt(history, action_mode, prediction if action_mode is not PredictionMode.NONE else None)
        action = self._ask(prompt, "action", history, refs)
        return Decision(action, prediction, tuple(refs))


class LlmObserver:
    """Predicts a seat's moves in a game it does not play."""

    def __init__(self, spec: AgentSpec, game, provider, *, rounds: Optional[int] = None,
                 template: Optional[str] = None, run_log: Optional[RunLog] = None):
        if not spec.is_llm:
            raise AgentSpecException("Only model agents can observe")
        self.spec = spec
        self.game = game
        self.provider = provider
        self.variant = PromptVariant.from_id(spec.variant)
        self.template = template or settings.ARENA_TEMPLATE
        self.run_log = run_log if run_log is not None else RunLog()
        self.rules = render_rules(game, self.variant, None, rounds, self.template)
        self.asked = 0

    def predict(self, history: History, target) -> tuple:
        target = Seat(target)
        refs = []
        prompt = render_round_prompt(self.rules, target, history, NO_INTERVENTION,
                                     PredictionMode.PREDICT_AS_OBSERVER, self.variant, template=self.template)
        context = PromptContext(None, self.game, history, "observe", self.variant, target, sequence=self.asked)
        try:
            prediction = ask_for_choice(self.provider, prompt, context, self.variant, self.run_log, refs)
        finally:
            self.asked += len(refs)
        return prediction, tuple(refs)


def build_player(spec: AgentSpec, seat, game, *, registry: Optional[ProviderRegistry] = None,
                 variant: Optional[str] = None, intervention: Optional[str] = None, mode=None,
                 rounds: Optional[int] = None, template: Optional[str] = None,
                 run_log: Optional[RunLog] = None, seed: Optional[int] = None) -> Player:
    """A player for one seat of one match; match settings override the spec's own."""
    if not spec.is_llm:
        return ScriptedPlayer(spec, seat, game)
    registry = registry or ProviderRegistry()
    mode = PredictionMode.from_id(mode)
    if mode is PredictionMode.NONE and spec.predict_then_act:
        mode = PredictionMode.PREDICT_THEN_ACT
    chosen = Intervention.from_id(intervention)
    if chosen is NO_INTERVENTION:
        chosen = Intervention.from_id(spec.intervention)
    return LlmPlayer(
        spec, seat, game, registry.get(spec.provider),
        variant=PromptVariant.from_id(variant or spec.variant),
        intervention=chosen,
        mode=mode,
        rounds=rounds,
        template=template,
        run_log=run_log,
        seed=seed,
    )


def next_move(spec: AgentSpec, seat, game, history: History, *, rounds: Optional[int] = None, **kwargs) -> int:
    rounds = rounds or settings.ARENA_ROUNDS
    if len(history) >= rounds:
        raise AgentException("All {} rounds have been played".format(rounds))
    if not spec.is_llm:
        return scripted_move(spec, seat, game, history)
    return build_player(spec, seat, game, rounds=rounds, **kwargs).decide(history).action
