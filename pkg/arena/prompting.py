"""
Prompt rendering and completion parsing.

Prompts are Django templates under ``arena/prompts/<template-id>/`` rendered
through the ``prompts`` template engine (autoescape off). Every prompt is
built from fragments: rules, an optional intervention, one history line per
past round, an optional prediction echo and a one-token query.
"""
import itertools
import logging
import string
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from django.template import TemplateDoesNotExist
from django.template.loader import get_template

from arena.conf import settings
from arena.games import PayoffGame, battle_of_the_sexes, prisoners_dilemma
from arena.history import COOPERATE, DEFECT, History, Round, Seat

logger = logging.getLogger("arena")

LABEL_SCHEMES = {
    "letters_FJ": ("F", "J"),
    "letters_other": ("Q", "Z"),
    "numeric": ("1", "2"),
}
OPTION_ORDERS = ("given", "swapped")
UNITS = ("points", "dollars", "coins")

TEMPLATE_ENGINE = "prompts"
GOLDEN_ROUNDS = 10

_TRIM = string.whitespace + string.punctuation


class PromptException(Exception):
    pass


class ChoiceParseException(PromptException):
    def __init__(self, raw, reason="no legal option"):
        super().__init__("Cannot parse {!r}: {}".format(raw, reason))
        self.raw = raw


class UnknownVariantException(PromptException):
    pass


class UnknownTemplateException(PromptException):
    pass


@dataclass(frozen=True)
class PromptVariant:
    label_scheme: str = "letters_FJ"
    option_order: str = "given"
    unit: str = "points"

    def __post_init__(self):
        if self.label_scheme not in LABEL_SCHEMES:
            raise UnknownVariantException("Unknown label scheme '{}'".format(self.label_scheme))
        if self.option_order not in OPTION_ORDERS:
            raise UnknownVariantException("Unknown option order '{}'".format(self.option_order))
        if self.unit not in UNITS:
            raise UnknownVariantException("Unknown unit '{}'".format(self.unit))

    @property
    def labels(self) -> tuple:
        return LABEL_SCHEMES[self.label_scheme]

    def label(self, action: int) -> str:
        return self.labels[action]

    @property
    def display_order(self) -> tuple:
        """Actions in the order they are presented."""
        return (0, 1) if self.option_order == "given" else (1, 0)

    @property
    def id(self) -> str:
        return "/".join((self.label_scheme, self.option_order, self.unit))

    @classmethod
    def from_id(cls, identifier: str) -> "PromptVariant":
        parts = identifier.split("/")
        if len(parts) != 3:
            raise UnknownVariantException("Variant id '{}' is not scheme/order/unit".format(identifier))
        return cls(*parts)


BASE_VARIANT = PromptVariant()


class InterventionKind(Enum):
    NONE = "none"
    FALLIBLE_OPPONENT = "fallible"
    EXPLICIT_SCHEDULE = "schedule"


@dataclass(frozen=True)
class Intervention:
    kind: InterventionKind = InterventionKind.NONE
    # empty means the default "defect once, then cooperate" schedule
    schedule: str = ""

    @property
    def id(self) -> str:
        if self.kind is InterventionKind.EXPLICIT_SCHEDULE and self.schedule:
            return "schedule:{}".format(self.schedule)
        return self.kind.value

    @classmethod
    def from_id(cls, identifier: Optional[str]) -> "Intervention":
        if isinstance(identifier, Intervention):
            return identifier
        if not identifier or identifier == "none":
            return NO_INTERVENTION
        if identifier == "fallible":
            return cls(InterventionKind.FALLIBLE_OPPONENT)
        if identifier == "schedule":
            return cls(InterventionKind.EXPLICIT_SCHEDULE)
        if identifier.startswith("schedule:"):
            return cls(InterventionKind.EXPLICIT_SCHEDULE, identifier.split(":", 1)[1].strip())
        raise UnknownVariantException("Unknown intervention '{}'".format(identifier))


NO_INTERVENTION = Intervention()


class PredictionMode(Enum):
    NONE = "none"
    PREDICT_AS_PLAYER = "predict"
    PREDICT_AS_OBSERVER = "observe"
    PREDICT_THEN_ACT = "predict-then-act"

    @classmethod
    def from_id(cls, identifier) -> "PredictionMode":
        if isinstance(identifier, cls):
            return identifier
        try:
            return cls(identifier or "none")
        except ValueError as e:
            raise UnknownVariantException("Unknown prediction mode '{}'".format(identifier)) from e


def template_exists(template: str) -> bool:
    try:
        get_template("{}/round.txt".format(template), using=TEMPLATE_ENGINE)
    except TemplateDoesNotExist:
        return False
    return True


def _render(template: str, fragment: str, **context) -> str:
    try:
        compiled = get_template("{}/{}.txt".format(template, fragment), using=TEMPLATE_ENGINE)
    except TemplateDoesNotExist as e:
        raise UnknownTemplateException("Template set '{}' has no '{}' fragment".format(template, fragment)) from e
    return compiled.render(context).strip()


def _options(variant: PromptVariant) -> dict:
    first, second = (variant.label(action) for action in variant.display_order)
    return {"first": first, "second": second}


def label_text(action: int, variant: PromptVariant) -> str:
    return variant.label(action)


def render_rules(game: PayoffGame, variant: PromptVariant = BASE_VARIANT, seat: Optional[Seat] = Seat.P1,
                 rounds: Optional[int] = None, template: Optional[str] = None) -> str:
    """Game rules as seen from ``seat``; ``seat=None`` gives the observer framing."""
    rounds = rounds or settings.ARENA_ROUNDS
    template = template or settings.ARENA_TEMPLATE
    order = variant.display_order

    if seat is None:
        lines = [_render(template, "observer_rules", rounds=rounds, **_options(variant))]
        for row, col in itertools.product(order, order):
            lines.append(_render(
                template, "observer_outcome",
                p1=variant.label(row), p2=variant.label(col),
                p1_payoff=game.value(1, row, col), p2_payoff=game.value(2, row, col),
                unit=variant.unit,
            ))
        return "\n".join(lines)

    seat = Seat(seat)
    lines = [_render(template, "rules", rounds=rounds, **_options(variant))]
    for own, other in itertools.product(order, order):
        cell = (own, other) if seat is Seat.P1 else (other, own)
        lines.append(_render(
            template, "outcome",
            own=variant.label(own), other=variant.label(other),
            own_payoff=game.value(seat, *cell), other_payoff=game.value(seat.other, *cell),
            unit=variant.unit,
        ))
    return "\n".join(lines)


def render_history_line(played: Round, seat: Optional[Seat], variant: PromptVariant,
                        template: Optional[str] = None) -> str:
    template = template or settings.ARENA_TEMPLATE
    if seat is None:
        return _render(
            template, "observer_history", number=played.number,
            p1=variant.label(played.action(Seat.P1)), p1_payoff=played.payoff(Seat.P1),
            p2=variant.label(played.action(Seat.P2)), p2_payoff=played.payoff(Seat.P2),
            unit=variant.unit,
        )
    seat = Seat(seat)
    return _render(
        template, "history", number=played.number,
        own=variant.label(played.action(seat)), own_payoff=played.payoff(seat),
        other=variant.label(played.action(seat.other)), other_payoff=played.payoff(seat.other),
        unit=variant.unit,
    )


def render_history(history: History, seat: Optional[Seat], variant: PromptVariant,
                   template: Optional[str] = None) -> list:
    return [render_history_line(played, seat, variant, template) for played in history]


def render_intervention(intervention: Intervention, variant: PromptVariant, template: Optional[str] = None) -> str:
    template = template or settings.ARENA_TEMPLATE
    if intervention.kind is InterventionKind.FALLIBLE_OPPONENT:
        return _render(template, "fallible")
    if intervention.kind is InterventionKind.EXPLICIT_SCHEDULE:
        return intervention.schedule or _render(
            template, "schedule", defect=variant.label(DEFECT), cooperate=variant.label(COOPERATE))
    return ""


def render_round_prompt(rules: str, seat: Seat, history: History, intervention=NO_INTERVENTION,
                        mode=PredictionMode.NONE, variant: PromptVariant = BASE_VARIANT, *,
                        prediction: Optional[int] = None, template: Optional[str] = None,
                        history_lines: Optional[list] = None) -> str:
    """The full prompt for the next round.

    ``seat`` is the seat being prompted, or for ``PREDICT_AS_OBSERVER`` the
    seat whose move is predicted; observer rules must then be rendered with
    ``seat=None``. In ``PREDICT_THEN_ACT`` the prompt without ``prediction``
    asks for the prediction, and passing the parsed prediction gives the
    action prompt with the prediction echoed. ``history_lines`` may carry
    lines already rendered for this seat.
    """
    template = template or settings.ARENA_TEMPLATE
    intervention = Intervention.from_id(intervention)
    mode = PredictionMode.from_id(mode)
    seat = Seat(seat)
    number = len(history) + 1
    intervention_text = echo = ""

    if mode is PredictionMode.PREDICT_AS_OBSERVER:
        if history_lines is None:
            history_lines = render_history(history, None, variant, template)
        query = _render(template, "query_observe", number=number, target=int(seat), **_options(variant))
    else:
        if history_lines is None:
            history_lines = render_history(history, seat, variant, template)
        intervention_text = render_intervention(intervention, variant, template)
        asks_prediction = (mode is PredictionMode.PREDICT_AS_PLAYER
                           or (mode is PredictionMode.PREDICT_THEN_ACT and prediction is None))
        query = _render(template, "query_predict" if asks_prediction else "query_action",
                        number=number, **_options(variant))
        if mode is PredictionMode.PREDICT_THEN_ACT and prediction is not None:
            echo = _render(template, "prediction", prediction=variant.label(prediction))

    return _render(template, "round", rules=rules, intervention=intervention_text,
                   history="\n".join(history_lines), prediction=echo, query=query)


def parse_choice(completion: str, variant: PromptVariant = BASE_VARIANT) -> int:
    text = (completion or "").strip(_TRIM).casefold()
    labels = [label.casefold() for label in variant.labels]
    if text in labels:
        return labels.index(text)
    if all(label in text for label in labels):
        raise ChoiceParseException(completion, "both options named")
    raise ChoiceParseException(completion)


def variant_space() -> list:
    return [
        PromptVariant(scheme, order, unit)
        for scheme, order, unit in itertools.product(LABEL_SCHEMES, OPTION_ORDERS, UNITS)
    ]


def golden_name(game: PayoffGame, case: str, variant: PromptVariant) -> str:
    return "{}-{}-{}-{}-{}".format(game.name, case, variant.label_scheme, variant.option_order, variant.unit)


def prompt_corpus(template: Optional[str] = None) -> dict:
    """Reference prompts: both default games, every variant, an opening and a mid-game round."""
    corpus = {}
    for game in (prisoners_dilemma(), battle_of_the_sexes()):
        midgame = History((
            Round(1, (DEFECT, COOPERATE), game.cell_values((DEFECT, COOPERATE))),
            Round(2, (COOPERATE, COOPERATE), game.cell_values((COOPERATE, COOPERATE))),
        ))
        cases = (("opening", Seat.P1, History()), ("midgame", Seat.P2, midgame))
        for variant in variant_space():
            for case, seat, history in cases:
                rules = render_rules(game, variant, seat, rounds=GOLDEN_ROUNDS, template=template)
                corpus[golden_name(game, case, variant)] = render_round_prompt(
                    rules, seat, history, NO_INTERVENTION, PredictionMode.NONE, variant, template=template)
    return corpus
