from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

# PD framing: "F" is defection, "J" is cooperation.
DEFECT = 0
COOPERATE = 1
ACTIONS = (DEFECT, COOPERATE)


class Seat(IntEnum):
    P1 = 1
    P2 = 2

    @property
    def other(self) -> "Seat":
        return Seat.P2 if self is Seat.P1 else Seat.P1

    @property
    def index(self) -> int:
        return self.value - 1


@dataclass(frozen=True)
class Round:
    number: int
    actions: tuple
    payoffs: tuple
    predictions: tuple = (None, None)
    completions: tuple = ((), ())

    def action(self, seat: Seat) -> int:
        return self.actions[seat.index]

    def payoff(self, seat: Seat) -> int:
        return self.payoffs[seat.index]

    def prediction(self, seat: Seat) -> Optional[int]:
        return self.predictions[seat.index]

    def to_dict(self) -> dict:
        return {
            "round": self.number,
            "actions": list(self.actions),
            "payoffs": list(self.payoffs),
            "predictions": list(self.predictions),
            "completions": [list(refs) for refs in self.completions],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "Round":
        return cls(
            number=document["round"],
            actions=tuple(document["actions"]),
            payoffs=tuple(document["payoffs"]),
            predictions=tuple(document.get("predictions", (None, None))),
            completions=tuple(tuple(refs) for refs in document.get("completions", ((), ()))),
        )


@dataclass(frozen=True)
class History:
    """Rounds played so far, oldest first."""
    rounds: tuple = ()

    def __len__(self):
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)

    def __getitem__(self, item):
        return self.rounds[item]

    def extended(self, played: Round) -> "History":
        if played.number != len(self.rounds) + 1:
            raise ValueError("Round {} recorded after {} rounds".format(played.number, len(self.rounds)))
        return History(self.rounds + (played,))

    def actions(self, seat: Seat) -> tuple:
        return tuple(played.action(seat) for played in self.rounds)

    def last_action(self, seat: Seat) -> Optional[int]:
        return self.rounds[-1].action(seat) if self.rounds else None
