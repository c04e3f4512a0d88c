"""
2x2 games: concrete payoff bimatrices, the strict-ordinal game space and the
family taxonomy used to group results.

Payoff tables are player-major: ``payoffs[player - 1][row][col]``. Row is
the action of player 1, column the action of player 2, and action 0 / 1 are
labelled "F" / "J" unless the game says otherwise.
"""
import functools
import itertools
import json
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from arena.conf import settings

logger = logging.getLogger("arena")

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))
PLAYERS = (1, 2)
RANKS = (1, 2, 3, 4)
DEFAULT_ACTIONS = ("F", "J")


class GameException(Exception):
    pass


class GameValidationException(GameException):
    pass


class NotACoordinationGameException(GameException):
    pass


class UnknownGameException(GameException):
    pass


class GameFamily(Enum):
    WIN_WIN = "WinWin"
    PRISONERS_DILEMMA = "PrisonersDilemma"
    UNFAIR = "Unfair"
    CYCLIC = "Cyclic"
    BIASED = "Biased"
    SECOND_BEST = "SecondBest"
    OTHER = "Other"


NAMED_FAMILIES = tuple(family for family in GameFamily if family is not GameFamily.OTHER)


def _as_table(values) -> tuple:
    try:
        array = np.asarray(values)
    except (TypeError, ValueError) as e:
        raise GameValidationException("Payoff table is not a 2x2x2 array") from e
    if array.shape != (2, 2, 2):
        raise GameValidationException("Payoff table must have shape 2x2x2, got {}".format(array.shape))
    if not np.issubdtype(array.dtype, np.integer):
        raise GameValidationException("Payoffs must be integers")
    return tuple(tuple(tuple(int(v) for v in row) for row in player) for player in array.tolist())


def _outcome(game, player: int, own: int, other: int) -> int:
    if player == 1:
        return game.value(1, own, other)
    return game.value(2, other, own)


@dataclass(frozen=True)
class BimatrixGame:
    payoffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "payoffs", _as_table(self.payoffs))

    def value(self, player: int, row: int, col: int) -> int:
        return self.payoffs[player - 1][row][col]

    def cell_values(self, cell) -> tuple:
        row, col = cell
        return self.value(1, row, col), self.value(2, row, col)

    def max_value(self, player: int) -> int:
        return max(self.value(player, row, col) for row, col in CELLS)

    @property
    def matrix(self) -> np.ndarray:
        array = np.array(self.payoffs, dtype=int)
        array.setflags(write=False)
        return array


@dataclass(frozen=True)
class OrdinalGame(BimatrixGame):
    """Strict ordinal game: each player ranks the four cells 1 (worst) to 4 (best)."""

    def __post_init__(self):
        super().__post_init__()
        for player in PLAYERS:
            ranks = sorted(self.value(player, row, col) for row, col in CELLS)
            if tuple(ranks) != RANKS:
                raise GameValidationException(
                    "Ranks of player {} are not a permutation of 1..4: {}".format(player, ranks))

    @classmethod
    def from_ranks(cls, p1, p2) -> "OrdinalGame":
        """Build from two row-major rank sequences (r00, r01, r10, r11)."""
        return cls([[list(p1[:2]), list(p1[2:])], [list(p2[:2]), list(p2[2:])]])

    @classmethod
    def from_key(cls, key) -> "OrdinalGame":
        return cls.from_ranks(key[:4], key[4:])

    @property
    def key(self) -> tuple:
        return tuple(self.value(player, row, col) for player in PLAYERS for row, col in CELLS)

    @property
    def is_canonical(self) -> bool:
        return canonicalize(self) == self

    def to_payoff_game(self, name: str = "") -> "PayoffGame":
        return PayoffGame(self.payoffs, name=name)


@dataclass(frozen=True)
class PayoffGame(BimatrixGame):
    actions_p1: tuple = DEFAULT_ACTIONS
    actions_p2: tuple = DEFAULT_ACTIONS
    name: str = ""

    def __post_init__(self):
        super().__post_init__()
        for player in PLAYERS:
            if any(self.value(player, row, col) < 0 for row, col in CELLS):
                raise GameValidationException("Payoffs must be non-negative")
            if self.max_value(player) <= 0:
                raise GameValidationException("Player {} never earns anything".format(player))
        for attribute in ("actions_p1", "actions_p2"):
            actions = tuple(str(action) for action in getattr(self, attribute))
            if len(actions) != 2 or len(set(actions)) != 2 or not all(actions):
                raise GameValidationException("{} must be two distinct labels".format(attribute))
            object.__setattr__(self, attribute, actions)

    def actions(self, player: int) -> tuple:
        return self.actions_p1 if player == 1 else self.actions_p2

    def ordinal(self) -> OrdinalGame:
        """Rank table of the game; raises when a player has tied payoffs."""
        tables = []
        for player in PLAYERS:
            values = [self.value(player, row, col) for row, col in CELLS]
            if len(set(values)) != len(values):
                raise GameValidationException("Game {} has tied payoffs for player {}".format(self.name, player))
            order = sorted(values)
            tables.append([order.index(v) + 1 for v in values])
        return OrdinalGame.from_ranks(*tables)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "actions": [list(self.actions_p1), list(self.actions_p2)],
            "payoffs": [[list(row) for row in player] for player in self.payoffs],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "PayoffGame":
        if "payoffs" not in document:
            raise GameValidationException("Game definition has no payoffs")
        actions = document.get("actions", [DEFAULT_ACTIONS, DEFAULT_ACTIONS])
        if len(actions) == 2 and all(isinstance(action, str) for action in actions):
            actions = [actions, actions]
        if len(actions) != 2:
            raise GameValidationException("actions must list the options of both players")
        return cls(document["payoffs"], tuple(actions[0]), tuple(actions[1]), name=document.get("name", ""))


def load_game(path: str) -> PayoffGame:
    try:
        with open(path, encoding="utf-8") as handle:
            document = json.load(handle)
    except ValueError as e:
        raise GameValidationException("{} is not valid JSON".format(path)) from e
    game = PayoffGame.from_dict(document)
    if not game.name:
        game = PayoffGame(game.payoffs, game.actions_p1, game.actions_p2,
                          name=os.path.splitext(os.path.basename(path))[0])
    return game


# Relabelings of the actions, applied to both players' tables at once.
SYMMETRIES = {
    "identity": lambda m: m,
    "swap_rows": lambda m: m[:, ::-1, :],
    "swap_cols": lambda m: m[:, :, ::-1],
    "swap_both": lambda m: m[:, ::-1, ::-1],
}


def apply_symmetry(game: OrdinalGame, name: str) -> OrdinalGame:
    return OrdinalGame(SYMMETRIES[name](game.matrix).tolist())


def orbit(game: OrdinalGame) -> list:
    return [apply_symmetry(game, name) for name in SYMMETRIES]


def canonicalize(game) -> OrdinalGame:
    """Lexicographically smallest member of the game's relabeling orbit."""
    if not isinstance(game, OrdinalGame):
        game = OrdinalGame(game)
    return min(orbit(game), key=lambda member: member.key)


@functools.lru_cache(maxsize=None)
def _canonical_games() -> tuple:
    games = []
    for p1 in itertools.permutations(RANKS):
        for p2 in itertools.permutations(RANKS):
            game = OrdinalGame.from_ranks(p1, p2)
            if canonicalize(game) == game:
                games.append(game)
    return tuple(games)


def enumerate_games() -> list:
    """All 144 canonical strict-ordinal games, ordered by rank key."""
    return list(_canonical_games())


def pure_nash(game) -> frozenset:
    return frozenset(
        (row, col) for row, col in CELLS
        if game.value(1, row, col) >= game.value(1, 1 - row, col)
        and game.value(2, row, col) >= game.value(2, row, 1 - col)
    )


def dominant_action(game, player: int) -> Optional[int]:
    for action in (0, 1):
        if all(_outcome(game, player, action, reply) > _outcome(game, player, 1 - action, reply)
               for reply in (0, 1)):
            return action
    return None


def _improving_move(game, cell):
    row, col = cell
    if game.value(1, 1 - row, col) > game.value(1, row, col):
        return 1 - row, col
    if game.value(2, row, 1 - col) > game.value(2, row, col):
        return row, 1 - col
    return None


def best_response_cycle(game) -> bool:
    """Follow strictly improving unilateral moves from the top-left cell.

    True when the walk comes back to its start after visiting all four cells
    without ever resting.
    """
    cell = CELLS[0]
    visited = [cell]
    for _ in CELLS:
        cell = _improving_move(game, cell)
        if cell is None:
            return False
        visited.append(cell)
    return visited[-1] == visited[0] and set(visited) == set(CELLS)


@dataclass(frozen=True)
class EquilibriumReport:
    pure_nash: frozenset
    dominant_p1: Optional[int]
    dominant_p2: Optional[int]
    best_response_cycle: bool

    def to_dict(self) -> dict:
        return {
            "pure_nash": [list(cell) for cell in sorted(self.pure_nash)],
            "dominant_p1": self.dominant_p1,
            "dominant_p2": self.dominant_p2,
            "best_response_cycle": self.best_response_cycle,
        }


def equilibrium_report(game) -> EquilibriumReport:
    return EquilibriumReport(
        pure_nash=pure_nash(game),
        dominant_p1=dominant_action(game, 1),
        dominant_p2=dominant_action(game, 2),
        best_response_cycle=best_response_cycle(game),
    )


def _pareto_dominated(game, cell) -> bool:
    first, second = game.cell_values(cell)
    return any(game.value(1, row, col) > first and game.value(2, row, col) > second for row, col in CELLS)


def is_prisoners_dilemma(game) -> bool:
    """Both players have a dominant action and the cell it leads to is Pareto-dominated."""
    first, second = dominant_action(game, 1), dominant_action(game, 2)
    if first is None or second is None:
        return False
    return _pareto_dominated(game, (first, second))


def classify(game) -> GameFamily:
    ranks = game if isinstance(game, OrdinalGame) else game.ordinal()
    equilibria = sorted(pure_nash(ranks))
    outcomes = [ranks.cell_values(cell) for cell in equilibria]

    if any(ranks.cell_values(cell) == (4, 4) for cell in CELLS):
        return GameFamily.WIN_WIN
    if any(_pareto_dominated(ranks, cell) for cell in equilibria):
        return GameFamily.PRISONERS_DILEMMA
    if outcomes and all(max(outcome) == 4 and min(outcome) <= 2 for outcome in outcomes):
        return GameFamily.UNFAIR
    if not outcomes:
        return GameFamily.CYCLIC
    if any(outcome in ((4, 3), (3, 4)) for outcome in outcomes):
        return GameFamily.BIASED
    if (3, 3) in outcomes:
        return GameFamily.SECOND_BEST
    return GameFamily.OTHER


def game_family(game) -> Optional[GameFamily]:
    """Family of any game, or None when its payoffs are not strictly ordered."""
    try:
        return classify(game)
    except GameValidationException:
        return None


def family_census() -> dict:
    counts = Counter(classify(game) for game in enumerate_games())
    return {family: counts.get(family, 0) for family in GameFamily}


def census_deltas(census: dict) -> dict:
    target = settings.ARENA_CENSUS_TARGET
    return {family: census[family] - target.get(family.value, 0) for family in GameFamily}


def ordinal_game_id(index: int) -> str:
    return "ordinal-{:03d}".format(index)


def enumeration_records() -> list:
    records = []
    for index, game in enumerate(enumerate_games(), start=1):
        records.append({
            "id": ordinal_game_id(index),
            "ranks": [[list(row) for row in player] for player in game.payoffs],
            "family": classify(game).value,
            "pure_nash": [list(cell) for cell in sorted(pure_nash(game))],
        })
    return records


def prisoners_dilemma() -> PayoffGame:
    return PayoffGame(settings.ARENA_PD_PAYOFFS, name="pd")


def battle_of_the_sexes() -> PayoffGame:
    return PayoffGame(settings.ARENA_BOS_PAYOFFS, name="bos")


def _interpolate(start: int, end: int, fraction: float) -> int:
    return int(math.floor(start + (end - start) * fraction + 0.5))


def payoff_sweep(base: PayoffGame, steps: int) -> list:
    """Games moving player 1's preference from one coordination cell to the other.

    Player 2's coordination payoffs move the opposite way; miscoordination
    cells are left alone.
    """
    if steps < 1:
        raise GameValidationException("steps must be a positive integer")
    equilibria = sorted(pure_nash(base))
    if len(equilibria) != 2:
        raise NotACoordinationGameException("{} does not have two coordination cells".format(base.name))
    first, second = equilibria
    if base.value(1, *first) == base.value(1, *second):
        raise NotACoordinationGameException("Player 1 has no preferred coordination cell")
    preferred, other = (first, second) if base.value(1, *first) > base.value(1, *second) else (second, first)
    if not base.value(2, *other) > base.value(2, *preferred):
        raise NotACoordinationGameException("Players agree on the coordination cell")

    p1_high, p1_low = base.value(1, *preferred), base.value(1, *other)
    p2_low, p2_high = base.value(2, *preferred), base.value(2, *other)
    games = []
    for step in range(steps):
        fraction = step / (steps - 1) if steps > 1 else 0.0
        table = [[list(row) for row in player] for player in base.payoffs]
        table[0][preferred[0]][preferred[1]] = _interpolate(p1_high, p1_low, fraction)
        table[0][other[0]][other[1]] = _interpolate(p1_low, p1_high, fraction)
        table[1][preferred[0]][preferred[1]] = _interpolate(p2_low, p2_high, fraction)
        table[1][other[0]][other[1]] = _interpolate(p2_high, p2_low, fraction)
        games.append(PayoffGame(table, base.actions_p1, base.actions_p2,
                                name="{}-sweep-{}".format(base.name or "game", step + 1)))
    return games


def named_games() -> dict:
    return {"pd": prisoners_dilemma(), "bos": battle_of_the_sexes()}


_ORDINAL_ID = re.compile(r"ordinal-(\d+)")
_SWEEP_ID = re.compile(r"sweep:([\w.-]+):(\d+)(?::(\d+))?")


def _sweep(base_id: str, steps: str) -> list:
    return payoff_sweep(resolve_game(base_id), int(steps))


def resolve_game(identifier: str) -> PayoffGame:
    """One game from an id: ``pd``, ``bos``, ``ordinal-NNN``, ``sweep:BASE:STEPS:K`` or a JSON file."""
    games = named_games()
    if identifier in games:
        return games[identifier]
    match = _ORDINAL_ID.fullmatch(identifier)
    if match:
        index = int(match.group(1))
        ordinal_games = enumerate_games()
        if not 1 <= index <= len(ordinal_games):
            raise UnknownGameException("No ordinal game number {}".format(index))
        return ordinal_games[index - 1].to_payoff_game(name=ordinal_game_id(index))
    match = _SWEEP_ID.fullmatch(identifier)
    if match and match.group(3):
        sweep = _sweep(match.group(1), match.group(2))
        index = int(match.group(3))
        if not 1 <= index <= len(sweep):
            raise UnknownGameException("Sweep {} has no game number {}".format(identifier, index))
        return sweep[index - 1]
    if identifier.endswith(".json") and os.path.isfile(identifier):
        return load_game(identifier)
    raise UnknownGameException("Unknown game '{}'".format(identifier))


def resolve_games(selection, include_other: bool = False) -> list:
    """Expand a game selection: ``all``, ``family:<Name>``, ``sweep:BASE:STEPS``, an id or a list of these."""
    if isinstance(selection, (list, tuple)):
        games = []
        for item in selection:
            games.extend(resolve_games(item, include_other))
        return games
    if selection == "all":
        return [
            game.to_payoff_game(name=ordinal_game_id(index))
            for index, game in enumerate(enumerate_games(), start=1)
            if include_other or classify(game) is not GameFamily.OTHER
        ]
    if selection.startswith("family:"):
        wanted = selection.split(":", 1)[1]
        try:
            family = GameFamily(wanted)
        except ValueError as e:
            raise UnknownGameException("Unknown game family '{}'".format(wanted)) from e
        return [
            game.to_payoff_game(name=ordinal_game_id(index))
            for index, game in enumerate(enumerate_games(), start=1)
            if classify(game) is family
        ]
    match = _SWEEP_ID.fullmatch(selection)
    if match and not match.group(3):
        return _sweep(match.group(1), match.group(2))
    return [resolve_game(selection)]
