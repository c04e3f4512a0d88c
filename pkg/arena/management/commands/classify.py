from django.core.management.base import BaseCommand, CommandError

from arena.games import (
    GameException, canonicalize, equilibrium_report, game_family, is_prisoners_dilemma, resolve_game,
)


class Command(BaseCommand):
    help = "Show the family and equilibrium structure of games"

    def add_arguments(self, parser):
        parser.add_argument("--game", action="append", required=True,
                            help="pd, bos, ordinal-NNN, sweep:BASE:STEPS:K or a JSON game file; repeatable")

    def handle(self, *args, **options):
        for identifier in options["game"]:
            try:
                game = resolve_game(identifier)
            except GameException as e:
                raise CommandError(str(e))
            family = game_family(game)
            report = equilibrium_report(game)
            labels = game.actions_p1, game.actions_p2
            cells = ", ".join("({},{})".format(labels[0][row], labels[1][col]) for row, col in sorted(report.pure_nash))

            def dominant(player, action):
                return labels[player - 1][action] if action is not None else "none"

            self.stdout.write(self.style.MIGRATE_HEADING(game.name or identifier))
            self.stdout.write("  family              {}".format(family.value if family else "unranked (tied payoffs)"))
            if family is not None:
                key = "".join(str(rank) for rank in canonicalize(game.ordinal()).key)
                self.stdout.write("  canonical ranks     {}".format(key))
            self.stdout.write("  pure equilibria     {}".format(cells or "none"))
            self.stdout.write("  dominant actions    {} / {}".format(dominant(1, report.dominant_p1),
                                                                    dominant(2, report.dominant_p2)))
            self.stdout.write("  best-response cycle {}".format("yes" if report.best_response_cycle else "no"))
            self.stdout.write("  prisoner's dilemma  {}".format("yes" if is_prisoners_dilemma(game) else "no"))
