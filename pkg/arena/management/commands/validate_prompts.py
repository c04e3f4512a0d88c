import difflib
import os
import re

from django.core.management.base import BaseCommand, CommandError

from arena.conf import settings
from arena.games import battle_of_the_sexes, prisoners_dilemma
from arena.history import ACTIONS
from arena.prompting import (
    BASE_VARIANT, ChoiceParseException, PromptException, label_text, parse_choice, prompt_corpus, render_rules,
    variant_space,
)

PAYOFF_CLAUSE = re.compile(r"you earn (\d+) (\w+) and the other player earns (\d+) \2")


def payoff_pairs(rules: str) -> list:
    return sorted((int(own), int(other)) for own, _, other in PAYOFF_CLAUSE.findall(rules))


class Command(BaseCommand):
    help = "Compare rendered prompts with the golden corpus and check option parsing for every variant"

    def add_arguments(self, parser):
        parser.add_argument("--template", default=None, help="template id, defaults to ARENA_TEMPLATE")
        parser.add_argument("--goldens", default=None, help="golden root, defaults to ARENA_GOLDENS_DIR")
        parser.add_argument("--regenerate", action="store_true", help="rewrite the goldens from the templates")

    def handle(self, *args, **options):
        template = options["template"] or settings.ARENA_TEMPLATE
        folder = os.path.join(options["goldens"] or settings.ARENA_GOLDENS_DIR, template)
        try:
            corpus = prompt_corpus(template)
        except PromptException as e:
            raise CommandError(str(e))

        if options["regenerate"]:
            os.makedirs(folder, exist_ok=True)
            for name, prompt in corpus.items():
                with open(os.path.join(folder, name + ".txt"), "w", encoding="utf-8", newline="") as handle:
                    handle.write(prompt)
            self.stdout.write("Wrote {} goldens to {}".format(len(corpus), folder))
            return

        failures = []
        for name, prompt in sorted(corpus.items()):
            path = os.path.join(folder, name + ".txt")
            if not os.path.isfile(path):
                failures.append("missing golden {}".format(path))
                continue
            with open(path, encoding="utf-8", newline="") as handle:
                expected = handle.read()
            if expected != prompt:
                diff = difflib.unified_diff(expected.splitlines(), prompt.splitlines(),
                                            fromfile=path, tofile="rendered " + name, lineterm="")
                failures.append("\n".join(diff))
        if os.path.isdir(folder):
            for filename in sorted(os.listdir(folder)):
                if filename.endswith(".txt") and filename[:-4] not in corpus:
                    failures.append("stale golden {}".format(os.path.join(folder, filename)))

        round_trips = 0
        for variant in variant_space():
            for action in ACTIONS:
                try:
                    parsed = parse_choice(label_text(action, variant), variant)
                except ChoiceParseException as e:
                    parsed = e
                if parsed != action:
                    failures.append("variant {} parses {!r} as {}".format(
                        variant.id, label_text(action, variant), parsed))
                else:
                    round_trips += 1

        for game in (prisoners_dilemma(), battle_of_the_sexes()):
            expected_pairs = payoff_pairs(render_rules(game, BASE_VARIANT, template=template))
            for variant in variant_space():
                pairs = payoff_pairs(render_rules(game, variant, template=template))
                if len(pairs) != 4 or pairs != expected_pairs:
                    failures.append("variant {} changes the payoffs of {}: {} != {}".format(
                        variant.id, game.name, pairs, expected_pairs))

        if failures:
            for failure in failures:
                self.stderr.write(failure)
            raise CommandError("{} prompt checks failed".format(len(failures)))
        self.stdout.write(self.style.SUCCESS("{} prompts match their goldens, {} parse round-trips pass".format(
            len(corpus), round_trips)))
