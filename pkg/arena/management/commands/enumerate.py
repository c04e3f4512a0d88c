import json

from django.core.management.base import BaseCommand, CommandError

from arena.games import GameFamily, census_deltas, enumeration_records, family_census


class Command(BaseCommand):
    help = "Write the 144 strict ordinal 2x2 games with their families as JSON lines and print the census"

    def add_arguments(self, parser):
        parser.add_argument("--out", default="games.jsonl", help="JSON-lines file to write")

    def handle(self, *args, **options):
        records = enumeration_records()
        try:
            with open(options["out"], "w", encoding="utf-8") as handle:
                for record in records:
                    handle.write(json.dumps(record, sort_keys=True) + "\n")
        except OSError as e:
            raise CommandError("Cannot write {}: {}".format(options["out"], e))

        census = family_census()
        deltas = census_deltas(census)
        self.stdout.write("Wrote {} games to {}".format(len(records), options["out"]))
        for family in GameFamily:
            self.stdout.write("{:<18}{:>4}  delta {:+d}".format(family.value, census[family], deltas[family]))
        self.stdout.write("{:<18}{:>4}".format("Total", sum(census.values())))
