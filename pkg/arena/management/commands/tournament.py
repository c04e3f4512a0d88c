from django.core.management.base import BaseCommand, CommandError

from arena.conf import settings
from arena.config import ExperimentConfigException, load_experiment
from arena.reports import write_report
from arena.tournament import GridException, GridRunException, expand_grid, run_grid


class Command(BaseCommand):
    help = "Run the match grid of an experiment and write its report"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="experiment TOML")
        parser.add_argument("--out", default=None, help="output directory, overrides [experiment] output")
        parser.add_argument("--offline", action="store_true", help="forbid network requests")
        parser.add_argument("--include-other-families", action="store_true", default=None,
                            help="play all 144 ordinal games instead of the 136 in named families")
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--workers", type=int, default=None)

    def handle(self, *args, **options):
        try:
            experiment = load_experiment(options["config"], output=options["out"], seed=options["seed"],
                                         include_other_families=options["include_other_families"])
            registry = experiment.configure_providers(offline=options["offline"] or settings.ARENA_OFFLINE)
            configs = expand_grid(experiment.grid)
        except (ExperimentConfigException, GridException) as e:
            raise CommandError(str(e))
        self.stdout.write("{}: {} matches".format(experiment.name, len(configs)))

        try:
            result = run_grid(experiment.grid, experiment.output, registry,
                              max_workers=options["workers"] or experiment.max_workers)
        except GridRunException as e:
            result = e.result

        try:
            summary = write_report(result.run_dir, result.transcripts,
                                   agents=[agent.label for agent in experiment.agents],
                                   trajectory_games=experiment.trajectory_games, failures=result.failures)
        except OSError as e:
            raise CommandError("Cannot write the report: {}".format(e))

        self.stdout.write("Run directory: {}".format(result.run_dir.root))
        self.stdout.write("Played {} new matches; {} valid, {} invalid, {} failed".format(
            result.executed, summary["valid"], summary["invalid"], len(result.failures)))
        if result.failures or summary["invalid"]:
            raise CommandError("{} matches failed and {} are invalid".format(len(result.failures), summary["invalid"]))
        self.stdout.write(self.style.SUCCESS("Tournament complete"))
