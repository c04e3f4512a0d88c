import os

from django.core.management.base import BaseCommand, CommandError

from arena.config import ExperimentConfigException, load_experiment
from arena.reports import write_report
from arena.tournament import RunDirectory


class Command(BaseCommand):
    help = "Rebuild metrics, plots and trajectories from the transcripts of a run directory"

    def add_arguments(self, parser):
        parser.add_argument("--run", required=True, help="run-<digest> directory")
        parser.add_argument("--out", default=None, help="where to write the report, defaults to the run directory")
        parser.add_argument("--config", default=None, help="experiment TOML, for agent order and trajectory games")
        parser.add_argument("--trajectory-game", action="append", default=None)

    def handle(self, *args, **options):
        if not os.path.isdir(os.path.join(options["run"], "transcripts")):
            raise CommandError("{} is not a run directory".format(options["run"]))
        agents, trajectory_games = None, ("pd", "bos")
        if options["config"]:
            try:
                experiment = load_experiment(options["config"])
            except ExperimentConfigException as e:
                raise CommandError(str(e))
            agents = [agent.label for agent in experiment.agents]
            trajectory_games = experiment.trajectory_games
        if options["trajectory_game"]:
            trajectory_games = tuple(options["trajectory_game"])

        try:
            transcripts = RunDirectory(options["run"]).load_transcripts()
            target = RunDirectory(options["out"] or options["run"])
            summary = write_report(target, transcripts, agents=agents, trajectory_games=trajectory_games)
        except (OSError, ValueError, KeyError) as e:
            raise CommandError("Cannot build the report: {}".format(e))

        self.stdout.write("Report for {} matches written to {}".format(summary["matches"], target.root))
        if summary["invalid"]:
            raise CommandError("{} invalid matches in {}".format(summary["invalid"], options["run"]))
