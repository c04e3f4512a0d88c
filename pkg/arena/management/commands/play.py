import os

from django.core.management.base import BaseCommand, CommandError

from arena.agents import AgentException, AgentSpec
from arena.conf import settings
from arena.config import ExperimentConfigException, load_experiment
from arena.games import GameException, resolve_game
from arena.history import Seat
from arena.matches import (
    MatchException, MatchConfig, normalized_score, observe_match, play_match, save_transcript, with_observation,
)
from arena.prompting import PromptException, PredictionMode
from arena.providers import ProviderException, ProviderRegistry, RunLog
from arena.reports import format_round_table

MODES = [mode.value for mode in PredictionMode if mode is not PredictionMode.PREDICT_AS_OBSERVER]


class Command(BaseCommand):
    help = "Play one repeated game between two agents and print the round table"

    def add_arguments(self, parser):
        parser.add_argument("--config", help="experiment TOML defining providers and named agents")
        parser.add_argument("--game", required=True, help="pd, bos, ordinal-NNN, sweep:BASE:STEPS:K or a JSON file")
        parser.add_argument("--p1", required=True, help="agent name from the config, or e.g. constant:D, llm:<provider>")
        parser.add_argument("--p2", required=True)
        parser.add_argument("--rounds", type=int, default=None)
        parser.add_argument("--variant", default=None, help="scheme/order/unit, e.g. numeric/swapped/coins")
        parser.add_argument("--intervention-p1", default="none")
        parser.add_argument("--intervention-p2", default="none")
        parser.add_argument("--mode-p1", choices=MODES, default="none")
        parser.add_argument("--mode-p2", choices=MODES, default="none")
        parser.add_argument("--observer", default=None, help="model agent predicting one seat's moves")
        parser.add_argument("--observe-target", type=int, choices=(1, 2), default=2)
        parser.add_argument("--out", default=None, help="directory for the transcript and completion log")
        parser.add_argument("--offline", action="store_true", help="forbid network requests")
        parser.add_argument("--seed", type=int, default=None)

    def handle(self, *args, **options):
        offline = options["offline"] or settings.ARENA_OFFLINE
        try:
            named = {}
            template = None
            if options["config"]:
                experiment = load_experiment(options["config"], seed=options["seed"])
                registry = experiment.configure_providers(offline=offline)
                named = {agent.label: agent for agent in experiment.agents}
                template = experiment.template
            else:
                registry = ProviderRegistry().configure({}, offline=offline)

            def agent(text):
                return named[text] if text in named else AgentSpec.parse(text)

            config = MatchConfig(
                game=resolve_game(options["game"]),
                agent_p1=agent(options["p1"]),
                agent_p2=agent(options["p2"]),
                rounds=options["rounds"],
                variant=options["variant"],
                interventions=(options["intervention_p1"], options["intervention_p2"]),
                predictions=(options["mode_p1"], options["mode_p2"]),
                seed=options["seed"],
                template=template,
            )
            run_log = RunLog()
            transcript = play_match(config, registry, run_log)
            if options["observer"] and transcript.valid:
                observation = observe_match(transcript, agent(options["observer"]), options["observe_target"],
                                            registry, run_log)
                transcript = with_observation(transcript, observation)
        except (AgentException, ExperimentConfigException, GameException, MatchException, PromptException,
                ProviderException) as e:
            raise CommandError(str(e))

        if options["out"]:
            try:
                os.makedirs(options["out"], exist_ok=True)
                path = os.path.join(options["out"], "{}.json".format(transcript.match_id))
                save_transcript(transcript, path)
                if len(run_log):
                    run_log.write(os.path.join(options["out"], "{}.jsonl".format(transcript.match_id)))
            except OSError as e:
                raise CommandError("Cannot write the transcript: {}".format(e))
            self.stdout.write("Transcript written to {}".format(path))

        self.stdout.write(format_round_table(transcript))
        totals = transcript.totals
        self.stdout.write("Totals: {} / {}".format(*totals))
        for observation in transcript.observations:
            self.stdout.write("Observer {} predicting player {}: lock round {}".format(
                observation.observer, observation.target, observation.lock_round or "never"))
        if not transcript.valid:
            raise CommandError("Match {} is invalid from round {}: {}".format(
                transcript.match_id, transcript.invalid_round, transcript.error))
        self.stdout.write("Normalized: {:.2f} / {:.2f}".format(
            normalized_score(transcript, Seat.P1), normalized_score(transcript, Seat.P2)))
