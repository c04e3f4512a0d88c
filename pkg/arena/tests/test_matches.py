import json
import os
import tempfile

from django.test import SimpleTestCase, override_settings

from arena.agents import AgentSpec
from arena.games import PayoffGame, battle_of_the_sexes, payoff_sweep, prisoners_dilemma
from arena.history import COOPERATE, DEFECT, Round, Seat
from arena.matches import (
    InvalidTranscriptException, MatchConfig, MatchConfigException, Transcript, load_transcript, match_metrics,
    normalized_score, observe_match, play_match, prediction_lock_round, save_transcript, with_observation,
)
from arena.providers import PolicyMockProvider, ProviderRegistry, RunLog, ScriptedMockProvider

LOCMEM = {"default": {"BACKEND": "django.core.cache.backends.locmem.LocMemCache"}}

D, C = DEFECT, COOPERATE


def transcript(game, actions, predictions=None, rounds=None):
    """A finished match built by hand."""
    predictions = predictions or [(None, None)] * len(actions)
    played = tuple(
        Round(number, cell, game.cell_values(cell), prediction)
        for number, (cell, prediction) in enumerate(zip(actions, predictions), start=1)
    )
    config = MatchConfig(game, AgentSpec.parse("constant:D"), AgentSpec.parse("constant:D"),
                         rounds=rounds or len(actions))
    return Transcript(config, played)


@override_settings(CACHES=LOCMEM, ARENA_ROUNDS=10)
class PlayMatchTest(SimpleTestCase):

    def setUp(self):
        ProviderRegistry().reset()

    def tearDown(self):
        ProviderRegistry().reset()

    def test_defector_against_defect_then_cooperate(self):
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("constant:D"),
                             AgentSpec.parse("defect-then-cooperate"))
        result = play_match(config)
        self.assertTrue(result.valid)
        self.assertEqual(len(result.rounds), 10)
        self.assertEqual(result.rounds[0].actions, (D, D))
        self.assertTrue(all(played.actions == (D, C) for played in result.rounds[1:]))
        self.assertEqual(result.totals, (95, 5))
        self.assertAlmostEqual(normalized_score(result, Seat.P1), 0.95)
        self.assertAlmostEqual(normalized_score(result, Seat.P2), 0.05)

    def test_battle_of_the_sexes_coordination(self):
        config = MatchConfig(battle_of_the_sexes(), AgentSpec.parse("constant:F"), AgentSpec.parse("constant:F"))
        result = play_match(config)
        self.assertEqual(result.totals, (100, 70))
        metrics = match_metrics(result)
        self.assertEqual(metrics.normalized_score, (1.0, 0.7))
        self.assertEqual(metrics.coordination_rate, 1.0)
        self.assertEqual(metrics.preferred_option_rate, (1.0, 0.0))

    def test_alternators_miscoordinate(self):
        alternator = AgentSpec.parse("alternator")
        result = play_match(MatchConfig(battle_of_the_sexes(), alternator, alternator))
        self.assertEqual(result.rounds[0].actions, (C, D))
        self.assertEqual(result.rounds[0].payoffs, (0, 0))
        self.assertEqual(result.rounds[1].actions, (D, C))
        self.assertEqual(result.totals, (0, 0))
        self.assertEqual(match_metrics(result).coordination_rate, 0.0)

    def test_rounds_are_played_in_order(self):
        result = play_match(MatchConfig(prisoners_dilemma(), AgentSpec.parse("alternator"),
                                        AgentSpec.parse("constant:C"), rounds=4))
        self.assertEqual([played.number for played in result.rounds], [1, 2, 3, 4])

    def test_query_order_does_not_matter(self):
        registry = ProviderRegistry()
        registry.register(PolicyMockProvider("mirror", AgentSpec.parse("defect-then-cooperate")))
        registry.register(PolicyMockProvider("flip", AgentSpec.parse("alternator")))
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("llm:mirror"), AgentSpec.parse("llm:flip"),
                             predictions=("predict-then-act", "none"))
        forward = play_match(config, registry)
        backward = play_match(config, registry, query_order=(Seat.P2, Seat.P1))
        self.assertEqual(forward.to_dict(), backward.to_dict())
        self.assertEqual(forward.rounds[1].prediction(Seat.P1), forward.rounds[0].action(Seat.P2))

    def test_bad_query_order(self):
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("constant:D"), AgentSpec.parse("constant:D"))
        with self.assertRaises(MatchConfigException):
            play_match(config, query_order=(Seat.P1, Seat.P1))

    @override_settings(ARENA_PARSE_RETRIES=3)
    def test_unparsable_model_invalidates_the_match(self):
        ProviderRegistry().register(ScriptedMockProvider("stubborn", ["J", "J", "x", "x", "x", "x"]))
        run_log = RunLog()
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("llm:stubborn"), AgentSpec.parse("constant:D"))
        result = play_match(config, run_log=run_log)
        self.assertFalse(result.valid)
        self.assertEqual(result.invalid_round, 3)
        self.assertEqual(len(result.rounds), 2)
        self.assertEqual(len(run_log), 6)
        self.assertIsNone(result.to_dict()["metrics"])
        with self.assertRaises(InvalidTranscriptException):
            match_metrics(result)

    def test_completion_refs_point_into_the_run_log(self):
        ProviderRegistry().register(ScriptedMockProvider("scripted", ["F"]))
        run_log = RunLog()
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("llm:scripted"), AgentSpec.parse("constant:C"),
                             rounds=3)
        result = play_match(config, run_log=run_log)
        refs = [record.ref for record in run_log.records]
        self.assertEqual(len(set(refs)), len(refs))
        for played in result.rounds:
            self.assertEqual(len(played.completions[0]), 1)
            self.assertEqual(played.completions[1], ())
            self.assertIn(played.completions[0][0], refs)

    def test_tied_preference_invalidates_the_match(self):
        tied = payoff_sweep(battle_of_the_sexes(), 3)[1]
        config = MatchConfig(tied, AgentSpec.parse("alternator"), AgentSpec.parse("constant:F"))
        result = play_match(config)
        self.assertFalse(result.valid)
        self.assertEqual(result.invalid_round, 1)
        self.assertEqual(result.rounds, ())
        self.assertIn("no single preferred cell", result.error)
        self.assertIsNone(result.to_dict()["metrics"])

    def test_tied_preference_inside_a_model_invalidates_the_match(self):
        ProviderRegistry().register(PolicyMockProvider("flip", AgentSpec.parse("alternator")))
        tied = payoff_sweep(battle_of_the_sexes(), 3)[1]
        config = MatchConfig(tied, AgentSpec.parse("constant:F"), AgentSpec.parse("llm:flip"))
        result = play_match(config)
        self.assertFalse(result.valid)
        self.assertEqual(result.invalid_round, 1)

    def test_config_validation(self):
        game = prisoners_dilemma()
        defector = AgentSpec.parse("constant:D")
        with self.assertRaises(MatchConfigException):
            MatchConfig(game, defector, defector, rounds=0)
        with self.assertRaises(MatchConfigException):
            MatchConfig(game, defector, defector, predictions=("observe", "none"))
        with self.assertRaises(MatchConfigException):
            MatchConfig(game, defector, defector, interventions=("none",))


class MatchIdTest(SimpleTestCase):

    def test_stable_and_sensitive(self):
        defector = AgentSpec.parse("constant:D")
        config = MatchConfig(prisoners_dilemma(), defector, defector, rounds=10)
        self.assertEqual(config.match_id, MatchConfig.from_dict(config.to_dict()).match_id)
        self.assertEqual(len(config.match_id), 16)
        self.assertNotEqual(config.match_id, MatchConfig(prisoners_dilemma(), defector, defector, rounds=10,
                                                         repetition=2).match_id)
        self.assertNotEqual(config.match_id, MatchConfig(prisoners_dilemma(), defector, defector, rounds=10,
                                                         seed=1).match_id)

    def test_seat_settings_fall_back_to_the_agent(self):
        agent = AgentSpec.from_dict({"kind": "llm", "provider": "p", "variant": "numeric/given/coins",
                                     "intervention": "fallible", "predict_then_act": True})
        config = MatchConfig(prisoners_dilemma(), agent, AgentSpec.parse("constant:D"))
        self.assertEqual(config.variant_for(Seat.P1), "numeric/given/coins")
        self.assertEqual(config.intervention(Seat.P1), "fallible")
        self.assertEqual(config.prediction_mode(Seat.P1), "predict-then-act")
        override = MatchConfig(prisoners_dilemma(), agent, AgentSpec.parse("constant:D"),
                               variant="letters_other/given/points")
        self.assertEqual(override.variant_for(Seat.P1), "letters_other/given/points")


class MetricsTest(SimpleTestCase):

    def test_defection_and_coordination(self):
        game = prisoners_dilemma()
        result = transcript(game, [(D, D), (D, C), (C, C), (C, D)])
        metrics = match_metrics(result)
        self.assertEqual(metrics.defection_rate, (0.5, 0.5))
        self.assertEqual(metrics.coordination_rate, 0.5)
        self.assertEqual(result.totals, (23, 23))
        self.assertAlmostEqual(metrics.normalized_score[0], 23 / 40)

    def test_all_cooperation(self):
        metrics = match_metrics(transcript(prisoners_dilemma(), [(C, C)] * 10))
        self.assertEqual(metrics.defection_rate, (0.0, 0.0))
        self.assertEqual(metrics.normalized_score, (0.8, 0.8))
        self.assertEqual(metrics.coordination_rate, 1.0)

    def test_always_exploited(self):
        metrics = match_metrics(transcript(prisoners_dilemma(), [(C, D)] * 10))
        self.assertEqual(metrics.normalized_score, (0.0, 1.0))
        self.assertEqual(metrics.defection_rate, (0.0, 1.0))
        self.assertEqual(metrics.coordination_rate, 0.0)

    def test_scores_are_normalized_by_the_seats_best_payoff(self):
        game = PayoffGame([[[3, 0], [5, 1]], [[3, 5], [0, 1]]], name="small")
        metrics = match_metrics(transcript(game, [(D, D), (C, C)]))
        self.assertEqual(metrics.normalized_score, (0.4, 0.4))

    def test_preferred_option_rate(self):
        game = battle_of_the_sexes()
        metrics = match_metrics(transcript(game, [(D, C), (D, D), (C, C), (D, C)]))
        self.assertEqual(metrics.preferred_option_rate, (0.75, 0.75))
        self.assertEqual(metrics.coordination_rate, 0.5)

    def test_preferred_option_rate_with_a_tie(self):
        game = PayoffGame([[[9, 0], [0, 9]], [[9, 0], [0, 9]]], name="pure-coordination")
        metrics = match_metrics(transcript(game, [(D, D), (C, C)]))
        self.assertEqual(metrics.preferred_option_rate, (None, None))

    def test_lock_round_from_round_five(self):
        actuals = [C, D, C, D, C, D, C, D, C, D]
        predictions = [D, C, D, C] + actuals[4:]
        self.assertEqual(prediction_lock_round(predictions, actuals), 5)

    def test_lock_round_from_round_three(self):
        actuals = [D, C, C, C, C, C, C, C, C, C]
        predictions = [C, D] + actuals[2:]
        self.assertEqual(prediction_lock_round(predictions, actuals), 3)

    def test_lock_round_from_round_six(self):
        actuals = [D, C, D, C, D, C, D, C, D, C]
        predictions = [C, C, C, C, C] + actuals[5:]
        self.assertEqual(prediction_lock_round(predictions, actuals), 6)

    def test_lock_round_edges(self):
        self.assertEqual(prediction_lock_round([C, D, C], [C, D, C]), 1)
        self.assertIsNone(prediction_lock_round([C, D, D], [C, D, C]))
        self.assertIsNone(prediction_lock_round([None, None], [C, C]))
        # a late miss resets the lock
        self.assertEqual(prediction_lock_round([C, C, D, C], [C, C, C, C]), 4)

    def test_lock_round_per_seat(self):
        game = battle_of_the_sexes()
        actions = [(C, D), (D, C), (C, D), (D, C)]
        # seat 1 predicts seat 2, seat 2 never predicts
        predictions = [(C, None), (D, None), (D, None), (C, None)]
        metrics = match_metrics(transcript(game, actions, predictions))
        self.assertEqual(metrics.prediction_lock_round, (3, None))

    def test_invalid_transcript_has_no_score(self):
        result = transcript(prisoners_dilemma(), [(D, D)], rounds=10)
        result = Transcript(result.config, result.rounds, valid=False, error="gave up", invalid_round=2)
        with self.assertRaises(InvalidTranscriptException):
            normalized_score(result, Seat.P1)


@override_settings(CACHES=LOCMEM)
class ObserveMatchTest(SimpleTestCase):

    def setUp(self):
        ProviderRegistry().reset()

    def tearDown(self):
        ProviderRegistry().reset()

    def test_observer_that_knows_the_pattern(self):
        registry = ProviderRegistry()
        registry.register(PolicyMockProvider("watcher", AgentSpec.parse("constant:D"),
                                             predictor=AgentSpec.parse("alternator")))
        alternator = AgentSpec.parse("alternator")
        result = play_match(MatchConfig(battle_of_the_sexes(), alternator, alternator, rounds=6))
        run_log = RunLog()
        observation = observe_match(result, AgentSpec.parse("llm:watcher"), Seat.P2, run_log=run_log)
        self.assertEqual(observation.predictions, result.history.actions(Seat.P2))
        self.assertEqual(observation.lock_round, 1)
        self.assertEqual(observation.observer, "watcher")
        self.assertEqual(len(run_log), 6)
        self.assertEqual(run_log.records[0].prompt.count("In round"), 0)
        self.assertEqual(run_log.records[5].prompt.count("In round"), 5)

    def test_observer_that_expects_repetition(self):
        ProviderRegistry().register(PolicyMockProvider("echo", AgentSpec.parse("constant:D")))
        alternator = AgentSpec.parse("alternator")
        result = play_match(MatchConfig(battle_of_the_sexes(), alternator, alternator, rounds=4))
        observation = observe_match(result, AgentSpec.parse("llm:echo"), Seat.P1)
        # round 1: seat 1's preference; then the previous action
        self.assertEqual(observation.predictions, (D, C, D, C))
        self.assertIsNone(observation.lock_round)
        updated = with_observation(result, observation)
        self.assertEqual(updated.observations, (observation,))
        self.assertEqual(updated.match_id, result.match_id)


@override_settings(CACHES=LOCMEM)
class TranscriptFileTest(SimpleTestCase):

    def test_save_and_load(self):
        config = MatchConfig(prisoners_dilemma(), AgentSpec.parse("constant:D"),
                             AgentSpec.parse("defect-then-cooperate"), rounds=3, seed=4)
        result = play_match(config)
        with tempfile.TemporaryDirectory() as folder:
            path = os.path.join(folder, "{}.json".format(result.match_id))
            save_transcript(result, path)
            self.assertEqual(os.listdir(folder), [os.path.basename(path)])
            loaded = load_transcript(path)
            with open(path, encoding="utf-8") as handle:
                document = json.load(handle)
        self.assertEqual(loaded, result)
        self.assertEqual(document["match_id"], result.match_id)
        self.assertEqual(document["totals"], [25, 5])
        self.assertEqual(document["metrics"]["defection_rate"], [1.0, 1 / 3])
