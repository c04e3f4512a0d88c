import filecmp
import os
import tempfile

from django.core.cache import caches
from django.test import SimpleTestCase, override_settings

from arena.agents import AgentKind, AgentSpec
from arena.games import battle_of_the_sexes, payoff_sweep, prisoners_dilemma, resolve_games
from arena.history import COOPERATE, DEFECT, Round, Seat
from arena.matches import MatchConfig, Transcript
from arena.prompting import variant_space
from arena.providers import CompletionCache, PolicyMockProvider, ProviderRegistry, ScriptedMockProvider
from arena.tournament import (
    EmptyGridException, GridException, GridRunException, GridSpec, RunDirectory, aggregate, expand_grid,
    mean_and_half_width, pair_matrix, run_grid,
)

LOCMEM = {"default": {"BACKEND": "django.core.cache.backends.locmem.LocMemCache"}}


def mock_agents(registry):
    """Three model agents answering like the scripted strategies."""
    agents = []
    for provider_id, policy in (("mock-defector", "constant:D"), ("mock-forgiver", "defect-then-cooperate"),
                                ("mock-alternator", "alternator")):
        registry.register(PolicyMockProvider(provider_id, AgentSpec.parse(policy)))
        agents.append(AgentSpec.parse("llm:{}".format(provider_id)))
    return tuple(agents)


def run_files(root):
    files = []
    for folder, _, names in os.walk(root):
        files.extend(os.path.relpath(os.path.join(folder, name), root) for name in names)
    return sorted(files)


def synthetic(game, agent_p1, agent_p2, actions):
    played = tuple(Round(number, cell, game.cell_values(cell)) for number, cell in enumerate(actions, start=1))
    return Transcript(MatchConfig(game, agent_p1, agent_p2, rounds=len(actions)), played)


class ExpandGridTest(SimpleTestCase):

    def test_full_family_grid(self):
        agents = tuple(AgentSpec(AgentKind.LLM, provider=name) for name in ("a", "b", "c"))
        configs = expand_grid(GridSpec(agents=agents, games=tuple(resolve_games("all")), rounds=10))
        self.assertEqual(len(configs), 1224)
        self.assertEqual(len({config.match_id for config in configs}), 1224)

    def test_variant_sweep(self):
        agent = AgentSpec.parse("llm:gpt-4")
        spec = GridSpec(agents=(agent,), games=(prisoners_dilemma(),),
                        variants=tuple(variant.id for variant in variant_space()))
        configs = expand_grid(spec)
        self.assertEqual(len(configs), 18)
        self.assertEqual({config.variant for config in configs}, {variant.id for variant in variant_space()})

    def test_sweeps_do_not_multiply_scripted_matches(self):
        spec = GridSpec(agents=(AgentSpec.parse("constant:D"), AgentSpec.parse("alternator")),
                        games=(prisoners_dilemma(),),
                        variants=tuple(variant.id for variant in variant_space()),
                        interventions=("none", "fallible"))
        self.assertEqual(len(expand_grid(spec)), 4)

    def test_without_self_play(self):
        spec = GridSpec(agents=(AgentSpec.parse("constant:D"), AgentSpec.parse("alternator")),
                        games=(battle_of_the_sexes(),), self_play=False)
        configs = expand_grid(spec)
        self.assertEqual(len(configs), 2)
        self.assertEqual([(c.agent_p1.label, c.agent_p2.label) for c in configs],
                         [("constant-D", "alternator"), ("alternator", "constant-D")])

    def test_empty_grid(self):
        with self.assertRaises(EmptyGridException):
            expand_grid(GridSpec(agents=(AgentSpec.parse("alternator"),), games=(prisoners_dilemma(),),
                                 self_play=False))

    def test_repetitions_and_order(self):
        spec = GridSpec(agents=(AgentSpec.parse("alternator"),), games=(prisoners_dilemma(), battle_of_the_sexes()),
                        repetitions=2)
        configs = expand_grid(spec)
        self.assertEqual([(c.game.name, c.repetition) for c in configs],
                         [("pd", 1), ("pd", 2), ("bos", 1), ("bos", 2)])
        self.assertEqual(configs, expand_grid(spec))

    def test_validation(self):
        with self.assertRaises(GridException):
            GridSpec(agents=(), games=(prisoners_dilemma(),))
        with self.assertRaises(GridException):
            GridSpec(agents=(AgentSpec.parse("alternator"), AgentSpec.parse("alternator")),
                     games=(prisoners_dilemma(),))
        with self.assertRaises(GridException):
            GridSpec(agents=(AgentSpec.parse("alternator"),), games=(prisoners_dilemma(),), repetitions=0)


@override_settings(CACHES=LOCMEM, ARENA_ROUNDS=10)
class RunGridTest(SimpleTestCase):

    def setUp(self):
        ProviderRegistry().reset()
        self.output = tempfile.TemporaryDirectory()
        self.addCleanup(self.output.cleanup)

    def tearDown(self):
        ProviderRegistry().reset()

    def scripted_spec(self, **kwargs):
        agents = (AgentSpec.parse("constant:D"), AgentSpec.parse("defect-then-cooperate"),
                  AgentSpec.parse("alternator"))
        return GridSpec(agents=agents, games=(prisoners_dilemma(), battle_of_the_sexes()), **kwargs)

    def test_run_writes_one_transcript_per_match(self):
        result = run_grid(self.scripted_spec(), self.output.name, max_workers=4)
        self.assertEqual(result.executed, 18)
        self.assertEqual(len(result.transcripts), 18)
        self.assertEqual(len(os.listdir(result.run_dir.path("transcripts"))), 18)
        self.assertTrue(os.path.basename(result.run_dir.root).startswith("run-"))
        # scripted agents consume no completions
        self.assertEqual(os.listdir(result.run_dir.path("completions")), [])

    def test_resume_skips_saved_matches(self):
        spec = self.scripted_spec()
        run_grid(spec, self.output.name)
        again = run_grid(spec, self.output.name)
        self.assertEqual(again.executed, 0)
        self.assertEqual(len(again.transcripts), 18)

    def test_interrupted_run_resumes_to_the_same_files(self):
        registry = ProviderRegistry()
        spec = GridSpec(agents=mock_agents(registry), games=(prisoners_dilemma(), battle_of_the_sexes()))
        configs = expand_grid(spec)
        with tempfile.TemporaryDirectory() as whole, tempfile.TemporaryDirectory() as halves:
            straight = run_grid(spec, whole, registry)
            first = run_grid(spec, halves, registry, configs=configs[:len(configs) // 2])
            self.assertEqual(first.executed, len(configs) // 2)
            resumed = run_grid(spec, halves, registry)
            self.assertEqual(resumed.executed, len(configs) - len(configs) // 2)
            self.assertEqual(os.path.basename(straight.run_dir.root), os.path.basename(resumed.run_dir.root))
            files = run_files(straight.run_dir.root)
            self.assertEqual(files, run_files(resumed.run_dir.root))
            _, mismatch, errors = filecmp.cmpfiles(straight.run_dir.root, resumed.run_dir.root, files, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))

    def test_family_grid_is_reproducible(self):
        registry = ProviderRegistry()
        spec = GridSpec(agents=mock_agents(registry), games=tuple(resolve_games("all")), rounds=10)
        with tempfile.TemporaryDirectory() as one, tempfile.TemporaryDirectory() as two:
            first = run_grid(spec, one, registry)
            second = run_grid(spec, two, registry)
            self.assertEqual(len(first.transcripts), 1224)
            self.assertFalse(first.invalid)
            files = run_files(first.run_dir.root)
            self.assertEqual(len([name for name in files if name.startswith("transcripts")]), 1224)
            self.assertEqual(files, run_files(second.run_dir.root))
            _, mismatch, errors = filecmp.cmpfiles(first.run_dir.root, second.run_dir.root, files, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))

    def test_scripted_model_grid_is_reproducible_across_workers_and_resume(self):
        caches["default"].clear()
        registry = ProviderRegistry()
        registry.register(ScriptedMockProvider("script", ["F", "J", "J"], cache=CompletionCache(caches["default"])))
        spec = GridSpec(agents=(AgentSpec.parse("llm:script"), AgentSpec.parse("constant:D")),
                        games=tuple(resolve_games("all")))
        configs = expand_grid(spec)
        with tempfile.TemporaryDirectory() as one, tempfile.TemporaryDirectory() as two, \
                tempfile.TemporaryDirectory() as halves:
            first = run_grid(spec, one, registry, max_workers=8)
            # the second run answers from the cache the first one filled
            second = run_grid(spec, two, registry, max_workers=3)
            run_grid(spec, halves, registry, max_workers=8, configs=configs[len(configs) // 2:])
            resumed = run_grid(spec, halves, registry, max_workers=5)
            self.assertFalse(first.invalid)
            files = run_files(first.run_dir.root)
            self.assertEqual(len([name for name in files if name.startswith("completions")]), 3 * len(configs) // 4)
            for other in (second, resumed):
                self.assertEqual(files, run_files(other.run_dir.root))
                _, mismatch, errors = filecmp.cmpfiles(first.run_dir.root, other.run_dir.root, files, shallow=False)
                self.assertEqual((mismatch, errors), ([], []))
        transcript = next(t for t in first.transcripts if t.config.agent_p2.label == "constant-D"
                          and t.config.agent_p1.is_llm)
        self.assertEqual([played.action(Seat.P1) for played in transcript.rounds],
                         [DEFECT, COOPERATE, COOPERATE] * 3 + [DEFECT])

    def test_tied_sweep_games_give_invalid_transcripts(self):
        spec = GridSpec(agents=(AgentSpec.parse("alternator"), AgentSpec.parse("constant:F")),
                        games=tuple(payoff_sweep(battle_of_the_sexes(), 3)))
        result = run_grid(spec, self.output.name)
        self.assertEqual(len(result.transcripts), 12)
        self.assertEqual({t.config.game.name for t in result.invalid}, {"bos-sweep-2"})
        self.assertEqual(len(result.invalid), 3)
        again = run_grid(spec, self.output.name)
        self.assertEqual(again.executed, 0)

    def test_invalid_matches_are_kept_and_not_replayed(self):
        registry = ProviderRegistry()
        registry.register(ScriptedMockProvider("mumbler", ["hmm"]))
        spec = GridSpec(agents=(AgentSpec.parse("llm:mumbler"), AgentSpec.parse("constant:D")),
                        games=(prisoners_dilemma(),), self_play=False)
        result = run_grid(spec, self.output.name, registry)
        self.assertEqual(len(result.invalid), 2)
        self.assertEqual({transcript.invalid_round for transcript in result.invalid}, {1})
        again = run_grid(spec, self.output.name, registry)
        self.assertEqual(again.executed, 0)

    def test_failures_are_reported(self):
        spec = GridSpec(agents=(AgentSpec.parse("llm:missing"), AgentSpec.parse("constant:D")),
                        games=(prisoners_dilemma(),), self_play=False)
        with self.assertRaises(GridRunException) as raised:
            run_grid(spec, self.output.name)
        result = raised.exception.result
        self.assertEqual(len(result.failures), 2)
        self.assertTrue(all(reason.startswith("UnknownProviderException") for reason in result.failures.values()))
        self.assertEqual(result.transcripts, [])

    def test_observer_pass(self):
        registry = ProviderRegistry()
        registry.register(PolicyMockProvider("watcher", AgentSpec.parse("constant:D"),
                                             predictor=AgentSpec.parse("alternator")))
        spec = GridSpec(agents=(AgentSpec.parse("alternator"),), games=(battle_of_the_sexes(),),
                        observer=AgentSpec.parse("llm:watcher"), observe_target=1)
        result = run_grid(spec, self.output.name, registry)
        (transcript,) = result.transcripts
        (observation,) = transcript.observations
        self.assertEqual(observation.target, 1)
        self.assertEqual(observation.lock_round, 1)
        completions = result.run_dir.completions_path(transcript.match_id)
        with open(completions, encoding="utf-8") as handle:
            self.assertEqual(len(handle.readlines()), 10)

    def test_load_transcripts(self):
        result = run_grid(self.scripted_spec(), self.output.name)
        loaded = RunDirectory(result.run_dir.root).load_transcripts()
        self.assertEqual(sorted(t.match_id for t in loaded), sorted(t.match_id for t in result.transcripts))
        self.assertEqual(RunDirectory(os.path.join(self.output.name, "nowhere")).load_transcripts(), [])


class AggregateTest(SimpleTestCase):

    def setUp(self):
        self.defector = AgentSpec.parse("constant:D")
        self.cooperator = AgentSpec.parse("constant:C")

    def test_mean_and_half_width(self):
        mean, half_width = mean_and_half_width([0.4, 0.6])
        self.assertAlmostEqual(mean, 0.5)
        self.assertAlmostEqual(half_width, 0.196, places=3)
        self.assertEqual(mean_and_half_width([0.3]), (0.3, 0.0))
        with self.assertRaises(GridException):
            mean_and_half_width([])

    def test_rows_by_agent(self):
        game = prisoners_dilemma()
        transcripts = [
            synthetic(game, self.defector, self.cooperator, [(DEFECT, COOPERATE)] * 2),
            synthetic(game, self.cooperator, self.cooperator, [(COOPERATE, COOPERATE)] * 2),
        ]
        rows = aggregate(transcripts, "agent")
        self.assertEqual([row.value("agent") for row in rows], ["constant-C", "constant-D"])
        cooperator, defector = rows
        self.assertEqual(cooperator.n, 3)
        self.assertAlmostEqual(cooperator.mean_score, (0.0 + 0.8 + 0.8) / 3)
        self.assertEqual(cooperator.defection_rate, 0.0)
        self.assertEqual(defector.n, 1)
        self.assertTrue(defector.single)
        self.assertEqual(defector.ci_half_width, 0.0)
        self.assertEqual(defector.mean_score, 1.0)

    def test_focal_seat(self):
        game = prisoners_dilemma()
        transcripts = [synthetic(game, self.defector, self.cooperator, [(DEFECT, COOPERATE)])]
        (row,) = aggregate(transcripts, ("agent", "seat"), focal="p2")
        self.assertEqual(row.key, (("agent", "constant-C"), ("seat", "p2")))
        with self.assertRaises(GridException):
            aggregate(transcripts, "agent", focal="p3")
        with self.assertRaises(GridException):
            aggregate(transcripts, "colour")

    def test_family_rows(self):
        transcripts = [
            synthetic(prisoners_dilemma(), self.defector, self.defector, [(DEFECT, DEFECT)]),
            synthetic(battle_of_the_sexes(), self.defector, self.defector, [(DEFECT, DEFECT)]),
        ]
        rows = aggregate(transcripts, "family")
        self.assertEqual([row.value("family") for row in rows], ["PrisonersDilemma", "Unranked"])

    def test_invalid_transcripts_are_counted_not_averaged(self):
        game = prisoners_dilemma()
        valid = synthetic(game, self.defector, self.cooperator, [(DEFECT, COOPERATE)])
        broken = Transcript(MatchConfig(game, self.defector, self.cooperator, rounds=5), (), valid=False,
                            error="gave up", invalid_round=1)
        (row,) = aggregate([valid, broken], "pair", focal="p1")
        self.assertEqual((row.n, row.invalid), (1, 1))
        self.assertEqual(aggregate([broken], "pair"), [])

    def test_pair_matrix(self):
        game = battle_of_the_sexes()
        transcripts = [
            synthetic(game, self.defector, self.cooperator, [(DEFECT, COOPERATE)] * 2),
            synthetic(game, self.cooperator, self.defector, [(COOPERATE, DEFECT), (COOPERATE, COOPERATE)]),
        ]
        agents = ["constant-D", "constant-C"]
        self.assertEqual(pair_matrix(transcripts, agents, "defection_rate"), [[None, 1.0], [0.0, None]])
        self.assertEqual(pair_matrix(transcripts, agents, "coordination_rate"), [[None, 0.0], [0.5, None]])
        self.assertEqual(pair_matrix(transcripts, agents, "score"), [[None, 0.0], [0.35, None]])
        with self.assertRaises(GridException):
            pair_matrix(transcripts, agents, "happiness")
