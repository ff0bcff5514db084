import tempfile

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase, tag

from bandits.domain import ConversationSchedule
from bandits.exceptions import ConfigurationError
from bandits.hidden import HLinUCB
from bandits.policies import ArmCon, ConUCB, LinUCB, OraclePolicy, RandomPolicy
from bandits.simulation import (
    PARAMETER_ERROR_EVERY,
    WorldParams,
    WorldResponder,
    draw_rounds,
    episode_rng,
    generate_world,
    keyterm_reward,
    load_world,
    run_episode,
    sample_slate,
    save_world,
)

SMALL = WorldParams(dim=5, num_arms=60, num_keyterms=12, num_users=3, max_keyterms_per_arm=3)


class WorldGenerationTests(SimpleTestCase):
    def test_same_seed_same_world(self):
        a = generate_world(SMALL, 7)
        b = generate_world(SMALL, 7)
        assert_array_equal(a.features, b.features)
        assert_array_equal(a.preferences, b.preferences)
        assert_array_equal(a.graph.weights.toarray(), b.graph.weights.toarray())

    def test_different_seed_different_world(self):
        self.assertFalse(np.allclose(generate_world(SMALL, 1).features, generate_world(SMALL, 2).features))

    def test_features_are_unit_norm(self):
        world = generate_world(SMALL, 0)
        assert_allclose(np.linalg.norm(world.features, axis=1), 1.0)

    def test_graph_rows_sum_to_one(self):
        world = generate_world(SMALL, 0)
        assert_allclose(np.asarray(world.graph.weights.sum(axis=1)).ravel(), 1.0)
        self.assertLessEqual(world.num_keyterms, SMALL.num_keyterms)
        self.assertTrue(np.all(world.graph.column_sums > 0))
        degrees = np.diff(world.graph.weights.indptr)
        self.assertTrue(np.all((degrees >= 1) & (degrees <= 3)))

    def test_hidden_partition(self):
        params = WorldParams(dim=4, num_arms=30, num_keyterms=8, num_users=2, hidden_dim=2)
        world = generate_world(params, 3)
        self.assertEqual(world.features.shape, (30, 6))
        self.assertEqual(world.observed_features.shape, (30, 4))
        self.assertEqual(world.observed_pseudo_contexts.shape[1], 4)
        self.assertEqual(sorted(np.concatenate([world.observable_index, world.hidden_index])), list(range(6)))

    def test_invalid_params(self):
        with self.assertRaises(ConfigurationError):
            WorldParams(dim=0)
        with self.assertRaises(ConfigurationError):
            WorldParams(feature_noise=0.0)

    def test_save_and_load(self):
        world = generate_world(SMALL, 11)
        with tempfile.TemporaryDirectory() as directory:
            save_world(world, directory)
            loaded = load_world(directory)
        assert_array_equal(loaded.features, world.features)
        self.assertEqual(loaded.seed, 11)

    def test_load_missing_manifest(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ConfigurationError):
                load_world(directory)


class DrawTests(SimpleTestCase):
    def test_slate_size_bounds(self):
        world = generate_world(SMALL, 0)
        rng = np.random.default_rng(0)
        self.assertEqual(sample_slate(world, 60, rng).size, 60)
        with self.assertRaises(ConfigurationError):
            sample_slate(world, 61, rng)
        with self.assertRaises(ConfigurationError):
            sample_slate(world, 0, rng)

    def test_episode_streams_are_reproducible_and_distinct(self):
        a = episode_rng(3, 1, 0).random(4)
        assert_array_equal(a, episode_rng(3, 1, 0).random(4))
        self.assertFalse(np.allclose(a, episode_rng(3, 1, 1).random(4)))
        self.assertFalse(np.allclose(a, episode_rng(3, 2, 0).random(4)))

    def test_responder_feedback(self):
        world = generate_world(SMALL, 0)
        draw = draw_rounds(world, 1, 10, np.random.default_rng(0))[0]
        responder = WorldResponder(world, 1, 1, draw)
        record = responder.ask_keyterm(2)
        self.assertAlmostEqual(record.feedback, keyterm_reward(world, 1, 2) + draw.keyterm_noise)
        assert_allclose(record.pseudo_context, world.observed_pseudo_contexts[2])
        binary = WorldResponder(world, 1, 1, draw, binary=True)
        self.assertIn(binary.reward(int(draw.arm_ids[0])), (0.0, 1.0))
        self.assertIn(binary.ask_keyterm(2).feedback, (0.0, 1.0))


class RunEpisodeTests(SimpleTestCase):
    def setUp(self):
        self.world = generate_world(SMALL, 5)
        self.rounds = draw_rounds(self.world, 100, 10, episode_rng(0, 0, 0))

    def test_oracle_has_no_regret(self):
        policy = OraclePolicy(self.world.preferences[0])
        trace = run_episode(policy, self.world, 0, 100, ConversationSchedule(kind="none"), rounds=self.rounds)
        self.assertEqual(trace.cumulative_regret[-1], 0.0)

    def test_regret_is_nonnegative(self):
        trace = run_episode(
            RandomPolicy(5, rng=np.random.default_rng(0)),
            self.world,
            0,
            100,
            ConversationSchedule(kind="none"),
            rounds=self.rounds,
        )
        self.assertTrue(np.all(trace.regret >= 0))
        self.assertEqual(len(trace.records), 100)

    def test_parameter_error_sampling(self):
        trace = run_episode(LinUCB(5), self.world, 0, 100, ConversationSchedule(kind="none"), rounds=self.rounds)
        self.assertEqual([t for t, _ in trace.parameter_errors], [PARAMETER_ERROR_EVERY, 2 * PARAMETER_ERROR_EVERY])

    def test_conversation_counts_follow_schedule(self):
        schedule = ConversationSchedule.parse("log:5")
        trace = run_episode(ArmCon(5), self.world, 0, 100, schedule, rounds=self.rounds)
        self.assertEqual(trace.conversations, schedule.cumulative(100))
        conucb = ConUCB(5, self.world.graph, rng=np.random.default_rng(0))
        trace = run_episode(conucb, self.world, 0, 100, schedule, rounds=self.rounds)
        self.assertGreater(trace.conversations, 0)
        self.assertLessEqual(trace.conversations, schedule.cumulative(100))

    def test_no_schedule_means_no_questions(self):
        conucb = ConUCB(5, self.world.graph, rng=np.random.default_rng(0))
        trace = run_episode(conucb, self.world, 0, 100, ConversationSchedule(kind="none"), rounds=self.rounds)
        self.assertEqual(trace.conversations, 0)

    def test_needs_rounds_or_rng(self):
        with self.assertRaises(ConfigurationError):
            run_episode(LinUCB(5), self.world, 0, 10, ConversationSchedule())

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigurationError):
            run_episode(LinUCB(4), self.world, 0, 10, ConversationSchedule(), rounds=self.rounds)

    def test_shared_rounds_give_identical_episodes(self):
        first = run_episode(LinUCB(5), self.world, 1, 100, ConversationSchedule(), rounds=self.rounds)
        second = run_episode(LinUCB(5), self.world, 1, 100, ConversationSchedule(), rounds=self.rounds)
        assert_array_equal(first.regret, second.regret)

    def test_verbose_keeps_diagnostics(self):
        trace = run_episode(
            LinUCB(5), self.world, 0, 10, ConversationSchedule(), rounds=self.rounds, verbose=True
        )
        self.assertEqual(len(trace.diagnostics), 10)

    def test_hidden_policy_in_hidden_world(self):
        params = WorldParams(dim=4, num_arms=40, num_keyterms=8, num_users=2, hidden_dim=1)
        world = generate_world(params, 0)
        policy = HLinUCB(4, hidden_dim=1, num_arms=world.num_arms, rng=np.random.default_rng(0))
        trace = run_episode(policy, world, 0, 60, ConversationSchedule(), rng=episode_rng(0, 0, 0), slate_size=10)
        self.assertEqual(len(trace.records), 60)
        self.assertEqual(trace.coverage_violations(), (0, 0))


@tag("simulation")
class LearningTests(SimpleTestCase):
    horizon = 400

    def mean_regret(self, make_policy, schedule):
        world = generate_world(SMALL, 21)
        totals = []
        for user in range(world.num_users):
            rounds = draw_rounds(world, self.horizon, 10, episode_rng(0, user, 0))
            trace = run_episode(make_policy(world, user), world, user, self.horizon, schedule, rounds=rounds)
            totals.append(trace.cumulative_regret[-1])
        return float(np.mean(totals))

    def test_linucb_beats_random(self):
        none = ConversationSchedule(kind="none")
        linucb = self.mean_regret(lambda w, u: LinUCB(5), none)
        random = self.mean_regret(lambda w, u: RandomPolicy(5, rng=episode_rng(0, u, 1)), none)
        self.assertLess(linucb, random)

    def test_conversations_reduce_regret(self):
        linucb = self.mean_regret(lambda w, u: LinUCB(5), ConversationSchedule(kind="none"))
        conucb = self.mean_regret(
            lambda w, u: ConUCB(5, w.graph, rng=episode_rng(0, u, 1)), ConversationSchedule.parse("log:5")
        )
        self.assertLess(conucb, linucb)
