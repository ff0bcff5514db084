import numpy as np
from numpy.testing import assert_allclose
from django.test import SimpleTestCase

from bandits.domain import ContextSlate, ConversationRecord, ConversationSchedule, RelationGraph
from bandits.exceptions import ConfigurationError
from bandits.hidden import HArmCon, HConUCB, HiddenModelState, HLinUCB
from bandits.policies import ConUCB, LinUCB
from bandits.simulation import WorldParams, draw_rounds, generate_world, run_episode

FEATURES = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.6, 0.8, 0.0],
    ]
)
REWARDS = [0.3, 0.8, -0.1, 0.6]


def make_graph():
    return RelationGraph.from_edges(
        4, 3, [0, 1, 1, 2, 3], [0, 0, 1, 1, 2], [1.0, 0.5, 0.5, 1.0, 1.0]
    )


def slate(round=1):
    return ContextSlate.from_contexts(round, np.arange(4), FEATURES)


class Responder:
    def __init__(self, graph):
        self.pseudo = graph.pseudo_contexts(FEATURES)

    def ask_keyterm(self, keyterm):
        x = self.pseudo[keyterm]
        return ConversationRecord(round=1, keyterm=keyterm, feedback=float(x.sum()) / 3, pseudo_context=x)

    def ask_arm(self, arm_id):
        return REWARDS[arm_id]


class HiddenModelStateTests(SimpleTestCase):
    def test_zero_hidden_dim_has_no_features(self):
        state = HiddenModelState(num_arms=4, observable_dim=3, hidden_dim=0)
        self.assertEqual(state.dim, 3)
        assert_allclose(state.augment([0, 2], FEATURES[[0, 2]]), FEATURES[[0, 2]])

    def test_augment_appends_arm_features(self):
        state = HiddenModelState(num_arms=4, observable_dim=3, hidden_dim=2, rng=np.random.default_rng(1))
        z = state.augment([3], FEATURES[[3]])
        self.assertEqual(z.shape, (1, 5))
        assert_allclose(z[0, 3:], state.features[3])

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            HiddenModelState(num_arms=0, observable_dim=3, hidden_dim=1)
        with self.assertRaises(ConfigurationError):
            HiddenModelState(num_arms=4, observable_dim=3, hidden_dim=1, hidden_ridge=0.0)


class HLinUCBTests(SimpleTestCase):
    def test_no_hidden_dimension_matches_linucb(self):
        hidden = HLinUCB(3, hidden_dim=0, num_arms=4)
        plain = LinUCB(3)
        for round in range(1, 6):
            a = hidden.select_arm(slate(round))
            b = plain.select_arm(slate(round))
            self.assertEqual(a.arm_id, b.arm_id)
            hidden.observe_arm(a.arm_id, FEATURES[a.arm_id], REWARDS[a.arm_id])
            plain.observe_arm(b.arm_id, FEATURES[b.arm_id], REWARDS[b.arm_id])
        assert_allclose(hidden.theta, plain.theta)

    def test_statistics_stay_consistent_with_hidden_features(self):
        policy = HLinUCB(3, hidden_dim=2, num_arms=4, rng=np.random.default_rng(0))
        for arm in [0, 1, 1, 3, 0, 2]:
            policy.observe_arm(arm, FEATURES[arm], REWARDS[arm])
        z = np.array([policy.hidden.augment([a], c)[0] for a, c, _ in policy.history])
        r = np.array([reward for _, _, reward in policy.history])
        assert_allclose(policy.matrix, policy.ridge * np.eye(5) + z.T @ z, atol=1e-10)
        assert_allclose(policy.vector, z.T @ r, atol=1e-10)

    def test_alternating_steps_do_not_increase_objective(self):
        policy = HLinUCB(3, hidden_dim=2, num_arms=4, rng=np.random.default_rng(2))
        for arm in [0, 1, 2, 3, 1, 3]:
            policy.observe_arm(arm, FEATURES[arm], REWARDS[arm])
        values = [policy.objective()]
        for _ in range(5):
            values.append(policy.alternating_step())
        self.assertTrue(all(b <= a + 1e-9 for a, b in zip(values, values[1:])))

    def test_slate_must_be_observable_dimension(self):
        policy = HLinUCB(3, hidden_dim=2, num_arms=4)
        bad = ContextSlate.from_contexts(1, [0], np.ones((1, 5)) / np.sqrt(5))
        with self.assertRaises(ConfigurationError):
            policy.select_arm(bad)

    def test_harmcon_asks_arms(self):
        policy = HArmCon(3, hidden_dim=1, num_arms=4, rng=np.random.default_rng(0))
        self.assertEqual(policy.converse(slate(), 2, Responder(make_graph())), 2)
        self.assertEqual(policy.observations, 2)


class HConUCBTests(SimpleTestCase):
    def run_rounds(self, policy, rounds=5, budget=2):
        responder = Responder(make_graph())
        for round in range(1, rounds + 1):
            policy.converse(slate(round), budget, responder)
            choice = policy.select_arm(slate(round))
            policy.observe_arm(choice.arm_id, FEATURES[choice.arm_id], REWARDS[choice.arm_id])

    def test_no_hidden_dimension_matches_conucb(self):
        graph = make_graph()
        hidden = HConUCB(3, graph, hidden_dim=0, rng=np.random.default_rng(4))
        plain = ConUCB(3, graph, rng=np.random.default_rng(4))
        self.run_rounds(hidden)
        self.run_rounds(plain)
        assert_allclose(hidden.theta, plain.theta, atol=1e-12)

    def test_statistics_rebuilt_under_current_hidden_features(self):
        graph = make_graph()
        policy = HConUCB(3, graph, hidden_dim=2, rng=np.random.default_rng(1))
        self.run_rounds(policy)
        state = policy.state
        arms, contexts, _ = policy._arm_rows
        z = policy.hidden.augment(arms, np.asarray(contexts))
        expected = (1 - state.lambda_) * np.eye(5) + state.lambda_ * z.T @ z
        assert_allclose(state.matrix, expected, atol=1e-10)
        self.assertTrue(np.all(np.isfinite(policy.theta)))

    def test_hidden_features_move_for_touched_arms(self):
        graph = make_graph()
        policy = HConUCB(3, graph, hidden_dim=2, rng=np.random.default_rng(3))
        before = policy.hidden.features.copy()
        self.run_rounds(policy, rounds=3)
        self.assertFalse(np.allclose(before, policy.hidden.features))

    def test_without_budget_asks_nothing(self):
        graph = make_graph()
        policy = HConUCB(3, graph, hidden_dim=2, rng=np.random.default_rng(0))
        self.run_rounds(policy, budget=0)
        self.assertEqual(policy.state.conversations, 0)
        self.assertEqual(policy.state.rounds, 5)

    def test_without_conversations_follows_hlinucb(self):
        world = generate_world(
            WorldParams(dim=5, num_arms=40, num_keyterms=8, num_users=1, hidden_dim=2), 0
        )
        rounds = draw_rounds(world, 200, 10, np.random.default_rng(3))
        lam = 0.5
        plain = HLinUCB(5, hidden_dim=2, num_arms=40, alpha=0.5, rng=np.random.default_rng(7))
        # lambda alpha ||z||_{M^-1} equals 0.5 ||z||_{(I + Z^T Z)^-1} at lambda = 0.5
        conversational = HConUCB(
            5,
            world.graph,
            hidden_dim=2,
            lambda_=lam,
            alpha=0.5 / np.sqrt(lam),
            alpha_tilde=0.0,
            rng=np.random.default_rng(7),
        )
        none = ConversationSchedule.parse("none")
        a = run_episode(plain, world, 0, 200, none, rounds=rounds)
        b = run_episode(conversational, world, 0, 200, none, rounds=rounds)
        self.assertEqual([r.arm for r in a.records], [r.arm for r in b.records])
        assert_allclose(conversational.hidden.features, plain.hidden.features, atol=1e-8)
        assert_allclose(conversational.theta, plain.theta, atol=1e-8)
