"""
Hidden-feature policies: every arm carries an unobserved l-dimensional feature
v_a learned jointly with the user preference by alternating ridge regressions.

Policies see observable contexts of dimension d and score the concatenation
(x_a, v_a) of dimension d + l. With l = 0 they behave exactly like their
observable-only counterparts.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .domain import ConversationRecord
from .exceptions import ConfigurationError
from .linalg import PsdFactor, as_vector, scaled_identity
from .policies import ArmQueryMixin, ConUCB, LinUCB

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class HiddenModelState:
    """
    Per-arm hidden features and the arm-level sufficient statistics needed to
    re-solve them: observation count, sum of observable contexts and sum of rewards.
    """

    num_arms: int
    observable_dim: int
    hidden_dim: int
    hidden_ridge: float = 1.0
    noise_scale: float = 0.1
    rng: np.random.Generator = None
    features: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    context_sums: np.ndarray = field(init=False)
    reward_sums: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.num_arms < 1:
            raise ConfigurationError("Hidden-feature policies need the number of arms.")
        if self.hidden_dim < 0:
            raise ConfigurationError(f"Hidden dimension must be nonnegative, got {self.hidden_dim}.")
        if self.hidden_ridge <= 0:
            raise ConfigurationError("Hidden-feature ridge coefficient must be positive.")
        rng = self.rng if self.rng is not None else np.random.default_rng()
        if self.hidden_dim:
            self.features = rng.normal(
                0.0, np.sqrt(1.0 / self.hidden_dim), size=(self.num_arms, self.hidden_dim)
            )
        else:
            self.features = np.zeros((self.num_arms, 0))
        self.counts = np.zeros(self.num_arms, dtype=int)
        self.context_sums = np.zeros((self.num_arms, self.observable_dim))
        self.reward_sums = np.zeros(self.num_arms)

    @property
    def dim(self):
        return self.observable_dim + self.hidden_dim

    def augment(self, arm_ids, contexts):
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        if contexts.shape[1] != self.observable_dim:
            raise ConfigurationError(
                f"Contexts have dimension {contexts.shape[1]}, expected {self.observable_dim}."
            )
        return np.hstack([contexts, self.features[np.asarray(arm_ids, dtype=int)]])

    def record(self, arm_id, context, reward):
        self.counts[arm_id] += 1
        self.context_sums[arm_id] += context
        self.reward_sums[arm_id] += reward

    def arm_system(self, arm_id, theta, weight=1.0):
        """
        Normal equations (A, c) of v_a given theta over arm a's own observations:
        A = hidden_ridge I + weight n_a theta_v theta_v^T,
        c = weight theta_v sum_i (r_i - x_i^T theta_x).
        """
        d = self.observable_dim
        theta_x, theta_v = theta[:d], theta[d:]
        residual = self.reward_sums[arm_id] - self.context_sums[arm_id] @ theta_x
        matrix = scaled_identity(self.hidden_dim, self.hidden_ridge) + (
            weight * self.counts[arm_id] * np.outer(theta_v, theta_v)
        )
        return matrix, weight * residual * theta_v


def _augmented_slate(slate, hidden):
    return slate.with_contexts(hidden.augment(slate.arm_ids, slate.contexts))


class HLinUCB(LinUCB):
    """
    LinUCB on (x_a, v_a) that alternates a ridge step on theta with the hidden
    features fixed and a ridge step on v_{a_t} with theta fixed.
    """

    kind = "hlinucb"

    def __init__(
        self,
        dim,
        hidden_dim,
        num_arms,
        hidden_ridge=1.0,
        hidden_noise=0.1,
        rng=None,
        name=None,
        **options,
    ):
        self.hidden = HiddenModelState(
            num_arms=num_arms,
            observable_dim=dim,
            hidden_dim=hidden_dim,
            hidden_ridge=hidden_ridge,
            noise_scale=hidden_noise,
            rng=rng,
        )
        super().__init__(dim + hidden_dim, name=name, **options)
        self.observable_dim = dim
        self.history = []

    def _check_observable(self, slate):
        if slate.dim != self.observable_dim:
            raise ConfigurationError(
                f"{self.name}: slate contexts have dimension {slate.dim}, "
                f"expected {self.observable_dim}."
            )

    def select_arm(self, slate):
        self._check_observable(slate)
        return super().select_arm(_augmented_slate(slate, self.hidden))

    def observe_arm(self, arm_id, context, reward):
        context = as_vector(context, self.observable_dim)
        super().observe_arm(arm_id, self.hidden.augment([arm_id], context)[0], reward)
        self.hidden.record(arm_id, context, float(reward))
        self.history.append((int(arm_id), context, float(reward)))
        if self.hidden.hidden_dim:
            self._update_hidden(arm_id, self.theta)

    def _update_hidden(self, arm_id, theta):
        matrix, rhs = self.hidden.arm_system(arm_id, theta)
        previous = self.hidden.features[arm_id].copy()
        current = PsdFactor(matrix).solve(rhs)
        self.hidden.features[arm_id] = current
        # Re-assemble M and b for the new v_a: only arm a's rows change.
        d = self.observable_dim
        delta = current - previous
        cross = np.outer(self.hidden.context_sums[arm_id], delta)
        self.matrix[:d, d:] += cross
        self.matrix[d:, :d] += cross.T
        self.matrix[d:, d:] += self.hidden.counts[arm_id] * (
            np.outer(current, current) - np.outer(previous, previous)
        )
        self.vector[d:] += self.hidden.reward_sums[arm_id] * delta

    def alternating_step(self, arm_ids=None):
        """One full sweep: theta given V, then each v_a given theta."""
        theta = self.theta
        arms = np.flatnonzero(self.hidden.counts) if arm_ids is None else arm_ids
        for arm_id in arms:
            self._update_hidden(int(arm_id), theta)
        return self.objective()

    def objective(self):
        """Regularized squared loss over the accumulated observations."""
        theta = self.theta
        loss = self.ridge * float(theta @ theta)
        loss += self.hidden.hidden_ridge * float(np.sum(self.hidden.features**2))
        for arm_id, context, reward in self.history:
            z = self.hidden.augment([arm_id], context)[0]
            loss += (reward - float(z @ theta)) ** 2
        return loss


class HArmCon(ArmQueryMixin, HLinUCB):
    kind = "harmcon"


class HConUCB(ConUCB):
    """
    ConUCB on (x_a, v_a). Key-term pseudo-contexts are augmented with the
    relation-weighted mean of the incident arms' hidden features. After each arm
    observation the estimates are refreshed and the hidden features of the chosen
    arm and of every arm incident to this round's key-terms are re-solved against
    both kinds of feedback.
    """

    kind = "hconucb"

    def __init__(
        self,
        dim,
        graph,
        hidden_dim,
        num_arms=None,
        hidden_ridge=1.0,
        hidden_noise=0.1,
        keyterm_contexts=None,
        rng=None,
        name=None,
        **options,
    ):
        num_arms = graph.num_arms if num_arms is None and graph is not None else num_arms
        rng = rng if rng is not None else np.random.default_rng()
        self.hidden = HiddenModelState(
            num_arms=num_arms or 0,
            observable_dim=dim,
            hidden_dim=hidden_dim,
            hidden_ridge=hidden_ridge,
            noise_scale=hidden_noise,
            rng=rng,
        )
        super().__init__(dim + hidden_dim, graph, rng=rng, name=name, **options)
        self.observable_dim = dim
        # Observable part only; the hidden part follows the current v_a.
        self.observed_keyterm_contexts = self._check_keyterm_contexts(keyterm_contexts, dim)
        self._omega = graph.normalized_weights().tocsc()
        self._arm_rows = ([], [], [])
        self._conversation_rows = ([], [], [])
        self._round_keyterms = []

    def select_arm(self, slate):
        if slate.dim != self.observable_dim:
            raise ConfigurationError(
                f"{self.name}: slate contexts have dimension {slate.dim}, "
                f"expected {self.observable_dim}."
            )
        return super().select_arm(_augmented_slate(slate, self.hidden))

    def converse(self, slate, budget, responder):
        if budget <= 0:
            return 0
        return super().converse(_augmented_slate(slate, self.hidden), budget, responder)

    def candidate_contexts(self, slate):
        candidates, pseudo, shares = super().candidate_contexts(slate)
        if self.observed_keyterm_contexts is not None:
            pseudo = np.hstack(
                [self.observed_keyterm_contexts[candidates], self._keyterm_hidden(candidates)]
            )
        return candidates, pseudo, shares

    def _keyterm_hidden(self, keyterms):
        """Hidden part of the pseudo-contexts of ``keyterms`` (n x l)."""
        return np.asarray(self._omega[:, keyterms].T @ self.hidden.features)

    def observe_conversation(self, record):
        pseudo = as_vector(record.pseudo_context, self.observable_dim)
        augmented = np.concatenate([pseudo, self._keyterm_hidden([record.keyterm])[0]])
        super().observe_conversation(
            ConversationRecord(record.round, record.keyterm, record.feedback, augmented)
        )
        keyterms, contexts, feedback = self._conversation_rows
        keyterms.append(int(record.keyterm))
        contexts.append(pseudo)
        feedback.append(float(record.feedback))
        self._round_keyterms.append(int(record.keyterm))

    def observe_arm(self, arm_id, context, reward):
        context = as_vector(context, self.observable_dim)
        self.state.observe_arm(self.hidden.augment([arm_id], context)[0], reward)
        self.hidden.record(arm_id, context, float(reward))
        arms, contexts, rewards = self._arm_rows
        arms.append(int(arm_id))
        contexts.append(context)
        rewards.append(float(reward))
        if self.hidden.hidden_dim:
            self.state.refresh()
            touched = {int(arm_id)}
            for keyterm in self._round_keyterms:
                touched.update(int(a) for a in self.graph.incident_arms(keyterm)[0])
            for arm in sorted(touched):
                self._update_hidden(arm)
            self._reassemble()
        self._round_keyterms = []

    def _update_hidden(self, arm_id):
        """
        Ridge step on v_a with theta and theta~ fixed. Arm rows carry weight 1
        and key-term rows 1 / lambda, the arm:key-term ratio of the joint
        objective; without conversations this is the HLinUCB step.
        """
        state = self.state
        d = self.observable_dim
        matrix, rhs = self.hidden.arm_system(arm_id, state.theta)
        keyterms, contexts, feedback = self._conversation_rows
        if keyterms:
            ks = np.asarray(keyterms)
            shares = self._omega[arm_id, :].toarray().ravel()[ks]
            related = shares > 0
            if related.any():
                ttx, ttv = state.theta_tilde[:d], state.theta_tilde[d:]
                hidden_part = self._keyterm_hidden(ks[related])
                residual = (
                    np.asarray(feedback)[related]
                    - np.asarray(contexts)[related] @ ttx
                    - hidden_part @ ttv
                    + shares[related] * float(self.hidden.features[arm_id] @ ttv)
                )
                weight = 1.0 / state.lambda_
                matrix = matrix + weight * float(np.sum(shares[related] ** 2)) * np.outer(ttv, ttv)
                rhs = rhs + weight * float(shares[related] @ residual) * ttv
        self.hidden.features[arm_id] = PsdFactor(matrix).solve(rhs)

    def _reassemble(self):
        """Rebuild M, b, M~ and b~ from history under the current hidden features."""
        state = self.state
        arms, contexts, rewards = self._arm_rows
        z = self.hidden.augment(arms, np.asarray(contexts))
        state.matrix = scaled_identity(self.dim, 1.0 - state.lambda_) + state.lambda_ * (z.T @ z)
        state.vector = state.lambda_ * (z.T @ np.asarray(rewards))
        keyterms, pseudo, feedback = self._conversation_rows
        state.keyterm_matrix = scaled_identity(self.dim, state.lambda_tilde)
        state.keyterm_vector = np.zeros(self.dim)
        if keyterms:
            z_tilde = np.hstack([np.asarray(pseudo), self._keyterm_hidden(np.asarray(keyterms))])
            state.keyterm_matrix += z_tilde.T @ z_tilde
            state.keyterm_vector = z_tilde.T @ np.asarray(feedback)
        state.refresh()
