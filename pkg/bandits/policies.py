"""
Arm-selection and key-term-selection policies.

Every policy answers the same three calls per round: ``converse`` (spend the
round's conversation budget), ``select_arm`` and ``observe_arm``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, UsageError
from .linalg import (
    PsdFactor,
    as_vector,
    column_quadratic_forms,
    rank_one_update,
    scaled_identity,
    sherman_morrison_forms,
)

logger = logging.getLogger(__name__)


@dataclass
class ArmScore:
    arm_id: int
    estimate: float
    width: float
    arm_width: float = 0.0
    keyterm_width: float = 0.0

    @property
    def ucb(self):
        return self.estimate + self.width


@dataclass
class ArmChoice:
    arm_id: int
    position: int
    scores: list
    theta: np.ndarray = None

    @property
    def score(self):
        return self.scores[self.position]


def _first_argmax(values):
    # np.argmax returns the first maximal index: ties go to the lowest position.
    return int(np.argmax(values))


def _check_unit_interval(name, value, closed_low=False):
    low_ok = value >= 0 if closed_low else value > 0
    if not (low_ok and value < 1):
        raise ConfigurationError(f"{name} must lie in {'[' if closed_low else '('}0, 1), got {value}.")


class BanditPolicy:
    kind = "base"

    def __init__(self, dim, name=None):
        if dim < 1:
            raise ConfigurationError(f"Policy dimension must be positive, got {dim}.")
        self.dim = dim
        self.name = name or self.kind
        self.diagnostics = None

    def select_arm(self, slate):
        raise NotImplementedError

    def observe_arm(self, arm_id, context, reward):
        pass

    def converse(self, slate, budget, responder):
        """Spend ``budget`` questions; returns how many were asked."""
        return 0

    @property
    def theta(self):
        return np.zeros(self.dim)

    def record_diagnostics(self, enabled=True):
        self.diagnostics = [] if enabled else None

    def _check_slate(self, slate):
        if slate.size == 0:
            raise UsageError("Cannot select an arm from an empty slate.")
        if slate.dim != self.dim:
            raise ConfigurationError(
                f"{self.name}: slate contexts have dimension {slate.dim}, expected {self.dim}."
            )

    def _choose(self, slate, estimates, widths, arm_widths=None, keyterm_widths=None, theta=None):
        arm_widths = widths if arm_widths is None else arm_widths
        keyterm_widths = np.zeros_like(widths) if keyterm_widths is None else keyterm_widths
        position = _first_argmax(estimates + widths)
        scores = [
            ArmScore(
                arm_id=int(arm),
                estimate=float(estimates[i]),
                width=float(widths[i]),
                arm_width=float(arm_widths[i]),
                keyterm_width=float(keyterm_widths[i]),
            )
            for i, arm in enumerate(slate.arm_ids)
        ]
        choice = ArmChoice(
            arm_id=int(slate.arm_ids[position]),
            position=position,
            scores=scores,
            theta=None if theta is None else theta.copy(),
        )
        if self.diagnostics is not None or logger.isEnabledFor(logging.DEBUG):
            record = {
                "round": slate.round,
                "policy": self.name,
                "arm": choice.arm_id,
                "estimate": choice.score.estimate,
                "width": choice.score.width,
                "arm_width": choice.score.arm_width,
                "keyterm_width": choice.score.keyterm_width,
                "estimates": [round(s.estimate, 6) for s in scores],
                "widths": [round(s.width, 6) for s in scores],
            }
            if self.diagnostics is not None:
                self.diagnostics.append(record)
            logger.debug(f"Round diagnostics: {record}")
        return choice


class RandomPolicy(BanditPolicy):
    """Uniform choice over the slate; the logging policy of replay datasets."""

    kind = "random"

    def __init__(self, dim, rng=None, name=None):
        super().__init__(dim, name=name)
        self.rng = rng if rng is not None else np.random.default_rng()

    def select_arm(self, slate):
        self._check_slate(slate)
        position = int(self.rng.integers(slate.size))
        scores = [ArmScore(arm_id=int(a), estimate=0.0, width=0.0) for a in slate.arm_ids]
        return ArmChoice(arm_id=int(slate.arm_ids[position]), position=position, scores=scores)


class OraclePolicy(BanditPolicy):
    """Knows the user's preference vector and never explores."""

    kind = "oracle"

    def __init__(self, theta, name=None):
        theta = as_vector(theta)
        super().__init__(theta.size, name=name)
        self._theta = theta

    @property
    def theta(self):
        return self._theta.copy()

    def select_arm(self, slate):
        self._check_slate(slate)
        estimates = slate.contexts @ self._theta
        return self._choose(slate, estimates, np.zeros(slate.size), theta=self._theta)


class LinUCB(BanditPolicy):
    """
    Ridge regression over arm-level feedback with a Mahalanobis exploration bonus.

    theta = (sum x x^T + ridge I)^{-1} sum x r; selects argmax x^T theta + alpha ||x||_{M^{-1}}.
    Unless ``alpha`` is fixed, alpha follows the self-normalized bound
    R sqrt(d log((1 + t / (ridge d)) / sigma)) + sqrt(ridge) S.
    """

    kind = "linucb"

    def __init__(
        self,
        dim,
        ridge=1.0,
        sigma=0.05,
        alpha=None,
        noise_scale=1.0,
        theta_norm=1.0,
        name=None,
        **unused,
    ):
        super().__init__(dim, name=name)
        if ridge <= 0:
            raise ConfigurationError(f"Ridge coefficient must be positive, got {ridge}.")
        _check_unit_interval("sigma", sigma)
        if alpha is not None and alpha < 0:
            raise ConfigurationError(f"Exploration coefficient must be nonnegative, got {alpha}.")
        self.ridge = float(ridge)
        self.sigma = float(sigma)
        self.fixed_alpha = alpha
        self.noise_scale = float(noise_scale)
        self.theta_norm = float(theta_norm)
        self.matrix = scaled_identity(dim, ridge)
        self.vector = np.zeros(dim)
        self.observations = 0

    def alpha(self):
        if self.fixed_alpha is not None:
            return float(self.fixed_alpha)
        growth = 1.0 + self.observations / (self.ridge * self.dim)
        return self.noise_scale * math.sqrt(
            self.dim * math.log(growth / self.sigma)
        ) + math.sqrt(self.ridge) * self.theta_norm

    @property
    def theta(self):
        return PsdFactor(self.matrix).solve(self.vector)

    def score(self, contexts):
        factor = PsdFactor(self.matrix)
        theta = factor.solve(self.vector)
        projected = factor.solve(contexts.T)
        norms = np.sqrt(np.maximum(column_quadratic_forms(contexts.T, projected), 0.0))
        return contexts @ theta, self.alpha() * norms, theta

    def select_arm(self, slate):
        self._check_slate(slate)
        estimates, widths, theta = self.score(slate.contexts)
        return self._choose(slate, estimates, widths, theta=theta)

    def observe_arm(self, arm_id, context, reward):
        x = as_vector(context, self.dim)
        rank_one_update(self.matrix, x, 1.0, inplace=True)
        self.vector += float(reward) * x
        self.observations += 1


class ArmQueryMixin:
    """
    Spends each conversation unit asking the user to rate one extra arm: the
    UCB-maximal slate arms, ranked once at the start of the round. Answers are
    consumed as ordinary arm-level observations.
    """

    def converse(self, slate, budget, responder):
        if budget <= 0 or slate.size == 0:
            return 0
        if budget > slate.size:
            logger.debug(
                f"{self.name}: discarding {budget - slate.size} questions beyond the slate size"
            )
        choice = self.select_arm(slate)
        ucb = np.array([score.ucb for score in choice.scores])
        asked = np.argsort(-ucb, kind="stable")[:budget]
        for position in asked:
            arm_id = int(slate.arm_ids[position])
            reward = responder.ask_arm(arm_id)
            self.observe_arm(arm_id, slate.contexts[position], reward)
        return int(asked.size)


class ArmCon(ArmQueryMixin, LinUCB):
    kind = "armcon"


@dataclass(eq=False)
class ConUCBState:
    """
    Per-user learner state of ConUCB.

    M = (1 - lambda) I + lambda sum x x^T, b = lambda sum x r,
    M~ = lambda~ I + sum x~ x~^T, b~ = sum x~ r~,
    theta~ = M~^{-1} b~, theta = M^{-1} (b + (1 - lambda) theta~).
    """

    dim: int
    lambda_: float = 0.5
    lambda_tilde: float = 1.0
    sigma: float = 0.05
    alpha_override: float = None
    alpha_tilde_override: float = None
    theta_tilde_norm: float = 1.0
    matrix: np.ndarray = field(init=False)
    vector: np.ndarray = field(init=False)
    keyterm_matrix: np.ndarray = field(init=False)
    keyterm_vector: np.ndarray = field(init=False)
    theta: np.ndarray = field(init=False)
    theta_tilde: np.ndarray = field(init=False)
    rounds: int = field(init=False, default=0)
    conversations: int = field(init=False, default=0)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"Dimension must be positive, got {self.dim}.")
        if not 0 < self.lambda_ < 1:
            raise ConfigurationError(
                f"lambda must lie strictly between 0 and 1, got {self.lambda_}."
            )
        if self.lambda_tilde <= 0:
            raise ConfigurationError(f"lambda~ must be positive, got {self.lambda_tilde}.")
        _check_unit_interval("sigma", self.sigma)
        for label, value in (("alpha", self.alpha_override), ("alpha~", self.alpha_tilde_override)):
            if value is not None and value < 0:
                raise ConfigurationError(f"{label} override must be nonnegative, got {value}.")
        if self.theta_tilde_norm < 0:
            raise ConfigurationError("||theta~*|| must be nonnegative.")
        self.reset()

    def reset(self):
        self.matrix = scaled_identity(self.dim, 1.0 - self.lambda_)
        self.vector = np.zeros(self.dim)
        self.keyterm_matrix = scaled_identity(self.dim, self.lambda_tilde)
        self.keyterm_vector = np.zeros(self.dim)
        self.theta = np.zeros(self.dim)
        self.theta_tilde = np.zeros(self.dim)
        self.rounds = 0
        self.conversations = 0
        self._factors = None

    def refresh(self):
        keyterm_factor = PsdFactor(self.keyterm_matrix)
        arm_factor = PsdFactor(self.matrix)
        self.theta_tilde = keyterm_factor.solve(self.keyterm_vector)
        self.theta = arm_factor.solve(self.vector + (1.0 - self.lambda_) * self.theta_tilde)
        self._factors = (arm_factor, keyterm_factor)
        return self.theta_tilde, self.theta

    def factors(self):
        """(factor of M, factor of M~), refreshing the estimates when stale."""
        if self._factors is None:
            self.refresh()
        return self._factors

    def alpha(self):
        if self.alpha_override is not None:
            return float(self.alpha_override)
        growth = 1.0 + self.lambda_ * self.rounds / ((1.0 - self.lambda_) * self.dim)
        return math.sqrt(self.dim * math.log(growth / self.sigma))

    def alpha_tilde(self, theta_tilde_norm=None):
        if self.alpha_tilde_override is not None:
            return float(self.alpha_tilde_override)
        norm = self.theta_tilde_norm if theta_tilde_norm is None else theta_tilde_norm
        bias = 2.0 * math.sqrt(self.lambda_tilde) * norm
        if self.conversations < 1:
            return bias
        return math.sqrt(
            2.0 * (self.dim * math.log(6.0) + math.log(2.0 * self.conversations / self.sigma))
        ) + bias

    def score(self, contexts):
        """
        Estimates x^T theta and widths
        C = lambda alpha ||x||_{M^{-1}} + (1 - lambda) alpha~ ||x^T M^{-1}||_{M~^{-1}}.
        """
        arm_factor, keyterm_factor = self.factors()
        projected = arm_factor.solve(contexts.T)
        arm_norms = np.sqrt(np.maximum(column_quadratic_forms(contexts.T, projected), 0.0))
        keyterm_norms = np.sqrt(
            np.maximum(column_quadratic_forms(projected, keyterm_factor.solve(projected)), 0.0)
        )
        arm_part = self.lambda_ * self.alpha() * arm_norms
        keyterm_part = (1.0 - self.lambda_) * self.alpha_tilde() * keyterm_norms
        return contexts @ self.theta, arm_part + keyterm_part, arm_part, keyterm_part

    def observe_keyterm(self, pseudo_context, feedback):
        x = as_vector(pseudo_context, self.dim)
        rank_one_update(self.keyterm_matrix, x, 1.0, inplace=True)
        self.keyterm_vector += float(feedback) * x
        self.conversations += 1
        self._factors = None

    def observe_arm(self, context, reward):
        x = as_vector(context, self.dim)
        rank_one_update(self.matrix, x, self.lambda_, inplace=True)
        self.vector += self.lambda_ * float(reward) * x
        self.rounds += 1
        self._factors = None


class ConUCB(BanditPolicy):
    """
    Conversational UCB: key-term feedback drives theta~, which anchors the
    arm-level estimate; key-terms are chosen to shrink the slate's estimation
    error the most.

    ``keyterm_contexts`` (K x d) holds the full-arm pseudo-contexts x~_k that
    conversation feedback is regressed on. Candidates are scored with them;
    without the table the slate-restricted pseudo-contexts stand in.
    """

    kind = "conucb"

    def __init__(
        self,
        dim,
        graph,
        lambda_=0.5,
        lambda_tilde=1.0,
        sigma=0.05,
        alpha=None,
        alpha_tilde=None,
        theta_tilde_norm=1.0,
        keyterm_contexts=None,
        rng=None,
        name=None,
        **unused,
    ):
        super().__init__(dim, name=name)
        if graph is None:
            raise ConfigurationError(f"{self.kind} needs an arm/key-term relation graph.")
        self.graph = graph
        self.keyterm_contexts = self._check_keyterm_contexts(keyterm_contexts, dim)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state = ConUCBState(
            dim=dim,
            lambda_=lambda_,
            lambda_tilde=lambda_tilde,
            sigma=sigma,
            alpha_override=alpha,
            alpha_tilde_override=alpha_tilde,
            theta_tilde_norm=theta_tilde_norm,
        )

    @property
    def theta(self):
        self.state.factors()
        return self.state.theta.copy()

    def select_arm(self, slate):
        self._check_slate(slate)
        estimates, widths, arm_part, keyterm_part = self.state.score(slate.contexts)
        return self._choose(slate, estimates, widths, arm_part, keyterm_part, theta=self.state.theta)

    def observe_arm(self, arm_id, context, reward):
        self.state.observe_arm(context, reward)

    def observe_conversation(self, record):
        self.state.observe_keyterm(record.pseudo_context, record.feedback)

    def _check_keyterm_contexts(self, table, dim):
        if table is None:
            return None
        table = np.asarray(table, dtype=float)
        if table.shape != (self.graph.num_keyterms, dim):
            raise ConfigurationError(
                f"{self.name}: key-term context table has shape {table.shape}, "
                f"expected ({self.graph.num_keyterms}, {dim})."
            )
        return table

    def candidate_contexts(self, slate):
        """(candidate key-terms, their pseudo-contexts, slate shares) for one round."""
        candidates, pseudo, shares = self.graph.slate_pseudo_contexts(slate.arm_ids, slate.contexts)
        if self.keyterm_contexts is not None:
            pseudo = self.keyterm_contexts[candidates]
        return candidates, pseudo, shares

    def converse(self, slate, budget, responder):
        if budget <= 0:
            return 0
        self._check_slate(slate)
        candidates, pseudo, shares = self.candidate_contexts(slate)
        asked = set()
        for unit in range(budget):
            if len(asked) >= candidates.size:
                logger.debug(
                    f"{self.name}: round {slate.round} ran out of key-terms, "
                    f"discarding {budget - unit} questions"
                )
                break
            keyterm = self._pick_keyterm(slate, candidates, pseudo, shares, asked)
            self.observe_conversation(responder.ask_keyterm(keyterm))
            asked.add(keyterm)
        return len(asked)

    def select_keyterm(self, slate, already_asked=frozenset()):
        self._check_slate(slate)
        candidates, pseudo, shares = self.candidate_contexts(slate)
        return self._pick_keyterm(slate, candidates, pseudo, shares, already_asked)

    def _pick_keyterm(self, slate, candidates, pseudo, shares, asked):
        available = np.array([int(k) not in asked for k in candidates], dtype=bool)
        if not available.any():
            raise UsageError("No candidate key-terms left to ask about in this round.")
        scores = self.keyterm_scores(slate, pseudo[available], shares[:, available])
        return int(candidates[available][_first_argmax(scores)])

    def keyterm_scores(self, slate, pseudo, shares):
        """
        ||X M^{-1} M~^{-1} x~||^2 / (1 + x~^T M~^{-1} x~) per candidate; its argmax
        minimizes tr(X M^{-1} (M~ + x~ x~^T)^{-1} M^{-1} X^T).
        """
        arm_factor, keyterm_factor = self.state.factors()
        projected = arm_factor.solve(slate.contexts.T)
        reduced = keyterm_factor.solve(pseudo.T)
        numerators = np.sum((projected.T @ reduced) ** 2, axis=0)
        return numerators / (1.0 + column_quadratic_forms(pseudo.T, reduced))


class VarRS(ConUCB):
    """ConUCB with key-terms picked uniformly at random."""

    kind = "var_rs"

    def _pick_keyterm(self, slate, candidates, pseudo, shares, asked):
        available = [int(k) for k in candidates if int(k) not in asked]
        if not available:
            raise UsageError("No candidate key-terms left to ask about in this round.")
        return available[int(self.rng.integers(len(available)))]


class VarMRC(ConUCB):
    """ConUCB with the key-term of maximal related confidence on the slate."""

    kind = "var_mrc"

    def keyterm_scores(self, slate, pseudo, shares):
        arm_factor, keyterm_factor = self.state.factors()
        projected = arm_factor.solve(slate.contexts.T)
        norms = np.sqrt(
            np.maximum(column_quadratic_forms(projected, keyterm_factor.solve(projected)), 0.0)
        )
        return self.state.alpha_tilde() * (shares.T @ norms)


class VarLCR(ConUCB):
    """
    ConUCB with the key-term of largest confidence reduction on the slate.

    C^{k'} replaces M~ by M~ + x~ x~^T (Sherman-Morrison); alpha~ is held fixed.
    """

    kind = "var_lcr"

    def keyterm_scores(self, slate, pseudo, shares):
        arm_factor, keyterm_factor = self.state.factors()
        projected = arm_factor.solve(slate.contexts.T)
        current = np.maximum(column_quadratic_forms(projected, keyterm_factor.solve(projected)), 0.0)
        updated = sherman_morrison_forms(keyterm_factor, projected, pseudo.T)
        scale = (1.0 - self.state.lambda_) * self.state.alpha_tilde()
        reduction = scale * (np.sqrt(current)[:, None] - np.sqrt(updated))
        return np.sum(shares * reduction, axis=0)
