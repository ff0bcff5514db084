"""
Synthetic worlds, reward oracles, slate sampling and episode execution.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    ContextSlate,
    ConversationRecord,
    RelationGraph,
    conversation_budget,
    save_graph,
)
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

PARAMETER_ERROR_EVERY = 50


@dataclass(frozen=True)
class WorldParams:
    dim: int = 20
    num_arms: int = 1000
    num_keyterms: int = 100
    num_users: int = 20
    max_keyterms_per_arm: int = 5
    feature_noise: float = 0.1
    hidden_dim: int = 0
    hidden_noise: float = 0.1

    def __post_init__(self):
        for name in ("dim", "num_arms", "num_keyterms", "num_users", "max_keyterms_per_arm"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"World parameter {name} must be at least 1.")
        if self.feature_noise <= 0:
            raise ConfigurationError("World parameter feature_noise must be positive.")
        if self.hidden_dim < 0 or self.hidden_noise < 0:
            raise ConfigurationError("Hidden dimension and hidden noise must be nonnegative.")

    @property
    def full_dim(self):
        return self.dim + self.hidden_dim

    @property
    def reward_noise(self):
        return self.hidden_noise if self.hidden_dim else self.feature_noise

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class SyntheticWorld:
    """
    A generated world. ``features`` and ``preferences`` live in the full
    (d + l)-dimensional space; policies only ever see ``observable_index``.
    """

    params: WorldParams
    seed: int
    keyterm_features: np.ndarray
    features: np.ndarray
    graph: RelationGraph
    preferences: np.ndarray
    observable_index: np.ndarray
    hidden_index: np.ndarray
    pseudo_contexts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pseudo_contexts = self.graph.pseudo_contexts(self.features)

    @property
    def dim(self):
        return self.params.dim

    @property
    def num_arms(self):
        return self.graph.num_arms

    @property
    def num_keyterms(self):
        return self.graph.num_keyterms

    @property
    def num_users(self):
        return self.preferences.shape[0]

    @property
    def observed_features(self):
        return self.features[:, self.observable_index]

    @property
    def observed_pseudo_contexts(self):
        return self.pseudo_contexts[:, self.observable_index]

    def observed_preference(self, user):
        return self.preferences[user, self.observable_index]

    def expected_rewards(self, user):
        return self.features @ self.preferences[user]

    def max_preference_norm(self):
        return float(np.max(np.linalg.norm(self.preferences, axis=1)))

    def manifest(self):
        return {"params": self.params.to_dict(), "seed": self.seed}


def generate_world(params, seed):
    """
    Key-term features uniform in [-1, 1]^D; every arm draws 1..M_max key-terms
    without replacement (weights 1/n_a) and a Gaussian feature around their mean,
    normalized to unit length; user preferences uniform in [-1, 1]^D.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    full_dim = params.full_dim
    keyterm_features = rng.uniform(-1.0, 1.0, size=(params.num_keyterms, full_dim))
    most = min(params.max_keyterms_per_arm, params.num_keyterms)
    sizes = rng.integers(1, most + 1, size=params.num_arms)

    arms, keyterms, weights = [], [], []
    means = np.empty((params.num_arms, full_dim))
    for arm, size in enumerate(sizes):
        chosen = rng.choice(params.num_keyterms, size=size, replace=False)
        arms.extend([arm] * size)
        keyterms.extend(chosen.tolist())
        weights.extend([1.0 / size] * size)
        means[arm] = keyterm_features[chosen].mean(axis=0)

    features = rng.normal(means, params.feature_noise)
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    preferences = rng.uniform(-1.0, 1.0, size=(params.num_users, full_dim))

    used, remapped = np.unique(np.asarray(keyterms), return_inverse=True)
    if used.size < params.num_keyterms:
        logger.warning(
            f"Dropping {params.num_keyterms - used.size} key-terms with no incident arm "
            f"(world seed {seed})"
        )
    graph = RelationGraph.from_edges(params.num_arms, used.size, arms, remapped, weights)

    if params.hidden_dim:
        order = rng.permutation(full_dim)
        observable_index = np.sort(order[: params.dim])
        hidden_index = np.sort(order[params.dim:])
    else:
        observable_index = np.arange(full_dim)
        hidden_index = np.arange(0)

    world = SyntheticWorld(
        params=params,
        seed=seed,
        keyterm_features=keyterm_features[used],
        features=features,
        graph=graph,
        preferences=preferences,
        observable_index=observable_index,
        hidden_index=hidden_index,
    )
    logger.info(
        f"Generated world: d={params.dim}, l={params.hidden_dim}, N={world.num_arms}, "
        f"K={world.num_keyterms}, users={world.num_users}, seed={seed}"
    )
    return world


def save_world(world, directory):
    """Write ``world.json`` (params + seed) and the relation graph ``graph.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "world.json").write_text(json.dumps(world.manifest(), indent=2, sort_keys=True))
    save_graph(world.graph, directory / "graph.tsv")
    return directory / "world.json"


def load_world(path):
    """Regenerate a world from its ``world.json`` manifest."""
    path = Path(path)
    if path.is_dir():
        path = path / "world.json"
    try:
        manifest = json.loads(path.read_text())
        params = WorldParams(**manifest["params"])
        seed = int(manifest["seed"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"Cannot read world manifest {path}: {exc}") from exc
    return generate_world(params, seed)


def arm_reward(world, user, arm, noise=0.0):
    return float(world.features[arm] @ world.preferences[user]) + noise


def keyterm_reward(world, user, keyterm, noise=0.0):
    """Relation-weighted mean of the incident arms' expected rewards, plus noise."""
    return float(world.pseudo_contexts[keyterm] @ world.preferences[user]) + noise


def sample_slate(world, size, rng, round=0):
    if not 1 <= size <= world.num_arms:
        raise ConfigurationError(
            f"Slate size {size} must lie in [1, {world.num_arms}] for this world."
        )
    arm_ids = rng.choice(world.num_arms, size=size, replace=False)
    return ContextSlate(round=round, arm_ids=arm_ids, contexts=world.observed_features[arm_ids])


@dataclass
class RoundDraw:
    """Everything random about one round, shared by every policy in a comparison."""

    arm_ids: np.ndarray
    arm_noise: float
    keyterm_noise: float
    arm_uniform: float
    keyterm_uniform: float


def draw_rounds(world, horizon, slate_size, rng):
    scale = world.params.reward_noise
    rounds = []
    for t in range(1, horizon + 1):
        slate = sample_slate(world, slate_size, rng, round=t)
        noise = rng.normal(0.0, scale, size=2)
        uniforms = rng.random(2)
        rounds.append(
            RoundDraw(
                arm_ids=slate.arm_ids,
                arm_noise=float(noise[0]),
                keyterm_noise=float(noise[1]),
                arm_uniform=float(uniforms[0]),
                keyterm_uniform=float(uniforms[1]),
            )
        )
    return rounds


def episode_rng(seed, user, stream):
    """Independent generator for (seed, user, stream); 0 = rounds, 1 = policy."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(user, stream)))


def _binary(mean, uniform):
    return 1.0 if uniform < min(max(mean, 0.0), 1.0) else 0.0


class WorldResponder:
    """Answers one round's questions for one simulated user."""

    def __init__(self, world, user, round, draw, binary=False):
        self.world = world
        self.user = user
        self.round = round
        self.draw = draw
        self.binary = binary
        self.keyterms_asked = 0
        self.arms_asked = 0

    def ask_keyterm(self, keyterm):
        self.keyterms_asked += 1
        if self.binary:
            feedback = _binary(keyterm_reward(self.world, self.user, keyterm), self.draw.keyterm_uniform)
        else:
            feedback = keyterm_reward(self.world, self.user, keyterm, self.draw.keyterm_noise)
        return ConversationRecord(
            round=self.round,
            keyterm=int(keyterm),
            feedback=feedback,
            pseudo_context=self.world.observed_pseudo_contexts[keyterm],
        )

    def ask_arm(self, arm_id):
        self.arms_asked += 1
        return self.reward(arm_id)

    def reward(self, arm_id):
        if self.binary:
            return _binary(arm_reward(self.world, self.user, arm_id), self.draw.arm_uniform)
        return arm_reward(self.world, self.user, arm_id, self.draw.arm_noise)


@dataclass
class RoundRecord:
    round: int
    arm_ids: np.ndarray
    arm: int
    reward: float
    regret: float
    conversations: int
    covered: bool = None


@dataclass
class EpisodeTrace:
    policy: str
    user: int
    records: list = field(default_factory=list)
    parameter_errors: list = field(default_factory=list)
    diagnostics: list = None

    @property
    def regret(self):
        return np.array([r.regret for r in self.records])

    @property
    def cumulative_regret(self):
        return np.cumsum(self.regret)

    @property
    def conversations(self):
        return int(sum(r.conversations for r in self.records))

    def coverage_violations(self):
        flags = [r.covered for r in self.records if r.covered is not None]
        return len(flags) - int(sum(flags)), len(flags)


def run_episode(
    policy,
    world,
    user,
    horizon,
    schedule,
    rng=None,
    *,
    slate_size=50,
    rounds=None,
    binary=False,
    verbose=False,
):
    """
    Play ``horizon`` rounds of ``policy`` against one simulated user. Pass
    ``rounds`` (from :func:`draw_rounds`) to replay identical slates and noise
    across policies.
    """
    if rounds is None:
        if rng is None:
            raise ConfigurationError("run_episode needs either rounds or a random generator.")
        rounds = draw_rounds(world, horizon, slate_size, rng)
    if len(rounds) < horizon:
        raise ConfigurationError(f"Only {len(rounds)} pre-drawn rounds for horizon {horizon}.")
    if policy.dim != world.dim and getattr(policy, "observable_dim", None) != world.dim:
        raise ConfigurationError(
            f"Policy {policy.name} has dimension {policy.dim}, world has {world.dim}."
        )
    if verbose:
        policy.record_diagnostics()

    expected = world.expected_rewards(user)
    truth = world.observed_preference(user)
    check_coverage = not world.params.hidden_dim
    trace = EpisodeTrace(policy=policy.name, user=user)
    for t in range(1, horizon + 1):
        draw = rounds[t - 1]
        slate = ContextSlate(round=t, arm_ids=draw.arm_ids, contexts=world.observed_features[draw.arm_ids])
        responder = WorldResponder(world, user, t, draw, binary=binary)
        budget = conversation_budget(schedule, t)
        asked = policy.converse(slate, budget, responder) if budget else 0
        choice = policy.select_arm(slate)
        reward = responder.reward(choice.arm_id)
        policy.observe_arm(choice.arm_id, slate.contexts[choice.position], reward)

        regret = max(float(expected[draw.arm_ids].max() - expected[choice.arm_id]), 0.0)
        covered = None
        if check_coverage and choice.theta is not None and choice.theta.size == world.dim:
            deviation = abs(float(slate.contexts[choice.position] @ (choice.theta - truth)))
            covered = deviation <= choice.score.width
        trace.records.append(
            RoundRecord(
                round=t,
                arm_ids=draw.arm_ids,
                arm=choice.arm_id,
                reward=reward,
                regret=regret,
                conversations=asked,
                covered=covered,
            )
        )
        if t % PARAMETER_ERROR_EVERY == 0:
            estimate = policy.theta[: world.dim]
            trace.parameter_errors.append((t, float(np.linalg.norm(estimate - truth))))

    if verbose:
        trace.diagnostics = policy.diagnostics
    logger.debug(
        f"Episode finished: policy={policy.name}, user={user}, "
        f"regret={trace.cumulative_regret[-1] if trace.records else 0.0:.4f}, "
        f"conversations={trace.conversations}"
    )
    return trace
