"""
Offline evaluation on logged interactions: ingestion, ridge ground truth,
candidate pools and match-only replay with normalized CTR.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .domain import ContextSlate, ConversationRecord, RelationGraph, conversation_budget
from .exceptions import ConfigurationError, DatasetLoadError, UsageError
from .linalg import scaled_identity, solve_psd

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["user_id", "timestamp", "arm_id", "reward"]
TAG_COLUMNS = ["arm_id", "keyterm_id"]
WINDOW = 500


def binarize_ratings(values, threshold=4):
    """Ratings at or above ``threshold`` become clicks (1), the rest 0."""
    return (np.asarray(values, dtype=float) >= threshold).astype(int)


def _read_table(source, names=None):
    if isinstance(source, pd.DataFrame):
        frame = source.copy()
    else:
        path = Path(source)
        if not path.exists():
            raise DatasetLoadError(f"Data file {path} does not exist.")
        try:
            frame = pd.read_csv(path, header=None, skipinitialspace=True, comment="#")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
            raise DatasetLoadError(f"Cannot parse {path}: {exc}") from exc
        # Drop a header row if the file has one.
        if len(frame) and pd.to_numeric(frame.iloc[0], errors="coerce").isna().any():
            frame = frame.iloc[1:].reset_index(drop=True)
    if names is not None:
        if frame.shape[1] != len(names):
            raise DatasetLoadError(
                f"Expected {len(names)} columns ({', '.join(names)}), found {frame.shape[1]}."
            )
        frame.columns = names
    try:
        return frame.apply(pd.to_numeric)
    except (ValueError, TypeError) as exc:
        raise DatasetLoadError(f"Non-numeric value in data: {exc}") from exc


@dataclass(eq=False)
class LoggedDataset:
    """
    Logged events (user, timestamp, arm, reward) with arm indices in
    ``[0, num_arms)``; ``arm_labels`` maps them back to the file's arm ids.
    """

    events: pd.DataFrame
    features: np.ndarray
    arm_labels: np.ndarray
    graph: RelationGraph = None

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_arms(self):
        return self.features.shape[0]

    @property
    def users(self):
        return self.events["user_id"].unique()

    def user_events(self, user):
        return self.events[self.events["user_id"] == user]

    def pseudo_contexts(self):
        if self.graph is None:
            raise ConfigurationError("This dataset has no arm/key-term tags.")
        return self.graph.pseudo_contexts(self.features)


def load_logged_dataset(events, features, tags=None):
    """
    Read logged data: events ``user_id, timestamp, arm_id, reward``, features
    ``arm_id, f1..fd`` and optional tags ``arm_id, keyterm_id``. Files or
    DataFrames are accepted. Feature rows are normalized to unit length.
    """
    feature_frame = _read_table(features)
    if feature_frame.shape[1] < 2:
        raise DatasetLoadError("Feature table needs an arm id column and at least one feature.")
    labels = feature_frame.iloc[:, 0].to_numpy()
    if pd.Index(labels).has_duplicates:
        raise DatasetLoadError("Feature table lists an arm id twice.")
    matrix = feature_frame.iloc[:, 1:].to_numpy(dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise DatasetLoadError("Feature table contains missing or non-finite values.")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise DatasetLoadError(f"Arm {labels[np.argmax(norms == 0)]} has an all-zero feature vector.")
    matrix = matrix / norms[:, None]
    index = pd.Index(labels)

    frame = _read_table(events, EVENT_COLUMNS)
    if frame.isna().any().any():
        raise DatasetLoadError("Event table contains missing values.")
    if not frame["reward"].isin([0, 1]).all():
        raise DatasetLoadError("Rewards must be 0 or 1; see binarize_ratings for rated data.")
    positions = index.get_indexer(frame["arm_id"])
    if np.any(positions < 0):
        missing = frame["arm_id"].to_numpy()[np.argmax(positions < 0)]
        raise DatasetLoadError(f"Event refers to arm {missing} with no feature row.")
    frame = frame.assign(arm=positions, reward=frame["reward"].astype(int))
    frame = frame.sort_values("timestamp", kind="stable").reset_index(drop=True)

    graph = None
    if tags is not None:
        tag_frame = _read_table(tags, TAG_COLUMNS).drop_duplicates()
        arm_positions = index.get_indexer(tag_frame["arm_id"])
        if np.any(arm_positions < 0):
            raise DatasetLoadError("Tag table refers to an arm with no feature row.")
        untagged = np.setdiff1d(np.arange(len(labels)), arm_positions)
        if untagged.size:
            raise DatasetLoadError(f"Arm {labels[untagged[0]]} has no key-term tag.")
        keyterm_labels, keyterm_positions = np.unique(tag_frame["keyterm_id"], return_inverse=True)
        per_arm = np.bincount(arm_positions, minlength=len(labels))
        graph = RelationGraph.from_edges(
            len(labels),
            keyterm_labels.size,
            arm_positions,
            keyterm_positions,
            1.0 / per_arm[arm_positions],
        )

    logger.info(
        f"Loaded {len(frame)} events, {len(labels)} arms (d={matrix.shape[1]}), "
        f"{frame['user_id'].nunique()} users, "
        f"{graph.num_keyterms if graph is not None else 0} key-terms"
    )
    return LoggedDataset(events=frame, features=matrix, arm_labels=labels, graph=graph)


def fit_ground_truth(dataset, user, ridge=1.0):
    """theta* = (X^T X + ridge I)^{-1} X^T r over the user's events."""
    rows = dataset.user_events(user)
    if rows.empty:
        raise UsageError(f"User {user} has no logged events.")
    contexts = dataset.features[rows["arm"].to_numpy()]
    rewards = rows["reward"].to_numpy(dtype=float)
    matrix = scaled_identity(dataset.dim, ridge) + contexts.T @ contexts
    return solve_psd(matrix, contexts.T @ rewards)


@dataclass
class PooledEvent:
    user: object
    arm: int
    reward: int
    pool: np.ndarray


@dataclass
class PooledDataset:
    dataset: LoggedDataset
    pool_size: int
    events: list = field(default_factory=list)
    skipped: int = 0


def build_pools(dataset, pool_size, rng):
    """
    Pair every event with ``pool_size - 1`` other arms drawn uniformly from the
    user's interacted arms, logged arm included, in shuffled order.
    """
    if pool_size < 1:
        raise ConfigurationError(f"Pool size must be at least 1, got {pool_size}.")
    distinct = {
        user: np.unique(arms) for user, arms in dataset.events.groupby("user_id", sort=False)["arm"]
    }
    pooled = PooledDataset(dataset=dataset, pool_size=pool_size)
    for user, arm, reward in dataset.events[["user_id", "arm", "reward"]].itertuples(index=False):
        candidates = distinct[user]
        if candidates.size < pool_size:
            pooled.skipped += 1
            continue
        others = candidates[candidates != arm]
        pool = np.concatenate([[arm], rng.choice(others, size=pool_size - 1, replace=False)])
        rng.shuffle(pool)
        pooled.events.append(PooledEvent(user=user, arm=int(arm), reward=int(reward), pool=pool))
    if pooled.skipped:
        logger.warning(
            f"Skipped {pooled.skipped} events whose users have fewer than {pool_size} distinct arms"
        )
    return pooled


class KeytermOracle:
    """
    Simulated conversational feedback for replay, generated from each user's
    ridge-fitted preference.
    """

    def __init__(self, dataset, ridge=1.0, binary=False, noise=0.0, rng=None):
        self.dataset = dataset
        self.ridge = ridge
        self.binary = binary
        self.noise = noise
        self.rng = rng if rng is not None else np.random.default_rng()
        self._pseudo = dataset.pseudo_contexts() if dataset.graph is not None else None
        self._truth = {}

    def preference(self, user):
        if user not in self._truth:
            self._truth[user] = fit_ground_truth(self.dataset, user, self.ridge)
        return self._truth[user]

    def responder(self, user, round):
        return _OracleResponder(self, user, round)

    def _answer(self, mean):
        if self.binary:
            return float(self.rng.random() < min(max(mean, 0.0), 1.0))
        return mean + (self.rng.normal(0.0, self.noise) if self.noise else 0.0)


class _OracleResponder:
    def __init__(self, oracle, user, round):
        self.oracle = oracle
        self.user = user
        self.round = round

    def ask_keyterm(self, keyterm):
        if self.oracle._pseudo is None:
            raise ConfigurationError("Key-term questions need a dataset with tags.")
        pseudo = self.oracle._pseudo[keyterm]
        mean = float(pseudo @ self.oracle.preference(self.user))
        return ConversationRecord(self.round, int(keyterm), self.oracle._answer(mean), pseudo)

    def ask_arm(self, arm_id):
        mean = float(self.oracle.dataset.features[arm_id] @ self.oracle.preference(self.user))
        return self.oracle._answer(mean)


@dataclass
class ReplayReport:
    policy: str
    window: int
    clicks: np.ndarray
    matches: np.ndarray
    logged_clicks: np.ndarray
    events: np.ndarray

    @staticmethod
    def _ratio(numerator, denominator):
        out = np.full(len(numerator), np.nan)
        positive = denominator > 0
        out[positive] = numerator[positive] / denominator[positive]
        return out

    @property
    def ctr(self):
        """Per-window CTR over matched events; NaN where nothing matched."""
        return self._ratio(self.clicks, self.matches)

    @property
    def logged_ctr(self):
        return self._ratio(self.logged_clicks, self.events)

    @property
    def overall_ctr(self):
        matched = self.matches.sum()
        return float(self.clicks.sum() / matched) if matched else float("nan")

    def normalized_ctr(self, baseline=None):
        """CTR divided by the logged CTR, or by ``baseline``'s CTR when given."""
        reference = self.logged_ctr if baseline is None else baseline.ctr
        size = min(len(reference), len(self.ctr))
        out = np.full(len(self.ctr), np.nan)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(self.ctr[:size]) & (np.nan_to_num(reference[:size]) > 0)
        out[:size][valid] = self.ctr[:size][valid] / reference[:size][valid]
        return out

    def to_frame(self, baseline=None):
        normalized = self.normalized_ctr(baseline)
        frame = pd.DataFrame(
            {
                "window_index": np.arange(len(self.matches)),
                "ctr": self.ctr,
                "normalized_ctr": normalized,
                "matches": self.matches.astype(int),
            }
        )
        return frame.astype({"ctr": object, "normalized_ctr": object}).where(frame.notna(), None)


def replay(policy_factory, pooled, schedule, oracle=None, window=WINDOW, name=None):
    """
    Unbiased replay: only events whose logged arm the policy picks reveal a
    reward and update that user's policy. Every event advances the user's
    conversation clock.
    """
    if window < 1:
        raise ConfigurationError("Replay window must be positive.")
    dataset = pooled.dataset
    windows = max(1, -(-len(pooled.events) // window))
    clicks = np.zeros(windows)
    matches = np.zeros(windows)
    logged_clicks = np.zeros(windows)
    events = np.zeros(windows)
    policies, clocks = {}, {}
    label = name
    for i, event in enumerate(pooled.events):
        policy = policies.get(event.user)
        if policy is None:
            policy = policies[event.user] = policy_factory(event.user)
            label = label or policy.name
        t = clocks[event.user] = clocks.get(event.user, 0) + 1
        slate = ContextSlate(round=t, arm_ids=event.pool, contexts=dataset.features[event.pool])
        budget = conversation_budget(schedule, t)
        if budget and oracle is not None:
            policy.converse(slate, budget, oracle.responder(event.user, t))
        choice = policy.select_arm(slate)
        w = i // window
        events[w] += 1
        logged_clicks[w] += event.reward
        if choice.arm_id == event.arm:
            matches[w] += 1
            clicks[w] += event.reward
            policy.observe_arm(event.arm, dataset.features[event.arm], float(event.reward))
    report = ReplayReport(
        policy=label or "policy",
        window=window,
        clicks=clicks,
        matches=matches,
        logged_clicks=logged_clicks,
        events=events,
    )
    logger.info(
        f"Replay of {report.policy}: {int(matches.sum())} of {len(pooled.events)} events matched, "
        f"CTR {report.overall_ctr:.4f}"
    )
    return report


def synthesize_logs(world, events_per_user, rng, directory=None):
    """
    Logs of a uniform-random logging policy over a synthetic world with binary
    rewards (Bernoulli of the clipped linear mean). Returns the events, features
    and tags tables; with ``directory`` also writes them as CSV files.
    """
    if events_per_user < 1:
        raise ConfigurationError("events_per_user must be at least 1.")
    rows = []
    for step in range(events_per_user):
        for user in range(world.num_users):
            arm = int(rng.integers(world.num_arms))
            mean = float(world.features[arm] @ world.preferences[user])
            click = int(rng.random() < min(max(mean, 0.0), 1.0))
            rows.append((user, step * world.num_users + user, arm, click))
    events = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    observed = world.observed_features
    features = pd.DataFrame(observed, columns=[f"f{i + 1}" for i in range(observed.shape[1])])
    features.insert(0, "arm_id", np.arange(world.num_arms))
    edges = world.graph.weights.tocoo()
    tags = pd.DataFrame({"arm_id": edges.row, "keyterm_id": edges.col}).sort_values(TAG_COLUMNS)
    if directory is not None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        events.to_csv(directory / "events.csv", index=False)
        features.to_csv(directory / "features.csv", index=False)
        tags.to_csv(directory / "tags.csv", index=False)
        logger.info(f"Wrote {len(events)} synthetic log events to {directory}")
    return events, features, tags
