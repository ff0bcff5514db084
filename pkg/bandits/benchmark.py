"""
Experiment orchestration: policy registry, benchmark runs over seeds and users,
aggregation, the ConUCB regret bound, schedule / pool-size sweeps, replay runs
and report files.
"""

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

import conbench

from .domain import ConversationSchedule
from .exceptions import ConfigurationError
from .hidden import HArmCon, HConUCB, HLinUCB
from .policies import ArmCon, ConUCB, LinUCB, OraclePolicy, RandomPolicy, VarLCR, VarMRC, VarRS
from .replay import KeytermOracle, ReplayReport, build_pools, load_logged_dataset, replay
from .simulation import (
    PARAMETER_ERROR_EVERY,
    WorldParams,
    draw_rounds,
    episode_rng,
    generate_world,
    run_episode,
)

logger = logging.getLogger(__name__)

POLICY_KINDS = {
    "linucb": LinUCB,
    "armcon": ArmCon,
    "conucb": ConUCB,
    "var_rs": VarRS,
    "var_mrc": VarMRC,
    "var_lcr": VarLCR,
    "hlinucb": HLinUCB,
    "harmcon": HArmCon,
    "hconucb": HConUCB,
    "random": RandomPolicy,
    "oracle": OraclePolicy,
}
CONUCB_KINDS = {"conucb", "var_rs", "var_mrc", "var_lcr", "hconucb"}
HIDDEN_KINDS = {"hlinucb", "harmcon", "hconucb"}
DEFAULT_POLICY_KINDS = ("linucb", "armcon", "conucb", "var_rs", "var_mrc", "var_lcr")

# Desk-scale defaults under b(t) = 5 floor(ln t): fixed exploration weights and
# a light key-term ridge. The policy classes default to the theoretical alpha_t
# and alpha~_t.
_CONVERSATIONAL_TUNING = {"alpha": 0.5, "alpha_tilde": 0.25, "lambda_tilde": 0.1}
TUNED_POLICY_PARAMS = {
    "linucb": {"alpha": 0.5},
    "armcon": {"alpha": 0.5},
    "conucb": _CONVERSATIONAL_TUNING,
    "var_rs": _CONVERSATIONAL_TUNING,
    "var_mrc": _CONVERSATIONAL_TUNING,
    "var_lcr": _CONVERSATIONAL_TUNING,
}

CSV_FLOAT_FORMAT = "%.10g"


@dataclass
class PolicySpec:
    kind: str
    name: str = None
    params: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.name or self.kind

    @classmethod
    def tuned(cls, kind, name=None, **params):
        """A spec carrying TUNED_POLICY_PARAMS for ``kind`` under ``params``."""
        return cls(kind, name=name, params={**TUNED_POLICY_PARAMS.get(kind, {}), **params})


def default_policies():
    return [PolicySpec.tuned(kind) for kind in DEFAULT_POLICY_KINDS]


@dataclass
class DatasetSpec:
    events: str
    features: str
    tags: str = None
    pool_size: int = 50
    ridge: float = 1.0
    window: int = 500
    binary_feedback: bool = False
    normalize_by: str = None


@dataclass
class ExperimentConfig:
    world: WorldParams = field(default_factory=WorldParams)
    world_seed: int = 0
    policies: list = field(default_factory=default_policies)
    schedule: ConversationSchedule = field(default_factory=ConversationSchedule)
    horizon: int = 2000
    slate_size: int = 50
    seeds: tuple = tuple(range(10))
    users: int = None
    binary: bool = False
    bound: bool = False
    workers: int = 1
    verbose: bool = False
    dataset: DatasetSpec = None

    @property
    def policy_names(self):
        return [spec.label for spec in self.policies]

    def with_changes(self, **changes):
        return replace(self, **changes)

    def validate(self):
        if self.horizon < 1:
            raise ConfigurationError(f"Horizon T must be at least 1, got {self.horizon}.")
        if not self.seeds:
            raise ConfigurationError("At least one seed is required.")
        if not self.policies:
            raise ConfigurationError("At least one policy is required.")
        if len(set(self.policy_names)) != len(self.policies):
            raise ConfigurationError("Policy names must be unique within one experiment.")
        for spec in self.policies:
            if spec.kind not in POLICY_KINDS:
                raise ConfigurationError(
                    f"Unknown policy kind '{spec.kind}'; choose from {', '.join(POLICY_KINDS)}."
                )
        if self.users is not None and self.users < 1:
            raise ConfigurationError("users must be at least 1 when given.")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1.")
        if self.dataset is None and not 1 <= self.slate_size <= self.world.num_arms:
            raise ConfigurationError(
                f"Slate size {self.slate_size} must lie in [1, N={self.world.num_arms}]."
            )
        if self.bound:
            for spec in self.policies:
                if spec.kind in CONUCB_KINDS:
                    lam, lam_tilde = bound_parameters(spec)
                    if not bound_constraints_hold(lam, lam_tilde):
                        raise ConfigurationError(
                            f"{spec.label}: the regret bound needs lambda in (0, 0.5] and "
                            f"lambda~ >= {bound_min_lambda_tilde(lam):.4g}."
                        )
        return self

    def to_dict(self):
        data = asdict(self)
        data["schedule"] = self.schedule.label
        data["seeds"] = list(self.seeds)
        return data


def build_policy(
    spec, dim, graph=None, num_arms=None, rng=None, theta=None, hidden_dim=0, keyterm_contexts=None
):
    """
    Instantiate the policy described by ``spec`` for one user. ``keyterm_contexts``
    is the full-arm pseudo-context table (K x d) conversational policies score
    candidate key-terms with.
    """
    try:
        cls = POLICY_KINDS[spec.kind]
    except KeyError:
        raise ConfigurationError(f"Unknown policy kind '{spec.kind}'.") from None
    params = dict(spec.params)
    if spec.kind == "oracle":
        if theta is None:
            raise ConfigurationError("The oracle policy needs the user's true preference.")
        return cls(theta, name=spec.label)
    if spec.kind == "random":
        return cls(dim, rng=rng, name=spec.label)
    if spec.kind in HIDDEN_KINDS:
        params.setdefault("hidden_dim", hidden_dim)
    if spec.kind in ("hlinucb", "harmcon"):
        return cls(dim, num_arms=num_arms, rng=rng, name=spec.label, **params)
    if spec.kind in CONUCB_KINDS:
        if graph is None:
            raise ConfigurationError(f"{spec.label} needs arm/key-term relations.")
        return cls(
            dim, graph, keyterm_contexts=keyterm_contexts, rng=rng, name=spec.label, **params
        )
    return cls(dim, name=spec.label, **params)


def bound_parameters(spec):
    return float(spec.params.get("lambda_", 0.5)), float(spec.params.get("lambda_tilde", 1.0))


def bound_min_lambda_tilde(lambda_):
    return 2.0 * (1.0 - lambda_) / (lambda_ * (1.0 - math.sqrt(lambda_)) ** 2)


def bound_constraints_hold(lambda_, lambda_tilde):
    return 0 < lambda_ <= 0.5 and lambda_tilde >= bound_min_lambda_tilde(lambda_)


def conucb_regret_bound(dim, lambda_, lambda_tilde, sigma, theta_tilde_norm, schedule, horizon):
    """
    ConUCB's high-probability regret bound for T = 1..horizon, or None when
    (lambda, lambda~) fall outside the range it holds for. b(T) is clamped to 1
    inside the logarithm.
    """
    if not bound_constraints_hold(lambda_, lambda_tilde):
        logger.warning(
            f"Regret bound unavailable for lambda={lambda_}, lambda~={lambda_tilde}"
        )
        return None
    values = np.zeros(horizon)
    ratio = lambda_ / ((1.0 - lambda_) * dim)
    for t in range(1, horizon + 1):
        conversations = max(schedule.cumulative(t), 1)
        width = (
            math.sqrt(lambda_) * math.sqrt(dim * math.log((1.0 + ratio * t) / sigma))
            + 2.0 * math.sqrt((1.0 - lambda_) / lambda_) * theta_tilde_norm
            + (1.0 - math.sqrt(lambda_))
            * math.sqrt(dim * math.log(6.0) + math.log(2.0 * conversations / sigma))
        )
        values[t - 1] = 2.0 * width * math.sqrt(t * dim * math.log(1.0 + ratio * t))
    return values


@dataclass
class EpisodeSummary:
    policy: str
    seed: int
    user: int
    regret: np.ndarray
    parameter_error: np.ndarray
    conversations: int
    coverage_violations: int = 0
    coverage_checked: int = 0
    diagnostics: list = None


@dataclass
class SeriesStats:
    mean: np.ndarray
    std: np.ndarray
    n: int

    @classmethod
    def from_samples(cls, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        n = samples.shape[0]
        std = samples.std(axis=0, ddof=1) if n > 1 else np.zeros(samples.shape[1])
        return cls(mean=samples.mean(axis=0), std=std, n=n)


@dataclass
class AggregateReport:
    policies: list
    horizon: int
    regret: dict = field(default_factory=dict)
    parameter_error: dict = field(default_factory=dict)
    error_rounds: np.ndarray = None
    bound: dict = field(default_factory=dict)
    conversations: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)
    replay: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)

    def final_regret(self, policy):
        stats = self.regret[policy]
        return float(stats.mean[-1]), float(stats.std[-1]), stats.n

    def _long_frame(self, series, rounds):
        frames = [
            pd.DataFrame(
                {"round": rounds, "policy": policy, "mean": stats.mean, "std": stats.std, "n": stats.n}
            )
            for policy, stats in series.items()
        ]
        columns = ["round", "policy", "mean", "std", "n"]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)

    def regret_frame(self):
        return self._long_frame(self.regret, np.arange(1, self.horizon + 1))

    def parameter_error_frame(self):
        return self._long_frame(self.parameter_error, self.error_rounds)

    def bound_frame(self):
        rows = [
            pd.DataFrame({"round": np.arange(1, len(v) + 1), "policy": p, "bound": v})
            for p, v in self.bound.items()
            if v is not None
        ]
        return pd.concat(rows, ignore_index=True) if rows else None

    def summary_frame(self):
        rows = []
        for policy in self.policies:
            if policy in self.regret:
                mean, std, n = self.final_regret(policy)
                rows.append(
                    {
                        "policy": policy,
                        "final_mean": mean,
                        "final_std": std,
                        "n": n,
                        "conversations": self.conversations.get(policy, 0.0),
                    }
                )
        return pd.DataFrame(rows)


def aggregate(summaries, policies, horizon):
    """Mean / std over (seed, user) episodes, in a fixed (seed, user) order."""
    ordered = sorted(summaries, key=lambda s: (s.seed, s.user))
    report = AggregateReport(policies=list(policies), horizon=horizon, episodes=ordered)
    report.error_rounds = np.arange(PARAMETER_ERROR_EVERY, horizon + 1, PARAMETER_ERROR_EVERY)
    for policy in policies:
        runs = [s for s in ordered if s.policy == policy]
        if not runs:
            continue
        report.regret[policy] = SeriesStats.from_samples([np.cumsum(s.regret) for s in runs])
        if report.error_rounds.size:
            report.parameter_error[policy] = SeriesStats.from_samples(
                [s.parameter_error for s in runs]
            )
        report.conversations[policy] = float(np.mean([s.conversations for s in runs]))
        checked = sum(s.coverage_checked for s in runs)
        if checked:
            report.coverage[policy] = 1.0 - sum(s.coverage_violations for s in runs) / checked
    return report


_worker_state = {}


def _init_worker(world, config):
    _worker_state["world"] = world
    _worker_state["config"] = config


def _pooled_episodes(job):
    return run_user_episodes(_worker_state["world"], _worker_state["config"], *job)


def run_user_episodes(world, config, seed, user):
    """
    Every policy of ``config`` against one user for one seed. All policies see
    the same slates and noise; each gets a fresh copy of the same policy stream.
    """
    rounds = draw_rounds(world, config.horizon, config.slate_size, episode_rng(seed, user, 0))
    summaries = []
    for spec in config.policies:
        policy = build_policy(
            spec,
            world.dim,
            graph=world.graph,
            num_arms=world.num_arms,
            rng=episode_rng(seed, user, 1),
            theta=world.observed_preference(user),
            hidden_dim=world.params.hidden_dim,
            keyterm_contexts=world.observed_pseudo_contexts,
        )
        trace = run_episode(
            policy,
            world,
            user,
            config.horizon,
            config.schedule,
            rounds=rounds,
            binary=config.binary,
            verbose=config.verbose,
        )
        violations, checked = trace.coverage_violations()
        summaries.append(
            EpisodeSummary(
                policy=spec.label,
                seed=seed,
                user=user,
                regret=trace.regret,
                parameter_error=np.array([e for _, e in trace.parameter_errors]),
                conversations=trace.conversations,
                coverage_violations=violations,
                coverage_checked=checked,
                diagnostics=trace.diagnostics,
            )
        )
    return summaries


def run_benchmark(config, world=None):
    """Run every (seed, user) job and aggregate per policy."""
    config.validate()
    if world is None:
        world = generate_world(config.world, config.world_seed)
    num_users = world.num_users if config.users is None else min(config.users, world.num_users)
    jobs = [(seed, user) for seed in config.seeds for user in range(num_users)]
    logger.info(
        f"Benchmark started: {len(config.policies)} policies, {len(config.seeds)} seeds, "
        f"{num_users} users, T={config.horizon}, schedule {config.schedule.label}"
    )
    overrun = config.schedule.first_overrun(config.horizon)
    if overrun is not None:
        logger.warning(
            f"Schedule {config.schedule.label} asks more questions than rounds from t={overrun}"
        )
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers, initializer=_init_worker, initargs=(world, config)
        ) as pool:
            batches = list(pool.map(_pooled_episodes, jobs))
    else:
        batches = [run_user_episodes(world, config, seed, user) for seed, user in jobs]
    report = aggregate([s for batch in batches for s in batch], config.policy_names, config.horizon)
    if config.bound:
        for spec in config.policies:
            if spec.kind in CONUCB_KINDS:
                report.bound[spec.label] = bound_for_policy(spec, world, config)
    for policy in report.policies:
        mean, std, n = report.final_regret(policy)
        logger.info(f"{policy}: final regret {mean:.3f} +/- {std:.3f} over {n} episodes")
    return report


def bound_for_policy(spec, world, config):
    lambda_, lambda_tilde = bound_parameters(spec)
    return conucb_regret_bound(
        world.dim,
        lambda_,
        lambda_tilde,
        float(spec.params.get("sigma", 0.05)),
        world.max_preference_norm(),
        config.schedule,
        config.horizon,
    )


def _sweep(config, variants, column, world):
    reports, rows = {}, []
    for label, variant in variants:
        report = run_benchmark(variant, world=world)
        reports[label] = report
        summary = report.summary_frame()
        summary.insert(0, column, label)
        rows.append(summary)
    return reports, pd.concat(rows, ignore_index=True)


def sweep_schedules(config, schedules, world=None):
    """run_benchmark once per conversation schedule; returns (reports, comparison table)."""
    schedules = [s if isinstance(s, ConversationSchedule) else ConversationSchedule.parse(s) for s in schedules]
    if world is None:
        world = generate_world(config.world, config.world_seed)
    variants = [(s.label, config.with_changes(schedule=s)) for s in schedules]
    return _sweep(config, variants, "schedule", world)


def sweep_pool_sizes(config, sizes, world=None):
    """run_benchmark once per slate size; returns (reports, comparison table)."""
    if world is None:
        world = generate_world(config.world, config.world_seed)
    variants = [(int(size), config.with_changes(slate_size=int(size))) for size in sizes]
    return _sweep(config, variants, "pool_size", world)


def combine_reports(reports):
    """Fold sweep reports into one, naming each series ``policy@variant``."""
    combined = None
    for label, report in reports.items():
        if combined is None:
            combined = AggregateReport(policies=[], horizon=report.horizon)
            combined.error_rounds = report.error_rounds
        for policy in report.policies:
            key = f"{policy}@{label}"
            combined.policies.append(key)
            if policy in report.regret:
                combined.regret[key] = report.regret[policy]
            if policy in report.parameter_error:
                combined.parameter_error[key] = report.parameter_error[policy]
            if policy in report.bound:
                combined.bound[key] = report.bound[policy]
            if policy in report.conversations:
                combined.conversations[key] = report.conversations[policy]
    return combined


def run_replay(config, dataset=None):
    """Replay every policy on the logged dataset, once per seed, pooling the counts."""
    config.validate()
    spec = config.dataset
    if spec is None:
        raise ConfigurationError("Replay needs a dataset section.")
    if dataset is None:
        dataset = load_logged_dataset(spec.events, spec.features, spec.tags)
    if dataset.graph is None and any(p.kind in CONUCB_KINDS for p in config.policies):
        raise ConfigurationError("Conversational policies need a tag file for replay.")
    keyterm_contexts = dataset.pseudo_contexts() if dataset.graph is not None else None
    user_index = {user: i for i, user in enumerate(dataset.users)}
    per_policy = {label: [] for label in config.policy_names}
    for seed in config.seeds:
        pooled = build_pools(dataset, spec.pool_size, np.random.default_rng(seed))
        for policy_spec in config.policies:
            oracle = KeytermOracle(
                dataset,
                ridge=spec.ridge,
                binary=spec.binary_feedback,
                rng=episode_rng(seed, len(user_index), 2),
            )

            def factory(user, policy_spec=policy_spec, oracle=oracle, seed=seed):
                return build_policy(
                    policy_spec,
                    dataset.dim,
                    graph=dataset.graph,
                    num_arms=dataset.num_arms,
                    rng=episode_rng(seed, user_index[user], 1),
                    theta=oracle.preference(user),
                    keyterm_contexts=keyterm_contexts,
                )

            per_policy[policy_spec.label].append(
                replay(factory, pooled, config.schedule, oracle, spec.window, name=policy_spec.label)
            )
    report = AggregateReport(policies=config.policy_names, horizon=0)
    report.replay = {label: merge_reports(runs) for label, runs in per_policy.items()}
    baseline = None
    if spec.normalize_by:
        if spec.normalize_by not in report.replay:
            raise ConfigurationError(f"normalize_by names unknown policy '{spec.normalize_by}'.")
        baseline = report.replay[spec.normalize_by]
    report.normalized = {label: baseline for label in report.replay}
    return report


def merge_reports(reports):
    """Pool clicks and matches of replays over the same windows."""
    first = reports[0]
    return ReplayReport(
        policy=first.policy,
        window=first.window,
        clicks=np.sum([r.clicks for r in reports], axis=0),
        matches=np.sum([r.matches for r in reports], axis=0),
        logged_clicks=np.sum([r.logged_clicks for r in reports], axis=0),
        events=np.sum([r.events for r in reports], axis=0),
    )


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path.name


def write_report(report, directory, config, extra=None):
    """
    Write regret.csv, parameter_error.csv, bound.csv, replay_<policy>.csv,
    episodes.npz and manifest.json into ``directory``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    if report.regret:
        files.append(_write_csv(report.regret_frame(), directory / "regret.csv"))
    if report.parameter_error:
        files.append(_write_csv(report.parameter_error_frame(), directory / "parameter_error.csv"))
    bound = report.bound_frame()
    if bound is not None:
        files.append(_write_csv(bound, directory / "bound.csv"))
    for label, replay_report in report.replay.items():
        frame = replay_report.to_frame(report.normalized.get(label))
        files.append(_write_csv(frame, directory / f"replay_{label}.csv"))
    if report.episodes:
        save_episodes(report.episodes, directory / "episodes.npz")
        files.append("episodes.npz")
    manifest = {
        "version": conbench.__version__,
        "config": config.to_dict(),
        "files": files,
        "coverage": report.coverage,
        "conversations": report.conversations,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    logger.info(f"Wrote {len(files) + 1} report files to {directory}")
    return directory


def save_episodes(episodes, path):
    arrays = {
        "policy": np.array([e.policy for e in episodes]),
        "seed": np.array([e.seed for e in episodes]),
        "user": np.array([e.user for e in episodes]),
        "conversations": np.array([e.conversations for e in episodes]),
        "regret": np.vstack([e.regret for e in episodes]),
        "parameter_error": np.vstack([np.atleast_2d(e.parameter_error) for e in episodes])
        if episodes[0].parameter_error.size
        else np.zeros((len(episodes), 0)),
        "coverage": np.array([[e.coverage_violations, e.coverage_checked] for e in episodes]),
    }
    np.savez_compressed(path, **arrays)


def load_episodes(path):
    with np.load(path, allow_pickle=False) as data:
        return [
            EpisodeSummary(
                policy=str(data["policy"][i]),
                seed=int(data["seed"][i]),
                user=int(data["user"][i]),
                regret=data["regret"][i],
                parameter_error=data["parameter_error"][i],
                conversations=int(data["conversations"][i]),
                coverage_violations=int(data["coverage"][i][0]),
                coverage_checked=int(data["coverage"][i][1]),
            )
            for i in range(len(data["policy"]))
        ]


def reaggregate(directory):
    """Rebuild an AggregateReport from a run directory's episodes.npz and manifest."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"Cannot read {directory / 'manifest.json'}: {exc}") from exc
    if not (directory / "episodes.npz").exists():
        raise ConfigurationError(f"{directory} has no episodes.npz to aggregate.")
    episodes = load_episodes(directory / "episodes.npz")
    policies = list(dict.fromkeys(e.policy for e in episodes))
    horizon = int(episodes[0].regret.size)
    return aggregate(episodes, policies, horizon), manifest
