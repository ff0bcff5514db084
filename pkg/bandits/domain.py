"""
Arms, key-terms and the weighted bipartite relation graph between them, per-round
context slates, key-term pseudo-contexts and the conversation schedule.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, GraphLoadError, UsageError

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-6
UNIT_NORM_TOLERANCE = 1e-6


@dataclass(eq=False)
class RelationGraph:
    """
    Weighted bipartite graph W between N arms and K key-terms.

    Rows (arms) sum to one; every key-term has at least one incident arm.
    Immutable after construction.
    """

    num_arms: int
    num_keyterms: int
    weights: sp.csr_matrix
    column_sums: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = sp.csr_matrix(self.weights, dtype=float)
        if self.weights.shape != (self.num_arms, self.num_keyterms):
            raise ConfigurationError(
                f"Weight matrix shape {self.weights.shape} does not match "
                f"{self.num_arms} arms x {self.num_keyterms} key-terms."
            )
        if self.weights.nnz and self.weights.data.min() < 0:
            raise ConfigurationError("Relation weights must be nonnegative.")
        row_sums = np.asarray(self.weights.sum(axis=1)).ravel()
        if not np.allclose(row_sums, 1.0, rtol=0.0, atol=1e-9):
            worst = int(np.argmax(np.abs(row_sums - 1.0)))
            raise ConfigurationError(
                f"Arm {worst} weights sum to {row_sums[worst]:.9f}, expected 1."
            )
        self.column_sums = np.asarray(self.weights.sum(axis=0)).ravel()
        orphans = np.flatnonzero(self.column_sums <= 0)
        if orphans.size:
            raise ConfigurationError(
                f"Key-term {int(orphans[0])} has no incident arm."
            )
        self._by_keyterm = self.weights.tocsc()

    @classmethod
    def from_edges(cls, num_arms, num_keyterms, arms, keyterms, weights):
        matrix = sp.coo_matrix(
            (np.asarray(weights, dtype=float), (np.asarray(arms), np.asarray(keyterms))),
            shape=(num_arms, num_keyterms),
        )
        return cls(num_arms=num_arms, num_keyterms=num_keyterms, weights=matrix.tocsr())

    def incident_arms(self, keyterm):
        self._check_keyterm(keyterm)
        column = self._by_keyterm[:, keyterm]
        return column.indices.copy(), column.data.copy()

    def keyterms_of(self, arm):
        row = self.weights[arm]
        return row.indices.copy(), row.data.copy()

    def normalized_weights(self):
        """w_{a,k} / sum_{a'} w_{a',k} over the full arm set, as an N x K sparse matrix."""
        return (self.weights @ sp.diags(1.0 / self.column_sums)).tocsr()

    def pseudo_contexts(self, features):
        """Full-arm pseudo-contexts x~_k for every key-term (K x d)."""
        features = np.asarray(features, dtype=float)
        if features.shape[0] != self.num_arms:
            raise ConfigurationError(
                f"Feature table has {features.shape[0]} rows for {self.num_arms} arms."
            )
        return np.asarray(self.normalized_weights().T @ features)

    def slate_pseudo_contexts(self, arm_ids, contexts):
        """
        Pseudo-contexts restricted to the arms of one slate.

        Returns the candidate key-term ids (those incident to at least one slate
        arm, ascending), their pseudo-contexts (C x d) and the slate-normalized
        weights w_{a,k} / sum_{a' in slate} w_{a',k} as a dense (n x C) array.
        """
        local = self.weights[np.asarray(arm_ids)]
        sums = np.asarray(local.sum(axis=0)).ravel()
        candidates = np.flatnonzero(sums > 0)
        shares = local[:, candidates].toarray() / sums[candidates]
        return candidates, shares.T @ np.asarray(contexts, dtype=float), shares

    def _check_keyterm(self, keyterm):
        if not 0 <= keyterm < self.num_keyterms:
            raise ConfigurationError(
                f"Key-term {keyterm} is outside [0, {self.num_keyterms})."
            )


@dataclass(eq=False)
class ContextSlate:
    """The candidate arms A_t of one round and their contexts X_t (n x d)."""

    round: int
    arm_ids: np.ndarray
    contexts: np.ndarray

    def __post_init__(self):
        self.arm_ids = np.asarray(self.arm_ids, dtype=int).ravel()
        self.contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
        if self.arm_ids.size == 0:
            self.contexts = self.contexts.reshape(0, self.contexts.shape[-1])
        if self.contexts.shape[0] != self.arm_ids.size:
            raise ConfigurationError(
                f"Slate has {self.arm_ids.size} arms but {self.contexts.shape[0]} contexts."
            )
        if np.unique(self.arm_ids).size != self.arm_ids.size:
            raise ConfigurationError(f"Slate for round {self.round} repeats an arm id.")

    @classmethod
    def from_contexts(cls, round, arm_ids, contexts):
        """Build a slate, checking that every context is unit-norm."""
        slate = cls(round=round, arm_ids=arm_ids, contexts=contexts)
        norms = np.linalg.norm(slate.contexts, axis=1)
        if slate.size and not np.allclose(norms, 1.0, rtol=0.0, atol=UNIT_NORM_TOLERANCE):
            raise ConfigurationError(
                f"Slate contexts must be unit-norm (found norm {norms.min():.6f}..{norms.max():.6f})."
            )
        return slate

    @property
    def size(self):
        return int(self.arm_ids.size)

    @property
    def dim(self):
        return int(self.contexts.shape[1])

    def with_contexts(self, contexts):
        return ContextSlate(round=self.round, arm_ids=self.arm_ids, contexts=contexts)

    def context_map(self):
        return {int(a): self.contexts[i] for i, a in enumerate(self.arm_ids)}


@dataclass(frozen=True)
class ConversationSchedule:
    """
    Conversation frequency b(t).

    ``log``: b(t) = Q_l * floor(ln t); ``linear``: b(t) = Q_l * floor(t / Q_q);
    ``none``: b(t) = 0.
    """

    KINDS = ("log", "linear", "none")

    kind: str = "log"
    questions: int = 5
    period: int = 50

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"Unknown schedule kind '{self.kind}'.")
        if self.kind != "none" and self.questions < 1:
            raise ConfigurationError("Q_l must be a positive integer.")
        if self.kind == "linear" and self.period < 1:
            raise ConfigurationError("Q_q must be a positive integer.")

    @classmethod
    def parse(cls, text):
        """Parse ``none``, ``log:<Q_l>`` or ``linear:<Q_l>:<Q_q>``."""
        parts = str(text).strip().lower().split(":")
        try:
            if parts[0] == "none" and len(parts) == 1:
                return cls(kind="none", questions=0)
            if parts[0] == "log" and len(parts) == 2:
                return cls(kind="log", questions=int(parts[1]))
            if parts[0] == "linear" and len(parts) == 3:
                return cls(kind="linear", questions=int(parts[1]), period=int(parts[2]))
        except ValueError as exc:
            raise ConfigurationError(f"Invalid schedule '{text}'.") from exc
        raise ConfigurationError(
            f"Invalid schedule '{text}': expected none, log:<Q_l> or linear:<Q_l>:<Q_q>."
        )

    @property
    def label(self):
        if self.kind == "none":
            return "none"
        if self.kind == "log":
            return f"log:{self.questions}"
        return f"linear:{self.questions}:{self.period}"

    def cumulative(self, t):
        """floor(b(t)), with b(0) = 0."""
        if t <= 0 or self.kind == "none":
            return 0
        if self.kind == "log":
            return self.questions * math.floor(math.log(t))
        return self.questions * (t // self.period)

    def first_overrun(self, horizon):
        """First round t <= horizon with b(t) > t, or None."""
        for t in range(1, horizon + 1):
            if self.cumulative(t) > t:
                return t
        return None


def conversation_budget(schedule, t):
    """Number of key-term conversations at round t: floor(b(t)) - floor(b(t-1))."""
    if t < 1:
        raise UsageError(f"Rounds start at 1, got {t}.")
    return schedule.cumulative(t) - schedule.cumulative(t - 1)


@dataclass
class ConversationRecord:
    round: int
    keyterm: int
    feedback: float
    pseudo_context: np.ndarray


class Responder(Protocol):
    """Answers the questions a policy asks during one round."""

    def ask_keyterm(self, keyterm: int) -> ConversationRecord: ...

    def ask_arm(self, arm_id: int) -> float: ...


def key_term_context(graph: RelationGraph, contexts: Mapping[int, np.ndarray], keyterm: int):
    """
    Weighted average of the incident arms' contexts with weights
    w_{a,k} / sum_{a'} w_{a',k}.
    """
    arms, weights = graph.incident_arms(keyterm)
    missing = [int(a) for a in arms if int(a) not in contexts]
    if missing:
        raise ConfigurationError(
            f"Missing context for arm {missing[0]} incident to key-term {keyterm}."
        )
    stacked = np.vstack([np.asarray(contexts[int(a)], dtype=float) for a in arms])
    return (weights / weights.sum()) @ stacked


def load_graph(path):
    """
    Read a graph file: header ``#arms N #keyterms K`` then one
    ``arm_id<TAB>keyterm_id<TAB>weight`` line per edge (0-based ids).
    """
    path = Path(path)
    if not path.exists():
        raise GraphLoadError(f"Graph file {path} does not exist.")
    lines = path.read_text().splitlines()
    if not lines:
        raise GraphLoadError(f"{path}: empty file, expected header '#arms N #keyterms K'.")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#arms" or header[2] != "#keyterms":
        raise GraphLoadError(f"{path}:1: malformed header '{lines[0]}'.")
    try:
        num_arms, num_keyterms = int(header[1]), int(header[3])
    except ValueError as exc:
        raise GraphLoadError(f"{path}:1: malformed header '{lines[0]}'.") from exc
    if num_arms < 1 or num_keyterms < 1:
        raise GraphLoadError(f"{path}:1: arm and key-term counts must be positive.")

    arms, keyterms, weights, seen = [], [], [], {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            raise GraphLoadError(f"{path}:{lineno}: expected 3 tab-separated fields, got '{raw}'.")
        try:
            arm, keyterm, weight = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError as exc:
            raise GraphLoadError(f"{path}:{lineno}: cannot parse '{raw}'.") from exc
        if not 0 <= arm < num_arms:
            raise GraphLoadError(f"{path}:{lineno}: arm id {arm} outside [0, {num_arms}).")
        if not 0 <= keyterm < num_keyterms:
            raise GraphLoadError(
                f"{path}:{lineno}: key-term id {keyterm} outside [0, {num_keyterms})."
            )
        if weight < 0 or not math.isfinite(weight):
            raise GraphLoadError(f"{path}:{lineno}: negative or non-finite weight {weight}.")
        if (arm, keyterm) in seen:
            raise GraphLoadError(
                f"{path}:{lineno}: duplicate edge ({arm}, {keyterm}), first on line {seen[arm, keyterm]}."
            )
        seen[arm, keyterm] = lineno
        arms.append(arm)
        keyterms.append(keyterm)
        weights.append(weight)

    arms, keyterms, weights = np.array(arms, dtype=int), np.array(keyterms, dtype=int), np.array(weights)
    row_sums = np.bincount(arms, weights=weights, minlength=num_arms)
    deviation = np.abs(row_sums - 1.0)
    bad = np.flatnonzero(deviation > ROW_SUM_TOLERANCE * (1 + 1e-6))
    if bad.size:
        arm = int(bad[0])
        first = min((ln for (a, _), ln in seen.items() if a == arm), default=1)
        raise GraphLoadError(
            f"{path}:{first}: weights of arm {arm} sum to {row_sums[arm]:.6f}, expected 1."
        )
    if np.any(deviation > 1e-12):
        logger.warning(f"Renormalizing {int(np.sum(deviation > 1e-12))} arm rows in {path}")
        weights = weights / row_sums[arms]

    degree = np.bincount(keyterms[weights > 0], minlength=num_keyterms)
    orphans = np.flatnonzero(degree == 0)
    if orphans.size:
        keyterm = int(orphans[0])
        zero_lines = [ln for (_, k), ln in seen.items() if k == keyterm]
        if zero_lines:
            raise GraphLoadError(
                f"{path}:{min(zero_lines)}: key-term {keyterm} has only zero-weight edges."
            )
        raise GraphLoadError(f"{path}:1: key-term {keyterm} has no incident arm.")

    graph = RelationGraph.from_edges(num_arms, num_keyterms, arms, keyterms, weights)
    logger.info(f"Loaded graph {path}: {num_arms} arms, {num_keyterms} key-terms, {arms.size} edges")
    return graph


def save_graph(graph, path):
    coo = graph.weights.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"#arms {graph.num_arms} #keyterms {graph.num_keyterms}"]
    lines.extend(
        f"{coo.row[i]}\t{coo.col[i]}\t{float(coo.data[i])!r}" for i in order
    )
    Path(path).write_text("\n".join(lines) + "\n")
