"""Domain types, answer canonicalization, vote tallying and evaluation metrics.

Everything here is a pure function over immutable values and is safe to call
from any number of threads.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DegenerateBase, EmptyBallot, UnparseableAnswer

# A canonical answer is a plain normalized string: non-empty, no surrounding
# whitespace, compared by exact equality.  For multiple-choice questions it is
# one of the question's AnswerSpace labels.
CanonicalAnswer = str

_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")
_EDGE_CHARS = " \t\r\n.,:;!?\"'`()[]{}<>*_-"


def generate_labels(count: int) -> tuple[str, ...]:
    """Choice labels A, B, C, ... for ``count`` options (at most 26)."""
    if count < 1:
        raise ValueError(f"need at least one label, got {count}")
    if count > len(_ALPHABET):
        raise ValueError(f"at most {len(_ALPHABET)} generated labels, got {count}")
    return tuple(_ALPHABET[:count])


@dataclass(frozen=True)
class AnswerSpace:
    """The finite answer vocabulary of a question.

    Label order is the deterministic tie-break order.  An open-ended space has
    no labels and compares answers by normalized exact match.
    """

    labels: tuple[str, ...] = ()
    open_ended: bool = False

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.open_ended:
            if self.labels:
                raise ValueError("an open-ended space carries no labels")
            return
        if not self.labels:
            raise ValueError("a closed space needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in {self.labels!r}")
        if any(not l or l != l.strip() for l in self.labels):
            raise ValueError("labels must be non-empty and trimmed")

    @classmethod
    def multiple_choice(cls, count: int) -> "AnswerSpace":
        return cls(labels=generate_labels(count))

    @classmethod
    def open(cls) -> "AnswerSpace":
        return cls(labels=(), open_ended=True)

    def __contains__(self, answer: object) -> bool:
        if self.open_ended:
            return isinstance(answer, str) and bool(answer)
        return answer in self.labels

    def tie_key(self, answer: CanonicalAnswer):
        """Sort key realizing the tie-break order (label order, else lexicographic)."""
        if self.open_ended:
            return answer
        return self.labels.index(answer)


@dataclass(frozen=True)
class QuestionItem:
    """One benchmark question; ``truth`` is the ground-truth label when known."""

    id: str
    prompt: str
    space: AnswerSpace
    truth: CanonicalAnswer | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")
        if self.truth is not None and self.truth not in self.space:
            raise ValueError(f"truth {self.truth!r} not in answer space of {self.id!r}")


@dataclass(frozen=True)
class AnswerRecord:
    """One agent's answer plus free-text rationale for one round.

    ``answer`` is ``None`` when the agent abstained (its reply could not be
    parsed); abstentions are excluded from tallies.
    """

    agent: str
    answer: CanonicalAnswer | None
    rationale: str
    round: int
    token_usage: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round index must be >= 0")
        pt, ct = self.token_usage
        if pt < 0 or ct < 0:
            raise ValueError("token counts must be non-negative")


@dataclass
class TallyResult:
    """Vote counts with a deterministic winner.

    ``tied`` is true when two or more answers share the maximal count; the
    winner is then the tied answer earliest in tie-break order.  ``margin`` is
    the winner count minus the runner-up count (the winner count itself when
    there is no runner-up).
    """

    counts: dict[CanonicalAnswer, int]
    winner: CanonicalAnswer
    tied: bool
    margin: int

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "winner": self.winner,
            "tied": self.tied,
            "margin": self.margin,
        }


def canonicalize_answer(raw: str, space: AnswerSpace) -> CanonicalAnswer:
    """Extract a canonical answer from arbitrary backend text.

    Closed spaces: an exact (case-insensitive) match of the whole reply against
    a label wins outright; otherwise the final standalone label token in the
    reply is taken.  Single-letter labels only match tokens of the same case so
    the article "a" never reads as the label A.  Open-ended spaces normalize by
    case-folding and collapsing whitespace.

    Raises UnparseableAnswer when no label can be found; callers decide whether
    that counts as an abstention.
    """
    text = raw.strip()
    if space.open_ended:
        normalized = " ".join(text.split()).casefold()
        if not normalized:
            raise UnparseableAnswer("empty open-ended answer")
        return normalized

    bare = text.strip(_EDGE_CHARS)
    for label in space.labels:
        if bare.casefold() == label.casefold():
            return label

    by_fold = {}
    for label in space.labels:
        if len(label) > 1:
            by_fold.setdefault(label.casefold(), label)
    exact = set(space.labels)
    found = None
    for token in _TOKEN_RE.findall(text):
        if token in exact:
            found = token
        elif token.casefold() in by_fold:
            found = by_fold[token.casefold()]
    if found is not None:
        return found
    raise UnparseableAnswer(f"no answer label found in {raw!r}")


def tally_majority(votes: Iterable[CanonicalAnswer], space: AnswerSpace) -> TallyResult:
    """Count votes and pick the plurality winner, tie-broken by label order.

    Permutation-invariant: any reordering of ``votes`` yields the same result.
    """
    votes = list(votes)
    if not votes:
        raise EmptyBallot("cannot tally an empty ballot")
    if not space.open_ended:
        stray = [v for v in votes if v not in space]
        if stray:
            raise ValueError(f"votes outside answer space: {stray!r}")
    counter = Counter(votes)
    top = max(counter.values())
    leaders = [a for a, c in counter.items() if c == top]
    winner = min(leaders, key=space.tie_key)
    runner_up = max((c for a, c in counter.items() if a != winner), default=0)
    ordered = dict(sorted(counter.items(), key=lambda kv: space.tie_key(kv[0])))
    return TallyResult(
        counts=ordered,
        winner=winner,
        tied=len(leaders) > 1,
        margin=top - runner_up,
    )


def relative_error_reduction(acc_base: float, acc_new: float) -> float:
    """Fraction of the baseline's errors removed: ((1-base) - (1-new)) / (1-base)."""
    if not 0.0 <= acc_base <= 1.0 or not 0.0 <= acc_new <= 1.0:
        raise ValueError("accuracies must lie in [0, 1]")
    err_base = 1.0 - acc_base
    if err_base == 0.0:
        raise DegenerateBase("baseline accuracy 1.0 leaves no errors to reduce")
    return (err_base - (1.0 - acc_new)) / err_base


@dataclass
class MetricsReport:
    """Per-agent and consensus accuracy with the headline comparison metrics.

    ``relative_error_reduction`` is ``None`` when the best single agent made no
    errors (the reduction is undefined there).
    """

    per_agent_accuracy: dict[str, float]
    consensus_accuracy: float
    best_single: tuple[str, float]
    point_gain: float
    relative_error_reduction: float | None

    @classmethod
    def from_accuracies(
        cls, per_agent: dict[str, float], consensus: float
    ) -> "MetricsReport":
        if not per_agent:
            raise ValueError("need at least one per-agent accuracy")
        best_agent = min(per_agent, key=lambda a: (-per_agent[a], a))
        best = per_agent[best_agent]
        err_best = 1.0 - best
        reduction = None
        if err_best > 0.0:
            reduction = (err_best - (1.0 - consensus)) / err_best
        return cls(
            per_agent_accuracy=dict(sorted(per_agent.items())),
            consensus_accuracy=consensus,
            best_single=(best_agent, best),
            point_gain=100.0 * (consensus - best),
            relative_error_reduction=reduction,
        )

    def to_dict(self) -> dict:
        return {
            "per_agent_accuracy": dict(self.per_agent_accuracy),
            "consensus_accuracy": self.consensus_accuracy,
            "best_single": {"agent": self.best_single[0], "accuracy": self.best_single[1]},
            "point_gain": self.point_gain,
            "relative_error_reduction": self.relative_error_reduction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            per_agent_accuracy=dict(data["per_agent_accuracy"]),
            consensus_accuracy=data["consensus_accuracy"],
            best_single=(data["best_single"]["agent"], data["best_single"]["accuracy"]),
            point_gain=data["point_gain"],
            relative_error_reduction=data["relative_error_reduction"],
        )


@dataclass
class CostLedger:
    """Token usage and abstract-currency cost per agent.

    Token counts accumulate as exact integers; an agent's cost is always
    computed from its accumulated totals, so the formula
    ``prompt/1000 * price_in + completion/1000 * price_out`` holds exactly on
    the stored fields.
    """

    prices: dict[str, tuple[float, float]] = field(default_factory=dict)
    tokens: dict[str, tuple[int, int]] = field(default_factory=dict)

    def register_agent(self, agent: str, price_in: float = 0.0, price_out: float = 0.0):
        self.prices[agent] = (price_in, price_out)
        self.tokens.setdefault(agent, (0, 0))

    def add_usage(self, agent: str, prompt_tokens: int, completion_tokens: int):
        pt, ct = self.tokens.get(agent, (0, 0))
        self.tokens[agent] = (pt + prompt_tokens, ct + completion_tokens)
        self.prices.setdefault(agent, (0.0, 0.0))

    def agent_cost(self, agent: str) -> float:
        pt, ct = self.tokens.get(agent, (0, 0))
        price_in, price_out = self.prices.get(agent, (0.0, 0.0))
        return pt / 1000.0 * price_in + ct / 1000.0 * price_out

    @property
    def total_cost(self) -> float:
        return sum(self.agent_cost(a) for a in sorted(self.tokens))

    def merge(self, other: "CostLedger"):
        for agent, price in other.prices.items():
            self.prices.setdefault(agent, price)
        for agent, (pt, ct) in other.tokens.items():
            self.add_usage(agent, pt, ct)

    def to_dict(self) -> dict:
        per_agent = {
            agent: {
                "prompt_tokens": self.tokens[agent][0],
                "completion_tokens": self.tokens[agent][1],
                "price_in_per_1k": self.prices.get(agent, (0.0, 0.0))[0],
                "price_out_per_1k": self.prices.get(agent, (0.0, 0.0))[1],
                "cost": self.agent_cost(agent),
            }
            for agent in sorted(self.tokens)
        }
        return {"per_agent": per_agent, "total_cost": self.total_cost}

    @classmethod
    def from_dict(cls, data: dict) -> "CostLedger":
        ledger = cls()
        for agent, entry in data["per_agent"].items():
            ledger.prices[agent] = (entry["price_in_per_1k"], entry["price_out_per_1k"])
            ledger.tokens[agent] = (entry["prompt_tokens"], entry["completion_tokens"])
        return ledger
