"""Desk-scale verification: stochastic panels of known accuracy, an exact
majority-vote accuracy oracle, and jury-effect sweeps over panel size.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass

from .agents import AgentProfile, StochasticParams
from .core import AnswerSpace, QuestionItem, generate_labels
from .engine import ConsensusEngine, PanelConfig, initial_records
from .errors import TooManyAgents

# k^n joint assignments stay enumerable (directly or as count vectors) up to
# here; larger panels are Monte Carlo territory.
MAX_ORACLE_AGENTS = 12


@dataclass(frozen=True)
class SimSpec:
    """A synthetic experiment: agents of given accuracy over ``questions``
    random questions with ``label_count`` choices each."""

    agent_accuracies: tuple[float, ...]
    label_count: int
    questions: int
    strategy: str = "simple_vote"
    master_seed: int = 0
    max_rounds: int = 2
    adoption: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "agent_accuracies", tuple(self.agent_accuracies))
        if not self.agent_accuracies:
            raise ValueError("need at least one agent accuracy")
        if any(not 0.0 <= p <= 1.0 for p in self.agent_accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        if self.label_count < 2:
            raise ValueError("label_count must be >= 2")
        if self.questions < 1:
            raise ValueError("questions must be >= 1")


@dataclass
class SimResult:
    empirical_consensus_accuracy: float
    empirical_per_agent: list[float]
    oracle_accuracy: float | None
    stderr: float

    def to_dict(self) -> dict:
        return {
            "empirical_consensus_accuracy": self.empirical_consensus_accuracy,
            "empirical_per_agent": list(self.empirical_per_agent),
            "oracle_accuracy": self.oracle_accuracy,
            "stderr": self.stderr,
        }


def majority_accuracy_oracle(accuracies: list[float], label_count: int) -> float:
    """Exact probability that a majority vote returns the true label.

    Model: agent i answers the truth with probability p_i, otherwise a
    uniformly chosen distractor ((1-p_i)/(k-1) each); ties break by label
    order.  The truth label is placed uniformly over the k positions and the
    result averaged, so label order is irrelevant in expectation — exactly the
    quantity a Monte Carlo run over random truths estimates.

    The joint distribution over the k^n assignments is folded agent by agent
    into count vectors, which is exact and identical to full enumeration.
    """
    accuracies = list(accuracies)
    n = len(accuracies)
    if n > MAX_ORACLE_AGENTS:
        raise TooManyAgents(
            f"oracle enumerates at most {MAX_ORACLE_AGENTS} agents, got {n}"
        )
    if n < 1:
        raise ValueError("need at least one agent accuracy")
    if label_count < 2:
        raise ValueError("label_count must be >= 2")
    if any(not 0.0 <= p <= 1.0 for p in accuracies):
        raise ValueError("accuracies must lie in [0, 1]")

    k = label_count
    total = 0.0
    for truth in range(k):
        distribution: dict[tuple[int, ...], float] = {tuple([0] * k): 1.0}
        for p in accuracies:
            wrong = (1.0 - p) / (k - 1)
            step: dict[tuple[int, ...], float] = defaultdict(float)
            for counts, probability in distribution.items():
                for label in range(k):
                    branch = p if label == truth else wrong
                    if branch == 0.0:
                        continue
                    bumped = list(counts)
                    bumped[label] += 1
                    step[tuple(bumped)] += probability * branch
            distribution = step
        for counts, probability in distribution.items():
            winner = counts.index(max(counts))  # earliest label among ties
            if winner == truth:
                total += probability
    return total / k


def condorcet_curve(
    p: float, panel_sizes: list[int], label_count: int
) -> list[tuple[int, float]]:
    """Oracle accuracy of uniform-accuracy panels across odd panel sizes."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    points = []
    for size in panel_sizes:
        if size % 2 == 0:
            raise ValueError(f"panel sizes must be odd, got {size}")
        points.append((size, majority_accuracy_oracle([p] * size, label_count)))
    return points


def _oracle_regime(spec: SimSpec) -> bool:
    return (
        spec.strategy == "simple_vote"
        and spec.adoption == 0.0
        and len(spec.agent_accuracies) <= MAX_ORACLE_AGENTS
    )


def simulate(spec: SimSpec) -> SimResult:
    """Monte Carlo run of the chosen strategy over synthetic questions.

    Questions carry ids "sim-<index>" and uniformly random truth labels, so
    per-agent randomness streams are stable across spec changes.
    """
    labels = generate_labels(spec.label_count)
    space = AnswerSpace(labels)
    agents = [
        AgentProfile(
            id=f"s{i:02d}",
            backend=StochasticParams(p_correct=p, p_adopt=spec.adoption),
        )
        for i, p in enumerate(spec.agent_accuracies)
    ]
    groups = None
    if spec.strategy == "hierarchical":
        if len(agents) < 4:
            raise ValueError("hierarchical simulation needs at least four agents")
        half = math.ceil(len(agents) / 2)
        groups = [[a.id for a in agents[:half]], [a.id for a in agents[half:]]]
    panel = PanelConfig(
        agents=agents,
        strategy=spec.strategy,
        max_rounds=spec.max_rounds,
        groups=groups,
        master_seed=spec.master_seed,
    )
    engine = ConsensusEngine(panel)

    truth_rng = random.Random(f"{spec.master_seed}:truth")
    consensus_hits = 0
    agent_hits = {a.id: 0 for a in agents}
    for index in range(spec.questions):
        truth = labels[truth_rng.randrange(spec.label_count)]
        question = QuestionItem(
            id=f"sim-{index}",
            prompt=f"synthetic question {index}",
            space=space,
            truth=truth,
        )
        outcome = engine.run(question, question_index=index)
        if outcome.final == truth:
            consensus_hits += 1
        for agent_id, record in initial_records(outcome).items():
            if record.answer == truth:
                agent_hits[agent_id] += 1

    n = spec.questions
    accuracy = consensus_hits / n
    return SimResult(
        empirical_consensus_accuracy=accuracy,
        empirical_per_agent=[agent_hits[a.id] / n for a in agents],
        oracle_accuracy=(
            majority_accuracy_oracle(list(spec.agent_accuracies), spec.label_count)
            if _oracle_regime(spec)
            else None
        ),
        stderr=math.sqrt(accuracy * (1.0 - accuracy) / n),
    )
