"""The three consensus strategies, the multi-round gossip loop with
convergence control and metadata propagation, and peer-preference analytics.

One engine instance serves one logical thread; judge rotation state is
sequential per engine.  Within a round, agent calls are pure and could fan
out, but results are always collected in AgentId order before tallying.
"""

from __future__ import annotations

import random
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .agents import (
    AgentProfile,
    ChatCompletionClient,
    PromptBundle,
    Transport,
    initial_answer,
    judge_decide,
    revise_with_peers,
)
from .core import (
    AnswerRecord,
    AnswerSpace,
    CanonicalAnswer,
    CostLedger,
    QuestionItem,
    TallyResult,
    tally_majority,
)
from .errors import (
    AllAbstained,
    BackendUnavailable,
    ConsensusError,
    NoSubmissions,
    TooFewAgents,
)

STRATEGIES = ("simple_vote", "judge_vote", "hierarchical")
CONVERGENCE_RULES = ("stability", "unanimity", "supermajority")


@dataclass(frozen=True)
class ConvergenceRule:
    """When a run may stop early.

    "stability" (default): the answer multiset is unchanged between the last
    two rounds.  "unanimity": all non-abstaining answers agree.
    "supermajority": the winner's share reaches ``threshold``.
    """

    kind: str = "stability"
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in CONVERGENCE_RULES:
            raise ValueError(f"unknown convergence rule {self.kind!r}")
        if self.kind == "supermajority":
            if self.threshold is None or not 0.0 < self.threshold <= 1.0:
                raise ValueError("supermajority needs a threshold in (0, 1]")


@dataclass
class RoundMetadata:
    """Machine-generated summary of one round, carried into the next."""

    round: int
    tally: TallyResult
    adopted_from: dict[str, str | None]
    judge: str | None
    note: str

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "tally": self.tally.to_dict(),
            "adopted_from": dict(sorted(self.adopted_from.items())),
            "judge": self.judge,
            "note": self.note,
        }


@dataclass
class RoundTranscript:
    """All answer records of one round plus its metadata (AgentId order)."""

    round: int
    records: list[AnswerRecord]
    metadata: RoundMetadata | None

    def record_for(self, agent: str) -> AnswerRecord | None:
        for record in self.records:
            if record.agent == agent:
                return record
        return None


@dataclass
class PanelConfig:
    """A panel of agents plus the strategy and loop controls for running it."""

    agents: list[AgentProfile]
    strategy: str = "simple_vote"
    max_rounds: int = 2
    convergence: ConvergenceRule = field(default_factory=ConvergenceRule)
    groups: list[list[str]] | None = None
    master_seed: int = 0

    def __post_init__(self):
        if len(self.agents) < 2:
            raise ValueError("a panel needs at least two agents")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids: {ids!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.groups is not None:
            flat = [name for group in self.groups for name in group]
            if any(len(group) < 1 for group in self.groups):
                raise ValueError("every group needs at least one agent")
            if sorted(flat) != sorted(ids):
                raise ValueError("groups must partition the agent list")
        if self.strategy == "hierarchical":
            if self.groups is None or len(self.groups) < 2:
                raise ValueError("hierarchical strategy needs at least two groups")


@dataclass
class ConsensusOutcome:
    """The final answer of one run with its full per-round transcripts.

    For the hierarchical strategy ``rounds`` holds the leader layer and
    ``group_outcomes`` the intra-group runs that fed it.
    """

    question_id: str
    final: CanonicalAnswer
    rounds: list[RoundTranscript]
    converged: bool
    rounds_used: int
    strategy: str
    cost: CostLedger
    group_outcomes: list["ConsensusOutcome"] | None = None


@dataclass
class PreferenceMatrix:
    """Counts of which peer each agent adopted an answer from when switching."""

    counts: dict[tuple[str, str], int]
    totals: dict[str, int]

    def rate(self, adopter: str, source: str) -> float:
        total = self.totals.get(adopter, 0)
        if total == 0:
            return 0.0
        return self.counts.get((adopter, source), 0) / total


def agent_rng(master_seed: int, seed_offset: int, agent_id: str, question_id: str):
    """The dedicated randomness stream for one agent on one question.

    Derivation is by string key, so panel composition changes never perturb
    other agents' draws.
    """
    return random.Random(f"{master_seed}/{seed_offset}/{agent_id}/{question_id}")


def check_convergence(transcripts: list[RoundTranscript], rule: ConvergenceRule) -> bool:
    """Whether the convergence rule holds at the last completed round."""
    if not transcripts:
        raise ValueError("need at least one completed round")
    answers = [r.answer for r in transcripts[-1].records if r.answer is not None]
    if rule.kind == "unanimity":
        return bool(answers) and len(set(answers)) == 1
    if rule.kind == "supermajority":
        if not answers:
            return False
        return max(Counter(answers).values()) / len(answers) >= rule.threshold
    if len(transcripts) < 2:
        return False
    previous = [r.answer for r in transcripts[-2].records if r.answer is not None]
    return bool(answers) and Counter(answers) == Counter(previous)


def elect_leader(group: list[AgentProfile], transcript: RoundTranscript) -> str:
    """The group member representing the group at the next layer: the agent
    whose final answer equals the group's tally winner, earliest id among
    matches."""
    if all(record.answer is None for record in transcript.records):
        raise AllAbstained("cannot elect a leader from an all-abstaining group")
    winner = transcript.metadata.tally.winner
    for agent_id in sorted(a.id for a in group):
        record = transcript.record_for(agent_id)
        if record is not None and record.answer == winner:
            return agent_id
    raise AssertionError("a tally winner always has a matching agent")


def _adoption_source(
    record: AnswerRecord, previous: list[AnswerRecord]
) -> str | None:
    """The earliest-in-order peer whose prior answer this agent switched to."""
    if record.answer is None:
        return None
    prior = next((r for r in previous if r.agent == record.agent), None)
    if prior is None or prior.answer is None or prior.answer == record.answer:
        return None
    for peer in sorted(previous, key=lambda r: r.agent):
        if peer.agent != record.agent and peer.answer == record.answer:
            return peer.agent
    return None


def preference_matrix(outcomes: list[ConsensusOutcome]) -> PreferenceMatrix:
    """Aggregate answer adoptions across runs to probe peer favoritism."""
    counts: dict[tuple[str, str], int] = defaultdict(int)
    totals: dict[str, int] = defaultdict(int)

    def scan(transcripts: list[RoundTranscript]):
        for index in range(1, len(transcripts)):
            previous = transcripts[index - 1].records
            for record in transcripts[index].records:
                source = _adoption_source(record, previous)
                if source is not None:
                    counts[(record.agent, source)] += 1
                    totals[record.agent] += 1

    for outcome in outcomes:
        scan(outcome.rounds)
        for sub in outcome.group_outcomes or []:
            scan(sub.rounds)
    return PreferenceMatrix(dict(counts), dict(totals))


class ConsensusEngine:
    """Runs one panel over successive questions.

    The judge for the first question is drawn uniformly from the panel using
    the master seed; afterwards judging rotates round-robin in AgentId order
    across questions.
    """

    def __init__(
        self,
        panel: PanelConfig,
        transport: Transport | None = None,
        sleep=time.sleep,
    ):
        self.panel = panel
        self._client = ChatCompletionClient(transport=transport, sleep=sleep)
        self._ordered = sorted(panel.agents, key=lambda a: a.id)
        self._question_index = 0
        if panel.strategy == "judge_vote" and len(panel.agents) < 3:
            raise TooFewAgents("judge_vote needs at least three agents")
        self._judge_start = random.Random(f"{panel.master_seed}:judge").randrange(
            len(self._ordered)
        )

    # -- public API ---------------------------------------------------------

    def run(self, question: QuestionItem, question_index: int | None = None):
        """One full consensus run; ``question_index`` drives judge rotation
        and defaults to an internal per-engine counter."""
        if question_index is None:
            question_index = self._question_index
            self._question_index += 1
        if self.panel.strategy == "simple_vote":
            return self._run_simple(self._ordered, question)
        if self.panel.strategy == "judge_vote":
            return self._run_judge(question, question_index)
        return self._run_hierarchical(question)

    def judge_for(self, question_index: int) -> str:
        return self._ordered[
            (self._judge_start + question_index) % len(self._ordered)
        ].id

    # -- shared plumbing ----------------------------------------------------

    def _new_ledger(self, profiles: list[AgentProfile]) -> CostLedger:
        ledger = CostLedger()
        for profile in profiles:
            ledger.register_agent(profile.id, *profile.price)
        return ledger

    def _streams(self, profiles: list[AgentProfile], question: QuestionItem):
        seed = self.panel.master_seed
        return {
            p.id: agent_rng(seed, p.seed_offset(), p.id, question.id)
            for p in profiles
        }

    def _metadata(
        self,
        round_index: int,
        records: list[AnswerRecord],
        previous: list[AnswerRecord] | None,
        space: AnswerSpace,
        judge: str | None = None,
    ) -> RoundMetadata:
        answers = [r.answer for r in records if r.answer is not None]
        if not answers:
            raise AllAbstained(f"every agent abstained in round {round_index}")
        tally = tally_majority(answers, space)
        adopted: dict[str, str | None] = {}
        for record in records:
            adopted[record.agent] = (
                _adoption_source(record, previous) if previous else None
            )
        top = tally.counts[tally.winner]
        runner_up = top - tally.margin
        if tally.tied:
            note = f"answer {tally.winner} tied at {top}, broke by label order"
        else:
            note = f"answer {tally.winner} led {top}-{runner_up}"
        return RoundMetadata(round_index, tally, adopted, judge, note)

    # -- simple vote --------------------------------------------------------

    def _simple_rounds(
        self, profiles: list[AgentProfile], question: QuestionItem, ledger: CostLedger
    ) -> tuple[list[RoundTranscript], bool]:
        streams = self._streams(profiles, question)
        transcripts: list[RoundTranscript] = []

        records = []
        for profile in profiles:
            try:
                record = initial_answer(
                    profile, question, streams[profile.id], client=self._client
                )
            except BackendUnavailable as exc:
                exc.partial_rounds = list(transcripts)
                raise
            ledger.add_usage(profile.id, *record.token_usage)
            records.append(record)
        metadata = self._metadata(0, records, None, question.space)
        transcripts.append(RoundTranscript(0, records, metadata))

        converged = False
        for round_index in range(1, self.panel.max_rounds):
            previous = transcripts[-1]
            records = []
            for profile in profiles:
                own = previous.record_for(profile.id)
                peers = tuple(
                    r
                    for r in previous.records
                    if r.agent != profile.id and r.answer is not None
                )
                if peers:
                    bundle = PromptBundle(
                        "revise", question, peers, previous.metadata, own
                    )
                    try:
                        record = revise_with_peers(
                            profile, bundle, streams[profile.id], client=self._client
                        )
                    except BackendUnavailable as exc:
                        exc.partial_rounds = list(transcripts)
                        raise
                else:
                    # Nothing new to see: keep the prior answer without a call.
                    record = AnswerRecord(
                        profile.id, own.answer, own.rationale, round_index
                    )
                ledger.add_usage(profile.id, *record.token_usage)
                records.append(record)
            metadata = self._metadata(
                round_index, records, previous.records, question.space
            )
            transcripts.append(RoundTranscript(round_index, records, metadata))
            converged = check_convergence(transcripts, self.panel.convergence)
            if converged:
                break
        if len(transcripts) == 1:
            converged = check_convergence(transcripts, self.panel.convergence)
        return transcripts, converged

    def _run_simple(
        self, profiles: list[AgentProfile], question: QuestionItem
    ) -> ConsensusOutcome:
        ledger = self._new_ledger(profiles)
        transcripts, converged = self._simple_rounds(profiles, question, ledger)
        final = transcripts[-1].metadata.tally.winner
        return ConsensusOutcome(
            question_id=question.id,
            final=final,
            rounds=transcripts,
            converged=converged,
            rounds_used=len(transcripts),
            strategy="simple_vote",
            cost=ledger,
        )

    # -- judge vote ---------------------------------------------------------

    def _run_judge(
        self, question: QuestionItem, question_index: int
    ) -> ConsensusOutcome:
        profiles = self._ordered
        judge_id = self.judge_for(question_index)
        judge_profile = next(p for p in profiles if p.id == judge_id)
        submitters = [p for p in profiles if p.id != judge_id]
        ledger = self._new_ledger(profiles)
        streams = self._streams(profiles, question)

        submissions = []
        for profile in submitters:
            try:
                record = initial_answer(
                    profile, question, streams[profile.id], client=self._client
                )
            except BackendUnavailable as exc:
                exc.partial_rounds = []
                raise
            ledger.add_usage(profile.id, *record.token_usage)
            submissions.append(record)
        if all(r.answer is None for r in submissions):
            raise NoSubmissions("every submitter abstained")

        bundle = PromptBundle("judge", question, tuple(submissions))
        try:
            judge_record = judge_decide(
                judge_profile, bundle, streams[judge_id], client=self._client
            )
        except BackendUnavailable as exc:
            exc.partial_rounds = []
            raise
        ledger.add_usage(judge_id, *judge_record.token_usage)

        records = sorted(submissions + [judge_record], key=lambda r: r.agent)
        answers = [r.answer for r in submissions if r.answer is not None]
        tally = tally_majority(answers, question.space)
        top = tally.counts[tally.winner]
        metadata = RoundMetadata(
            round=0,
            tally=tally,
            adopted_from={r.agent: None for r in records},
            judge=judge_id,
            note=f"judge {judge_id} ruled {judge_record.answer}; "
            f"submissions led by {tally.winner} ({top})",
        )
        transcript = RoundTranscript(0, records, metadata)
        converged = check_convergence([transcript], self.panel.convergence)
        return ConsensusOutcome(
            question_id=question.id,
            final=judge_record.answer,
            rounds=[transcript],
            converged=converged,
            rounds_used=1,
            strategy="judge_vote",
            cost=ledger,
        )

    # -- hierarchical -------------------------------------------------------

    def _run_hierarchical(self, question: QuestionItem) -> ConsensusOutcome:
        by_id = {p.id: p for p in self.panel.agents}
        group_profiles = [
            sorted((by_id[name] for name in group), key=lambda p: p.id)
            for group in self.panel.groups
        ]

        sub_outcomes: list[ConsensusOutcome] = []
        kept_groups: list[list[AgentProfile]] = []
        failures: list[ConsensusError] = []
        for profiles in group_profiles:
            ledger = self._new_ledger(profiles)
            try:
                transcripts, converged = self._simple_rounds(
                    profiles, question, ledger
                )
            except (BackendUnavailable, AllAbstained) as exc:
                failures.append(exc)
                continue
            sub_outcomes.append(
                ConsensusOutcome(
                    question_id=question.id,
                    final=transcripts[-1].metadata.tally.winner,
                    rounds=transcripts,
                    converged=converged,
                    rounds_used=len(transcripts),
                    strategy="simple_vote",
                    cost=ledger,
                )
            )
            kept_groups.append(profiles)
        if failures and len(sub_outcomes) < 2:
            raise failures[0]

        proposals = []
        for profiles, sub in zip(kept_groups, sub_outcomes):
            leader = elect_leader(profiles, sub.rounds[-1])
            tally = sub.rounds[-1].metadata.tally
            summary = ", ".join(f"{a}:{c}" for a, c in tally.counts.items())
            proposals.append(
                AnswerRecord(
                    agent=leader,
                    answer=sub.final,
                    rationale=f"group of {len(profiles)} settled on {sub.final} "
                    f"(tally {summary})",
                    round=0,
                )
            )
        proposals.sort(key=lambda r: r.agent)
        metadata = self._metadata(0, proposals, None, question.space)
        transcript = RoundTranscript(0, proposals, metadata)
        converged = check_convergence([transcript], self.panel.convergence)

        ledger = self._new_ledger(self.panel.agents)
        for sub in sub_outcomes:
            ledger.merge(sub.cost)
        return ConsensusOutcome(
            question_id=question.id,
            final=metadata.tally.winner,
            rounds=[transcript],
            converged=converged,
            rounds_used=1,
            strategy="hierarchical",
            cost=ledger,
            group_outcomes=sub_outcomes,
        )


def run_simple_vote(
    panel: PanelConfig, question: QuestionItem, transport: Transport | None = None
) -> ConsensusOutcome:
    """One-shot simple-vote run: initial answers, gossip revisions, majority."""
    if panel.strategy != "simple_vote":
        raise ValueError(f"panel strategy is {panel.strategy!r}, not simple_vote")
    return ConsensusEngine(panel, transport=transport).run(question)


def run_judge_vote(
    panel: PanelConfig, question: QuestionItem, transport: Transport | None = None
) -> ConsensusOutcome:
    """One-shot judge run: non-judges submit, the judge picks among them."""
    if panel.strategy != "judge_vote":
        raise ValueError(f"panel strategy is {panel.strategy!r}, not judge_vote")
    return ConsensusEngine(panel, transport=transport).run(question)


def run_hierarchical(
    panel: PanelConfig, question: QuestionItem, transport: Transport | None = None
) -> ConsensusOutcome:
    """One-shot hierarchical run: per-group consensus, then a leader vote."""
    if panel.strategy != "hierarchical":
        raise ValueError(f"panel strategy is {panel.strategy!r}, not hierarchical")
    return ConsensusEngine(panel, transport=transport).run(question)


def initial_records(outcome: ConsensusOutcome) -> dict[str, AnswerRecord]:
    """Each agent's round-0 record, reaching into group runs when present."""
    if outcome.group_outcomes:
        merged: dict[str, AnswerRecord] = {}
        for sub in outcome.group_outcomes:
            merged.update(initial_records(sub))
        return dict(sorted(merged.items()))
    return {r.agent: r for r in outcome.rounds[0].records}


def record_to_dict(record: AnswerRecord) -> dict:
    return {
        "agent": record.agent,
        "answer": record.answer,
        "rationale": record.rationale,
        "round": record.round,
        "token_usage": list(record.token_usage),
    }


def outcome_to_dict(outcome: ConsensusOutcome) -> dict:
    """JSON-ready view of a run; deterministic for deterministic panels."""
    return {
        "question_id": outcome.question_id,
        "final": outcome.final,
        "converged": outcome.converged,
        "rounds_used": outcome.rounds_used,
        "strategy": outcome.strategy,
        "rounds": [
            {
                "round": t.round,
                "records": [record_to_dict(r) for r in t.records],
                "metadata": t.metadata.to_dict() if t.metadata else None,
            }
            for t in outcome.rounds
        ],
        "cost": outcome.cost.to_dict(),
        "group_outcomes": (
            [outcome_to_dict(sub) for sub in outcome.group_outcomes]
            if outcome.group_outcomes
            else None
        ),
    }
