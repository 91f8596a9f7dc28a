"""Panel members and their backends: scripted fixtures, seeded stochastic
answerers, and a remote chat-completion client, plus prompt construction for
each protocol role.

A profile is immutable; every invocation is a pure request/response against it
plus a caller-owned randomness stream, so different agents may be invoked
concurrently as long as one agent is never invoked concurrently with itself.
"""

from __future__ import annotations

import os
import random
import time
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Literal

import httpx

from .core import (
    AnswerRecord,
    CanonicalAnswer,
    QuestionItem,
    canonicalize_answer,
    tally_majority,
)
from .errors import (
    BackendUnavailable,
    MissingTruth,
    NoSubmissions,
    UnparseableAnswer,
    UnscriptedQuestion,
)

if TYPE_CHECKING:  # avoids a runtime import cycle with the engine module
    from .engine import RoundMetadata

PROMPT_VERSION = "PROMPT_V1"
BACKOFF_BASE_SECONDS = 0.5
BACKOFF_FACTOR = 2.0

Role = Literal["initial", "revise", "judge", "leader_propose"]
_ROLES = ("initial", "revise", "judge", "leader_propose")


@dataclass(frozen=True)
class AdoptTallyWinner:
    """Revision rule: switch to the previous round's tally winner."""


@dataclass(frozen=True)
class PeerThreshold:
    """Revision rule: if at least ``min_count`` peers answered ``answer``,
    switch to ``revised``."""

    answer: str
    min_count: int
    revised: str


RevisionRule = AdoptTallyWinner | PeerThreshold


@dataclass(frozen=True)
class ScriptedBehavior:
    """Deterministic fixture-driven backend for protocol tests.

    ``initial`` maps question id -> (answer, rationale).  ``revision`` rules
    are tried in order; the first that fires wins, otherwise the agent keeps
    its prior answer.  ``judge_pick`` selects among submissions when this agent
    judges: "majority" (default) or "first" (earliest submitter wins).
    """

    initial: dict[str, tuple[str, str]]
    revision: tuple[RevisionRule, ...] = ()
    judge_pick: str = "majority"

    def __post_init__(self):
        if self.judge_pick not in ("majority", "first"):
            raise ValueError(f"unknown judge_pick {self.judge_pick!r}")
        object.__setattr__(self, "revision", tuple(self.revision))


@dataclass(frozen=True)
class StochasticParams:
    """Seeded random backend: answers the truth with probability ``p_correct``,
    otherwise a uniformly chosen wrong label.  During revision it adopts the
    peer-majority answer with probability ``p_adopt`` (default: never).
    """

    p_correct: float
    p_adopt: float = 0.0
    seed_offset: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_correct <= 1.0:
            raise ValueError("p_correct must lie in [0, 1]")
        if not 0.0 <= self.p_adopt <= 1.0:
            raise ValueError("p_adopt must lie in [0, 1]")


@dataclass(frozen=True)
class RemoteEndpoint:
    """A chat-completion HTTP backend.  The credential is read from the
    environment variable named by ``api_key_env`` and never stored."""

    base_url: str
    model_name: str
    api_key_env: str
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


Backend = ScriptedBehavior | StochasticParams | RemoteEndpoint


@dataclass(frozen=True)
class AgentProfile:
    """Identity, backend and pricing for one panel member."""

    id: str
    backend: Backend
    price: tuple[float, float] = (0.0, 0.0)  # per-1k prompt / completion units

    def __post_init__(self):
        if not self.id:
            raise ValueError("agent id must be non-empty")
        if self.price[0] < 0 or self.price[1] < 0:
            raise ValueError("prices must be non-negative")

    def seed_offset(self) -> int:
        if isinstance(self.backend, StochasticParams):
            return self.backend.seed_offset
        return 0


@dataclass(frozen=True)
class PromptBundle:
    """Everything an agent sees for one invocation.

    For revise and judge roles ``peer_records`` excludes the addressed agent's
    own record; ``own_record`` carries that prior record separately so
    keep-prior backends can use it without it ever entering the prompt.
    """

    role: Role
    question: QuestionItem
    peer_records: tuple[AnswerRecord, ...] = ()
    round_metadata: "RoundMetadata | None" = None
    own_record: AnswerRecord | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "peer_records", tuple(self.peer_records))
        if self.own_record is not None:
            if any(r.agent == self.own_record.agent for r in self.peer_records):
                raise ValueError("peer_records must exclude the addressed agent")


_ROLE_INSTRUCTIONS = {
    "initial": "Work through the question, then state your answer.",
    "revise": (
        "Consider your peers' answers and reasoning above, then state your "
        "own final answer."
    ),
    "judge": (
        "You are the judge. Select the final answer from the submissions "
        "above; do not introduce a new one."
    ),
    "leader_propose": (
        "You speak for your group. Propose the answer your group agreed on."
    ),
}


def render_prompt(bundle: PromptBundle) -> str:
    """Deterministic prompt text (PROMPT_V1); identical bundles render to
    byte-identical text."""
    question = bundle.question
    lines = [f"Question: {question.prompt}"]
    if not question.space.open_ended:
        lines.append("Valid answers: " + ", ".join(question.space.labels))
    if bundle.role in ("revise", "judge"):
        for record in sorted(bundle.peer_records, key=lambda r: r.agent):
            if record.answer is None:
                continue
            lines.append(
                f"Agent {record.agent} answered {record.answer} "
                f"because {record.rationale}"
            )
    if bundle.round_metadata is not None:
        lines.append(
            f"Round {bundle.round_metadata.round} summary: "
            f"{bundle.round_metadata.note}"
        )
    lines.append(_ROLE_INSTRUCTIONS[bundle.role])
    placeholder = "<your answer>" if question.space.open_ended else "<label>"
    lines.append(f'End your reply with "Final answer: {placeholder}".')
    return "\n".join(lines)


Transport = Callable[[str, dict, dict, float], tuple[int, object]]


def _http_transport(url: str, headers: dict, body: dict, timeout: float):
    response = httpx.post(url, headers=headers, json=body, timeout=timeout)
    try:
        data = response.json()
    except ValueError:
        data = None
    return response.status_code, data


def _parse_completion(data) -> tuple[str, int, int] | None:
    try:
        text = data["choices"][0]["message"]["content"]
        prompt_tokens = data["usage"]["prompt_tokens"]
        completion_tokens = data["usage"]["completion_tokens"]
    except (KeyError, IndexError, TypeError):
        return None
    if not isinstance(text, str):
        return None
    if not isinstance(prompt_tokens, int) or not isinstance(completion_tokens, int):
        return None
    return text, prompt_tokens, completion_tokens


class ChatCompletionClient:
    """Minimal chat-completion client with bounded retries.

    Makes at most ``1 + max_retries`` transport attempts per call, sleeping
    exponentially (base 0.5 s, factor 2) between attempts.  ``transport`` and
    ``sleep`` are injectable for tests.
    """

    def __init__(self, transport: Transport | None = None, sleep=time.sleep):
        self._transport = transport or _http_transport
        self._sleep = sleep

    def complete(self, endpoint: RemoteEndpoint, prompt: str) -> tuple[str, int, int]:
        key = os.environ.get(endpoint.api_key_env)
        if key is None:
            raise BackendUnavailable(
                f"credential variable {endpoint.api_key_env!r} is not set"
            )
        headers = {"Authorization": f"Bearer {key}"}
        body = {
            "model": endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": endpoint.temperature,
        }
        attempts = 1 + endpoint.max_retries
        failure = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                self._sleep(BACKOFF_BASE_SECONDS * BACKOFF_FACTOR ** (attempt - 1))
            try:
                status, data = self._transport(
                    endpoint.base_url, headers, body, endpoint.timeout
                )
            except Exception as exc:  # any transport failure is retryable
                failure = f"transport error: {exc}"
                continue
            if not 200 <= status < 300:
                failure = f"HTTP {status}"
                continue
            parsed = _parse_completion(data)
            if parsed is None:
                failure = "malformed response body"
                continue
            return parsed
        raise BackendUnavailable(
            f"{endpoint.model_name} at {endpoint.base_url}: {failure} "
            f"after {attempts} attempt(s)"
        )


def _client(client: ChatCompletionClient | None) -> ChatCompletionClient:
    return client if client is not None else ChatCompletionClient()


def _stochastic_answer(
    params: StochasticParams, question: QuestionItem, rng: random.Random
) -> CanonicalAnswer:
    # One draw decides both correctness and the distractor so streams stay
    # aligned across runs regardless of the outcome.
    if question.space.open_ended:
        raise MissingTruth("stochastic backends need a closed answer space")
    if question.truth is None:
        raise MissingTruth(f"question {question.id!r} has no ground truth")
    distractors = [l for l in question.space.labels if l != question.truth]
    draw = rng.random()
    if draw < params.p_correct or not distractors:
        return question.truth
    span = 1.0 - params.p_correct
    index = int((draw - params.p_correct) / span * len(distractors))
    return distractors[min(index, len(distractors) - 1)]


def _remote_answer(
    profile: AgentProfile,
    bundle: PromptBundle,
    client: ChatCompletionClient | None,
    round_index: int,
) -> AnswerRecord:
    text, prompt_tokens, completion_tokens = _client(client).complete(
        profile.backend, render_prompt(bundle)
    )
    usage = (prompt_tokens, completion_tokens)
    try:
        answer = canonicalize_answer(text, bundle.question.space)
    except UnparseableAnswer:
        # Surfaced as an abstention: the reply arrived but holds no answer.
        return AnswerRecord(profile.id, None, text, round_index, usage)
    return AnswerRecord(profile.id, answer, text, round_index, usage)


def initial_answer(
    profile: AgentProfile,
    question: QuestionItem,
    rng: random.Random | None = None,
    client: ChatCompletionClient | None = None,
) -> AnswerRecord:
    """The agent's round-0 answer to a fresh question."""
    backend = profile.backend
    if isinstance(backend, ScriptedBehavior):
        if question.id not in backend.initial:
            raise UnscriptedQuestion(
                f"agent {profile.id!r} has no fixture for question {question.id!r}"
            )
        answer, rationale = backend.initial[question.id]
        if answer not in question.space:
            raise ValueError(
                f"scripted answer {answer!r} outside the space of {question.id!r}"
            )
        return AnswerRecord(profile.id, answer, rationale, 0)
    if isinstance(backend, StochasticParams):
        if rng is None:
            raise ValueError("stochastic backends need a randomness stream")
        return AnswerRecord(profile.id, _stochastic_answer(backend, question, rng), "", 0)
    bundle = PromptBundle("initial", question)
    return _remote_answer(profile, bundle, client, 0)


def _rule_outcome(
    rule: RevisionRule,
    peers: list[AnswerRecord],
    metadata: "RoundMetadata | None",
) -> tuple[str, str] | None:
    if isinstance(rule, AdoptTallyWinner):
        if metadata is None:
            return None
        winner = metadata.tally.winner
        return winner, f"adopted round tally winner {winner}"
    counts = Counter(p.answer for p in peers)
    if counts.get(rule.answer, 0) >= rule.min_count:
        return rule.revised, (
            f"{rule.min_count}+ peers answered {rule.answer}; switched to {rule.revised}"
        )
    return None


def revise_with_peers(
    profile: AgentProfile,
    bundle: PromptBundle,
    rng: random.Random | None = None,
    client: ChatCompletionClient | None = None,
) -> AnswerRecord:
    """A revised answer after seeing peers' answers and rationales."""
    if bundle.role != "revise":
        raise ValueError(f"expected a revise bundle, got {bundle.role!r}")
    if not bundle.peer_records:
        raise ValueError("revise bundles need at least one peer record")
    peers = [r for r in bundle.peer_records if r.answer is not None]
    prior = bundle.own_record
    round_index = bundle.peer_records[0].round + 1

    backend = profile.backend
    if isinstance(backend, ScriptedBehavior):
        answer = prior.answer if prior else None
        rationale = prior.rationale if prior else ""
        for rule in backend.revision:
            outcome = _rule_outcome(rule, peers, bundle.round_metadata)
            if outcome is not None:
                answer, rationale = outcome
                break
        return AnswerRecord(profile.id, answer, rationale, round_index)
    if isinstance(backend, StochasticParams):
        answer = prior.answer if prior else None
        if backend.p_adopt > 0.0 and peers:
            if rng is None:
                raise ValueError("stochastic backends need a randomness stream")
            if rng.random() < backend.p_adopt:
                answer = tally_majority(
                    [p.answer for p in peers], bundle.question.space
                ).winner
        return AnswerRecord(profile.id, answer, "", round_index)
    return _remote_answer(profile, bundle, client, round_index)


def judge_decide(
    judge: AgentProfile,
    bundle: PromptBundle,
    rng: random.Random | None = None,
    client: ChatCompletionClient | None = None,
) -> AnswerRecord:
    """The judge's pick among the submitted answers.

    The result is always a member of the submissions: a remote judge that goes
    off-menu (or replies unparseably) is retried once and then overridden by a
    majority tally of the submissions.
    """
    if bundle.role != "judge":
        raise ValueError(f"expected a judge bundle, got {bundle.role!r}")
    submissions = [r for r in bundle.peer_records if r.answer is not None]
    if not submissions:
        raise NoSubmissions("the judge received no parseable submissions")
    space = bundle.question.space
    menu = [s.answer for s in submissions]
    round_index = submissions[0].round

    backend = judge.backend
    if isinstance(backend, ScriptedBehavior) and backend.judge_pick == "first":
        first = min(submissions, key=lambda r: r.agent)
        return AnswerRecord(
            judge.id, first.answer, f"first submitter {first.agent} wins", round_index
        )
    if isinstance(backend, (ScriptedBehavior, StochasticParams)):
        winner = tally_majority(menu, space).winner
        return AnswerRecord(judge.id, winner, "majority of submissions", round_index)

    prompt = render_prompt(bundle)
    chat = _client(client)
    total_pt = total_ct = 0
    for _ in range(2):  # one retry when the judge strays off-menu
        text, prompt_tokens, completion_tokens = chat.complete(backend, prompt)
        total_pt += prompt_tokens
        total_ct += completion_tokens
        try:
            answer = canonicalize_answer(text, space)
        except UnparseableAnswer:
            continue
        if answer in menu:
            return AnswerRecord(
                judge.id, answer, text, round_index, (total_pt, total_ct)
            )
    winner = tally_majority(menu, space).winner
    return AnswerRecord(
        judge.id,
        winner,
        "fallback: majority of submissions",
        round_index,
        (total_pt, total_ct),
    )
