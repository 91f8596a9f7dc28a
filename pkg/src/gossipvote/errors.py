"""Exception taxonomy shared across the package."""

from __future__ import annotations


class ConsensusError(Exception):
    """Base class for every package-specific failure."""


class UnparseableAnswer(ConsensusError):
    """No canonical answer could be extracted from a reply."""


class EmptyBallot(ConsensusError):
    """A tally was requested over zero votes."""


class DegenerateBase(ConsensusError):
    """Error reduction is undefined when the baseline makes no errors."""


class MissingTruth(ConsensusError):
    """A stochastic backend needs the ground-truth label to sample an answer."""


class UnscriptedQuestion(ConsensusError):
    """A scripted backend has no fixture for the question it was asked."""


class BackendUnavailable(ConsensusError):
    """Transport-level failure after all retries.

    ``partial_rounds`` carries any round transcripts completed before the
    failure so callers can inspect how far the run got.
    """

    def __init__(self, message: str, partial_rounds=None):
        super().__init__(message)
        self.partial_rounds = list(partial_rounds or [])


class NoSubmissions(ConsensusError):
    """A judge was convened with nothing to judge."""


class TooFewAgents(ConsensusError):
    """The strategy needs more panel members than were configured."""


class AllAbstained(ConsensusError):
    """Every agent in a round abstained; there is nothing to tally."""


class TooManyAgents(ConsensusError):
    """The exact oracle refuses panels beyond its brute-force bound."""


class ZeroDenominator(ConsensusError):
    """A cost ratio against a zero-cost baseline is undefined."""


class DatasetError(ConsensusError):
    """Problem in a benchmark dataset file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class ParseError(DatasetError):
    """A dataset line is not valid JSON or misses required fields."""


class DuplicateId(DatasetError):
    """Two dataset lines share a question id."""


class AnswerOutOfSpace(DatasetError):
    """A dataset ground-truth label is not one of the generated choice labels."""


class SchemaError(ConsensusError):
    """A config file was rejected; ``pointer`` locates the offending field."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}" if pointer else message)
        self.pointer = pointer
