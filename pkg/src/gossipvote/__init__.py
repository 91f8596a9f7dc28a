"""Gossip-style consensus for panels of heterogeneous answer-producing agents.

Panels of scripted, stochastic or remote chat-completion agents exchange
answers and rationales over rounds and settle questions by simple majority,
a rotating judge, or two-layer group consensus; a benchmark harness and an
exact jury oracle verify that the panel beats its best member.
"""

from .agents import (
    AdoptTallyWinner,
    AgentProfile,
    ChatCompletionClient,
    PeerThreshold,
    PromptBundle,
    RemoteEndpoint,
    ScriptedBehavior,
    StochasticParams,
    initial_answer,
    judge_decide,
    render_prompt,
    revise_with_peers,
)
from .bench import (
    Dataset,
    RunReport,
    compare_cost,
    emit_report,
    evaluate,
    load_dataset,
    load_report,
    metrics_from_rows,
)
from .core import (
    AnswerRecord,
    AnswerSpace,
    CanonicalAnswer,
    CostLedger,
    MetricsReport,
    QuestionItem,
    TallyResult,
    canonicalize_answer,
    relative_error_reduction,
    tally_majority,
)
from .engine import (
    ConsensusEngine,
    ConsensusOutcome,
    ConvergenceRule,
    PanelConfig,
    PreferenceMatrix,
    RoundMetadata,
    RoundTranscript,
    check_convergence,
    elect_leader,
    preference_matrix,
    run_hierarchical,
    run_judge_vote,
    run_simple_vote,
)
from .sim import SimResult, SimSpec, condorcet_curve, majority_accuracy_oracle, simulate

__version__ = "0.1.0"

__all__ = [
    "AdoptTallyWinner",
    "AgentProfile",
    "AnswerRecord",
    "AnswerSpace",
    "CanonicalAnswer",
    "ChatCompletionClient",
    "ConsensusEngine",
    "ConsensusOutcome",
    "ConvergenceRule",
    "CostLedger",
    "Dataset",
    "MetricsReport",
    "PanelConfig",
    "PeerThreshold",
    "PreferenceMatrix",
    "PromptBundle",
    "QuestionItem",
    "RemoteEndpoint",
    "RoundMetadata",
    "RoundTranscript",
    "RunReport",
    "ScriptedBehavior",
    "SimResult",
    "SimSpec",
    "StochasticParams",
    "TallyResult",
    "canonicalize_answer",
    "check_convergence",
    "compare_cost",
    "condorcet_curve",
    "elect_leader",
    "emit_report",
    "evaluate",
    "initial_answer",
    "judge_decide",
    "load_dataset",
    "load_report",
    "majority_accuracy_oracle",
    "metrics_from_rows",
    "preference_matrix",
    "relative_error_reduction",
    "render_prompt",
    "revise_with_peers",
    "run_hierarchical",
    "run_judge_vote",
    "run_simple_vote",
    "simulate",
    "tally_majority",
]
