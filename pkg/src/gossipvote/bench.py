"""Dataset ingestion, evaluation runs over question sets, metrics computation,
cost accounting, and report emission.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .agents import Transport
from .core import (
    AnswerSpace,
    CostLedger,
    MetricsReport,
    QuestionItem,
    generate_labels,
)
from .engine import ConsensusEngine, ConsensusOutcome, PanelConfig, initial_records
from .errors import (
    AllAbstained,
    AnswerOutOfSpace,
    BackendUnavailable,
    DuplicateId,
    NoSubmissions,
    ParseError,
    ZeroDenominator,
)


@dataclass
class Dataset:
    """Benchmark questions, every one carrying its ground-truth label."""

    name: str
    items: list[QuestionItem]


@dataclass
class QuestionRow:
    """One evaluated question in a run report."""

    question_id: str
    truth: str
    answers: dict[str, str | None]  # each agent's round-0 answer
    consensus: str | None
    correct: bool | None
    rounds_used: int
    judge: str | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "type": "row",
            "question_id": self.question_id,
            "truth": self.truth,
            "answers": dict(sorted(self.answers.items())),
            "consensus": self.consensus,
            "correct": self.correct,
            "rounds_used": self.rounds_used,
            "judge": self.judge,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuestionRow":
        return cls(
            question_id=data["question_id"],
            truth=data["truth"],
            answers=dict(data["answers"]),
            consensus=data["consensus"],
            correct=data["correct"],
            rounds_used=data["rounds_used"],
            judge=data["judge"],
            error=data["error"],
        )


@dataclass
class RunReport:
    """A full evaluation: metrics, costs and one row per dataset question.

    ``metrics`` is ``None`` when no question could be scored.
    """

    dataset_name: str
    panel: str
    metrics: MetricsReport | None
    cost: CostLedger
    rows: list[QuestionRow]
    error_count: int


def compose_prompt(question_text: str, choices: list[str]) -> str:
    """The full question text shown to agents: stem plus labelled choices."""
    labels = generate_labels(len(choices))
    lines = [question_text]
    lines.extend(f"{label}) {choice}" for label, choice in zip(labels, choices))
    return "\n".join(lines)


def load_dataset(path) -> Dataset:
    """Read a JSONL dataset: one object per line with id, question, choices,
    answer.  Choices become labels A, B, C, ... in array order."""
    path = Path(path)
    items: list[QuestionItem] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"line {line_number}: invalid JSON ({exc.msg})", line_number
                ) from exc
            if not isinstance(data, dict):
                raise ParseError(f"line {line_number}: expected an object", line_number)
            missing = [
                key for key in ("id", "question", "choices", "answer") if key not in data
            ]
            if missing:
                raise ParseError(
                    f"line {line_number}: missing field(s) {', '.join(missing)}",
                    line_number,
                )
            qid = data["id"]
            choices = data["choices"]
            if not isinstance(choices, list) or not choices:
                raise ParseError(
                    f"line {line_number}: choices must be a non-empty array",
                    line_number,
                )
            if qid in seen:
                raise DuplicateId(
                    f"line {line_number}: id {qid!r} already used on line {seen[qid]}",
                    line_number,
                )
            seen[qid] = line_number
            space = AnswerSpace(generate_labels(len(choices)))
            answer = data["answer"]
            if answer not in space:
                raise AnswerOutOfSpace(
                    f"line {line_number}: answer {answer!r} is not one of "
                    f"{'/'.join(space.labels)}",
                    line_number,
                )
            items.append(
                QuestionItem(
                    id=qid,
                    prompt=compose_prompt(data["question"], choices),
                    space=space,
                    truth=answer,
                )
            )
    return Dataset(name=path.stem, items=items)


def describe_panel(panel: PanelConfig) -> str:
    kinds = sorted(type(a.backend).__name__ for a in panel.agents)
    return f"{panel.strategy} x{len(panel.agents)} [{', '.join(kinds)}]"


def metrics_from_rows(rows: list[QuestionRow]) -> MetricsReport | None:
    """Recompute the metrics block from report rows (also the audit path)."""
    scored = [row for row in rows if row.error is None]
    if not scored:
        return None
    agents = sorted(scored[0].answers)
    per_agent = {
        agent: sum(1 for row in scored if row.answers.get(agent) == row.truth)
        / len(scored)
        for agent in agents
    }
    consensus = sum(1 for row in scored if row.correct) / len(scored)
    return MetricsReport.from_accuracies(per_agent, consensus)


def evaluate(
    panel: PanelConfig,
    dataset: Dataset,
    transport: Transport | None = None,
    parallelism: int = 1,
) -> RunReport:
    """Run the panel strategy over every dataset question.

    Per-agent baselines come from round-0 answers within the same run.  A
    question hit by an unrecoverable backend error is marked errored and
    excluded from accuracy denominators.  Deterministic for scripted and
    stochastic panels under a fixed master seed.
    """
    if not dataset.items:
        raise ValueError("dataset is empty")
    engine = ConsensusEngine(panel, transport=transport)

    def run_one(index_question) -> ConsensusOutcome | Exception:
        index, question = index_question
        try:
            return engine.run(question, question_index=index)
        except (BackendUnavailable, AllAbstained, NoSubmissions) as exc:
            return exc

    tasks = list(enumerate(dataset.items))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(task) for task in tasks]

    agent_ids = sorted(a.id for a in panel.agents)
    ledger = CostLedger()
    for profile in panel.agents:
        ledger.register_agent(profile.id, *profile.price)

    rows: list[QuestionRow] = []
    error_count = 0
    for question, result in zip(dataset.items, results):
        if isinstance(result, Exception):
            error_count += 1
            rows.append(
                QuestionRow(
                    question_id=question.id,
                    truth=question.truth,
                    answers={agent: None for agent in agent_ids},
                    consensus=None,
                    correct=None,
                    rounds_used=0,
                    judge=None,
                    error=f"{type(result).__name__}: {result}",
                )
            )
            continue
        ledger.merge(result.cost)
        firsts = initial_records(result)
        rows.append(
            QuestionRow(
                question_id=question.id,
                truth=question.truth,
                answers={
                    agent: (firsts[agent].answer if agent in firsts else None)
                    for agent in agent_ids
                },
                consensus=result.final,
                correct=result.final == question.truth,
                rounds_used=result.rounds_used,
                judge=result.rounds[-1].metadata.judge if result.rounds else None,
            )
        )

    return RunReport(
        dataset_name=dataset.name,
        panel=describe_panel(panel),
        metrics=metrics_from_rows(rows),
        cost=ledger,
        rows=rows,
        error_count=error_count,
    )


def _summary_dict(report: RunReport) -> dict:
    return {
        "type": "summary",
        "dataset": report.dataset_name,
        "panel": report.panel,
        "metrics": report.metrics.to_dict() if report.metrics else None,
        "cost": report.cost.to_dict(),
        "rows": len(report.rows),
        "error_count": report.error_count,
    }


def emit_report(report: RunReport, path, fmt: str = "jsonl") -> None:
    """Write a report as JSONL (summary line then row lines; round-trips
    exactly) or CSV (header then rows, RFC 4180)."""
    path = Path(path)
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(_summary_dict(report), sort_keys=True) + "\n")
            for row in report.rows:
                handle.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
        return
    if fmt == "csv":
        agents = sorted(report.rows[0].answers) if report.rows else []
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["question_id", "truth"]
                + [f"agent:{a}" for a in agents]
                + ["consensus", "correct", "rounds_used", "judge", "error"]
            )
            for row in report.rows:
                writer.writerow(
                    [
                        row.question_id,
                        row.truth,
                        *[row.answers.get(a) or "" for a in agents],
                        row.consensus or "",
                        "" if row.correct is None else str(row.correct).lower(),
                        row.rounds_used,
                        row.judge or "",
                        row.error or "",
                    ]
                )
        return
    raise ValueError(f"unknown report format {fmt!r}")


def load_report(path) -> RunReport:
    """Reload a JSONL report; emit -> load -> emit is byte-stable."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        lines = [json.loads(line) for line in handle if line.strip()]
    if not lines or lines[0].get("type") != "summary":
        raise ParseError(f"{path} does not start with a summary line", 1)
    summary = lines[0]
    rows = [QuestionRow.from_dict(data) for data in lines[1:]]
    metrics = (
        MetricsReport.from_dict(summary["metrics"]) if summary["metrics"] else None
    )
    return RunReport(
        dataset_name=summary["dataset"],
        panel=summary["panel"],
        metrics=metrics,
        cost=CostLedger.from_dict(summary["cost"]),
        rows=rows,
        error_count=summary["error_count"],
    )


def compare_cost(report_a: RunReport, report_b: RunReport) -> float:
    """total_cost(a) / total_cost(b), both priced in the same units."""
    denominator = report_b.cost.total_cost
    if denominator == 0:
        raise ZeroDenominator("baseline report has zero total cost")
    return report_a.cost.total_cost / denominator


def load_price_table(path) -> dict[str, tuple[float, float]]:
    """JSON price table: agent name -> {"in_per_1k": x, "out_per_1k": y}."""
    with Path(path).open(encoding="utf-8") as handle:
        raw = json.load(handle)
    table = {}
    for agent, entry in raw.items():
        table[agent] = (
            float(entry.get("in_per_1k", 0.0)),
            float(entry.get("out_per_1k", 0.0)),
        )
    return table
