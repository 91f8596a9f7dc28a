"""Dataset loading, evaluation runs, reports and cost accounting."""

import json

import pytest

from gossipvote import (
    AgentProfile,
    ConsensusEngine,
    PanelConfig,
    RemoteEndpoint,
    compare_cost,
    evaluate,
    load_dataset,
    load_report,
    emit_report,
)
from gossipvote.bench import Dataset, compose_prompt, metrics_from_rows
from gossipvote.errors import (
    AnswerOutOfSpace,
    DuplicateId,
    ParseError,
    ZeroDenominator,
)
from support import FakeTransport, completion, scripted, stochastic


def write_lines(path, lines):
    path.write_text("".join(json.dumps(line) + "\n" for line in lines))
    return path


def question_line(qid, answer="A", choices=4):
    return {
        "id": qid,
        "question": f"question {qid}",
        "choices": [f"option {i}" for i in range(choices)],
        "answer": answer,
    }


# ---------------------------------------------------------------------------
# Dataset loading
# ---------------------------------------------------------------------------


def test_load_dataset_labels_choices_in_order(tmp_path):
    path = write_lines(
        tmp_path / "d.jsonl",
        [{"id": "q1", "question": "2+2?", "choices": ["3", "4", "5", "6"], "answer": "B"}],
    )
    dataset = load_dataset(path)
    assert dataset.name == "d"
    item = dataset.items[0]
    assert item.truth == "B"
    assert item.space.labels == ("A", "B", "C", "D")
    assert "B) 4" in item.prompt


def test_load_dataset_duplicate_id_reports_second_line(tmp_path):
    lines = [question_line(f"q{i}") for i in range(8)]
    lines[6] = question_line("q2")  # line 7 repeats line 3's id
    path = write_lines(tmp_path / "d.jsonl", lines)
    with pytest.raises(DuplicateId) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 7


def test_load_dataset_answer_out_of_space(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [question_line("q1", answer="E")])
    with pytest.raises(AnswerOutOfSpace):
        load_dataset(path)


def test_load_dataset_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(question_line("q1")) + "\n{broken\n")
    with pytest.raises(ParseError) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 2


def test_load_dataset_missing_fields(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [{"id": "q1", "question": "?"}])
    with pytest.raises(ParseError):
        load_dataset(path)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _accuracy_fixture_panel():
    """Hand-built 3-agent fixture realizing per-agent accuracies
    [0.8, 0.7, 0.6] with majority correct on exactly 9 of 10 questions."""
    qids = [f"q{i}" for i in range(10)]
    wrong = {"a1": {"q3", "q9"}, "a2": {"q4", "q5", "q9"}, "a3": {"q6", "q7", "q8", "q9"}}
    agents = [
        scripted(name, {qid: ("B" if qid in wrong[name] else "A") for qid in qids})
        for name in ("a1", "a2", "a3")
    ]
    return PanelConfig(agents, "simple_vote", max_rounds=2)


def _fixture_dataset(tmp_path):
    path = write_lines(
        tmp_path / "fixture.jsonl", [question_line(f"q{i}") for i in range(10)]
    )
    return load_dataset(path)


def test_evaluate_fixture_accuracies(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    metrics = report.metrics
    assert metrics.per_agent_accuracy == {"a1": 0.8, "a2": 0.7, "a3": 0.6}
    assert metrics.consensus_accuracy == pytest.approx(0.9)
    assert metrics.best_single == ("a1", 0.8)
    assert metrics.point_gain == pytest.approx(10.0, abs=1e-9)
    assert metrics.relative_error_reduction == pytest.approx(0.5)
    assert len(report.rows) == 10
    assert report.error_count == 0
    assert report.rows[9].correct is False


def test_evaluate_rows_match_metrics(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    assert metrics_from_rows(report.rows) == report.metrics
    best = max(report.metrics.per_agent_accuracy.values())
    assert report.metrics.best_single[1] == best


def test_evaluate_stochastic_beats_best_agent(tmp_path):
    from support import write_dataset

    path = tmp_path / "synth.jsonl"
    write_dataset(path, 600, choices=4, seed=5)
    panel = PanelConfig(
        [stochastic(f"s{i}", 0.8) for i in range(3)],
        "simple_vote",
        master_seed=1,
    )
    report = evaluate(panel, load_dataset(path))
    metrics = report.metrics
    # oracle for p=0.8, k=4, n=3 is ~0.917; demand a solid margin over 0.8
    assert metrics.consensus_accuracy >= metrics.best_single[1] + 0.05


def test_evaluate_is_deterministic(tmp_path):
    from support import write_dataset

    path = tmp_path / "synth.jsonl"
    write_dataset(path, 50, choices=4, seed=9)
    panel = PanelConfig(
        [stochastic(f"s{i}", 0.7) for i in range(3)], "simple_vote", master_seed=3
    )
    first = evaluate(panel, load_dataset(path))
    second = evaluate(panel, load_dataset(path))
    assert first == second


def test_evaluate_parallelism_reduces_deterministically(tmp_path):
    from support import write_dataset

    path = tmp_path / "synth.jsonl"
    write_dataset(path, 40, choices=4, seed=2)
    panel = PanelConfig(
        [stochastic(f"s{i}", 0.7) for i in range(3)],
        "judge_vote",
        master_seed=3,
    )
    serial = evaluate(panel, load_dataset(path), parallelism=1)
    threaded = evaluate(panel, load_dataset(path), parallelism=4)
    assert serial == threaded


def _remote(name, price, tokens_irrelevant=None, max_retries=0):
    return AgentProfile(
        id=name,
        backend=RemoteEndpoint(
            base_url="http://127.0.0.1:1/v1",
            model_name=name,
            api_key_env="GV_TEST_KEY",
            timeout=1.0,
            max_retries=max_retries,
        ),
        price=price,
    )


def test_evaluate_marks_errored_rows_and_excludes_them(tmp_path, monkeypatch):
    monkeypatch.setenv("GV_TEST_KEY", "k")
    # three good replies, then the backend dies for good
    transport = FakeTransport(
        [(200, completion("Final answer: A"))] * 3 + [(500, None)]
    )
    panel = PanelConfig(
        [scripted("a1", {f"q{i}": "A" for i in range(4)}), _remote("r1", (0.0, 0.0))],
        "simple_vote",
        max_rounds=1,
    )
    dataset = load_dataset(
        write_lines(tmp_path / "d.jsonl", [question_line(f"q{i}") for i in range(4)])
    )
    report = evaluate(panel, dataset, transport=transport)
    assert report.error_count == 1
    errored = [row for row in report.rows if row.error is not None]
    assert len(errored) == 1 and errored[0].question_id == "q3"
    assert report.metrics.consensus_accuracy == 1.0  # over the 3 scored rows
    assert report.metrics.per_agent_accuracy["r1"] == 1.0


def test_evaluate_all_errored_leaves_metrics_absent(tmp_path, monkeypatch):
    monkeypatch.setenv("GV_TEST_KEY", "k")
    transport = FakeTransport([(500, None)])
    panel = PanelConfig(
        [scripted("a1", {f"q{i}": "A" for i in range(3)}), _remote("r1", (0.0, 0.0))],
        "simple_vote",
        max_rounds=1,
    )
    dataset = load_dataset(
        write_lines(tmp_path / "d.jsonl", [question_line(f"q{i}") for i in range(3)])
    )
    report = evaluate(panel, dataset, transport=transport)
    assert report.metrics is None
    assert report.error_count == 3
    assert all(row.error for row in report.rows)


def test_evaluate_judge_rows_record_the_judge(tmp_path):
    dataset = load_dataset(
        write_lines(tmp_path / "d.jsonl", [question_line(f"q{i}") for i in range(6)])
    )
    panel = PanelConfig(
        [stochastic(f"s{i}", 0.9) for i in range(3)], "judge_vote", master_seed=0
    )
    report = evaluate(panel, dataset)
    judges = [row.judge for row in report.rows]
    assert all(j in {"s0", "s1", "s2"} for j in judges)
    assert len(set(judges)) == 3  # rotation visits everyone over 6 questions


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def test_run_ledger_equals_sum_of_question_ledgers(tmp_path, monkeypatch):
    monkeypatch.setenv("GV_TEST_KEY", "k")
    dataset = load_dataset(
        write_lines(tmp_path / "d.jsonl", [question_line(f"q{i}") for i in range(5)])
    )
    price = (0.125, 0.25)

    def build():
        return PanelConfig(
            [_remote("r1", price), _remote("r2", price)], "simple_vote", max_rounds=1
        )

    transport = FakeTransport([(200, completion("Final answer: A", 250, 40))])
    report = evaluate(build(), dataset, transport=transport)

    engine = ConsensusEngine(
        build(), transport=FakeTransport([(200, completion("Final answer: A", 250, 40))])
    )
    per_question = [engine.run(item, question_index=i) for i, item in enumerate(dataset.items)]
    summed = sum(outcome.cost.total_cost for outcome in per_question)
    assert report.cost.total_cost == pytest.approx(summed, rel=1e-12)
    assert report.cost.tokens["r1"] == (250 * 5, 40 * 5)
    # cost formula holds exactly on accumulated totals
    assert report.cost.agent_cost("r1") == 1250 / 1000 * 0.125 + 200 / 1000 * 0.25


def test_compare_cost_ratio_and_zero_denominator(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    report_b = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    report.cost.add_usage("a1", 10_000, 0)
    report.cost.prices["a1"] = (1.0, 0.0)
    report_b.cost.add_usage("a1", 20_000, 0)
    report_b.cost.prices["a1"] = (1.0, 0.0)
    assert compare_cost(report, report_b) == pytest.approx(0.5)
    assert compare_cost(report, report) == pytest.approx(1.0)
    report_b.cost.tokens["a1"] = (0, 0)
    with pytest.raises(ZeroDenominator):
        compare_cost(report, report_b)


def test_four_cheap_agents_cost_half_of_one_expensive(tmp_path, monkeypatch):
    # panel A: 4 agents x 250 prompt tokens at 0.125/1k = 0.125 units/question
    # panel B: 1 agent x 1000 prompt tokens at 0.25/1k = 0.25 units/question
    monkeypatch.setenv("GV_TEST_KEY", "k")
    dataset = load_dataset(
        write_lines(tmp_path / "d.jsonl", [question_line(f"q{i}") for i in range(10)])
    )
    cheap = PanelConfig(
        [_remote(f"c{i}", (0.125, 0.0)) for i in range(4)],
        "simple_vote",
        max_rounds=1,
    )
    report_a = evaluate(
        cheap, dataset, transport=FakeTransport([(200, completion("A", 250, 0))])
    )
    pricey = PanelConfig(
        [
            _remote("big", (0.25, 0.0)),
            scripted("free", {f"q{i}": "A" for i in range(10)}),
        ],
        "simple_vote",
        max_rounds=1,
    )
    report_b = evaluate(
        pricey, dataset, transport=FakeTransport([(200, completion("A", 1000, 0))])
    )
    assert report_a.cost.total_cost == pytest.approx(1.25)
    assert report_b.cost.total_cost == pytest.approx(2.5)
    assert compare_cost(report_a, report_b) == pytest.approx(0.5, abs=1e-3)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def test_jsonl_report_round_trip_and_byte_stability(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    first_path = tmp_path / "report.jsonl"
    emit_report(report, first_path, "jsonl")
    loaded = load_report(first_path)
    assert loaded == report
    second_path = tmp_path / "again.jsonl"
    emit_report(loaded, second_path, "jsonl")
    assert first_path.read_bytes() == second_path.read_bytes()


def test_csv_report_has_header_plus_rows(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    report.rows = report.rows[:2]
    path = tmp_path / "report.csv"
    emit_report(report, path, "csv")
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("question_id,truth,agent:a1")


def test_emit_report_unwritable_path_raises(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    with pytest.raises(OSError):
        emit_report(report, tmp_path / "missing-dir" / "report.jsonl", "jsonl")


def test_emit_report_unknown_format(tmp_path):
    report = evaluate(_accuracy_fixture_panel(), _fixture_dataset(tmp_path))
    with pytest.raises(ValueError):
        emit_report(report, tmp_path / "r.xml", "xml")


def test_evaluate_rejects_empty_dataset():
    with pytest.raises(ValueError):
        evaluate(_accuracy_fixture_panel(), Dataset("empty", []))


def test_compose_prompt_embeds_choices():
    prompt = compose_prompt("2+2?", ["3", "4"])
    assert prompt == "2+2?\nA) 3\nB) 4"
