"""Command-line entry point binding JSON config files to engine, simulation
and benchmark runs.

Subcommands: run (one question through the panel, outcome on stdout), bench
(evaluate a dataset and write a report), simulate (synthetic panels), report
(recompute metrics from an existing report file).  Exit codes: 0 success,
1 validation error, 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .agents import (
    AdoptTallyWinner,
    AgentProfile,
    PeerThreshold,
    RemoteEndpoint,
    ScriptedBehavior,
    StochasticParams,
)
from .bench import (
    compose_prompt,
    emit_report,
    evaluate,
    load_dataset,
    load_price_table,
    load_report,
    metrics_from_rows,
)
from .core import AnswerSpace, QuestionItem, generate_labels
from .engine import ConsensusEngine, ConvergenceRule, PanelConfig, outcome_to_dict
from .errors import BackendUnavailable, ConsensusError, SchemaError
from .sim import SimSpec, simulate

_PRICE_SCHEMA = {
    "type": "object",
    "properties": {
        "in_per_1k": {"type": "number", "minimum": 0},
        "out_per_1k": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}

_RULE_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["adopt_tally_winner", "peer_threshold"]},
        "answer": {"type": "string"},
        "min_count": {"type": "integer", "minimum": 1},
        "revised": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_SCRIPTED_SCHEMA = {
    "type": "object",
    "properties": {
        "initial": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {
                    "answer": {"type": "string"},
                    "rationale": {"type": "string"},
                },
                "required": ["answer"],
                "additionalProperties": False,
            },
        },
        "revision": {"type": "array", "items": _RULE_SCHEMA},
        "judge_pick": {"enum": ["majority", "first"]},
    },
    "required": ["initial"],
    "additionalProperties": False,
}

_STOCHASTIC_SCHEMA = {
    "type": "object",
    "properties": {
        "p_correct": {"type": "number", "minimum": 0, "maximum": 1},
        "p_adopt": {"type": "number", "minimum": 0, "maximum": 1},
        "seed_offset": {"type": "integer"},
    },
    "required": ["p_correct"],
    "additionalProperties": False,
}

_REMOTE_SCHEMA = {
    "type": "object",
    "properties": {
        "base_url": {"type": "string", "minLength": 1},
        "model_name": {"type": "string", "minLength": 1},
        "api_key_env": {"type": "string", "minLength": 1},
        "timeout": {"type": "number", "exclusiveMinimum": 0},
        "max_retries": {"type": "integer", "minimum": 0},
        "temperature": {"type": "number"},
    },
    "required": ["base_url", "model_name", "api_key_env"],
    "additionalProperties": False,
}

_AGENT_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "backend": {"enum": ["scripted", "stochastic", "remote"]},
        "price": _PRICE_SCHEMA,
        "scripted": _SCRIPTED_SCHEMA,
        "stochastic": _STOCHASTIC_SCHEMA,
        "remote": _REMOTE_SCHEMA,
    },
    "required": ["name", "backend"],
    "additionalProperties": False,
}

_PANEL_SCHEMA = {
    "type": "object",
    "properties": {
        "agents": {"type": "array", "items": _AGENT_SCHEMA, "minItems": 2},
        "strategy": {"enum": ["simple_vote", "judge_vote", "hierarchical"]},
        "max_rounds": {"type": "integer", "minimum": 1},
        "convergence": {
            "type": "object",
            "properties": {
                "rule": {"enum": ["stability", "unanimity", "supermajority"]},
                "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            "required": ["rule"],
            "additionalProperties": False,
        },
        "groups": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "minItems": 2,
        },
    },
    "required": ["agents", "strategy"],
    "additionalProperties": False,
}

_SIM_SCHEMA = {
    "type": "object",
    "properties": {
        "agent_accuracies": {
            "type": "array",
            "items": {"type": "number", "minimum": 0, "maximum": 1},
            "minItems": 1,
        },
        "label_count": {"type": "integer", "minimum": 2},
        "questions": {"type": "integer", "minimum": 1},
        "strategy": {"enum": ["simple_vote", "judge_vote", "hierarchical"]},
        "max_rounds": {"type": "integer", "minimum": 1},
        "adoption": {"type": "number", "minimum": 0, "maximum": 1},
        "master_seed": {"type": "integer"},
    },
    "required": ["agent_accuracies", "label_count", "questions"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "panel": _PANEL_SCHEMA,
        "dataset_path": {"type": "string"},
        "sim": _SIM_SCHEMA,
        "price_table_path": {"type": "string"},
        "output": {
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["jsonl", "csv"]},
            },
            "required": ["path"],
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
    },
    "required": ["panel"],
    "additionalProperties": False,
}


@dataclass
class RunConfig:
    """A fully validated configuration file."""

    panel: PanelConfig
    dataset_path: str | None
    sim: SimSpec | None
    price_table_path: str | None
    output_path: str | None
    output_format: str
    seed: int


def _pointer(error: jsonschema.ValidationError) -> str:
    path = "/" + "/".join(str(part) for part in error.absolute_path)
    if error.validator == "additionalProperties":
        known = set(error.schema.get("properties", {}))
        unknown = sorted(set(error.instance) - known)
        if unknown:
            return (path.rstrip("/") + "/" + unknown[0]) if path != "/" else "/" + unknown[0]
    return path


def _build_agent(index: int, raw: dict, prices: dict) -> AgentProfile:
    name = raw["name"]
    kind = raw["backend"]
    if kind not in raw:
        raise SchemaError(
            f"agent {name!r} declares backend {kind!r} but has no {kind!r} section",
            f"/panel/agents/{index}/{kind}",
        )
    if kind == "scripted":
        section = raw["scripted"]
        rules = []
        for rule_index, rule in enumerate(section.get("revision", [])):
            if rule["kind"] == "adopt_tally_winner":
                rules.append(AdoptTallyWinner())
                continue
            missing = [k for k in ("answer", "min_count", "revised") if k not in rule]
            if missing:
                raise SchemaError(
                    f"peer_threshold rule misses {', '.join(missing)}",
                    f"/panel/agents/{index}/scripted/revision/{rule_index}",
                )
            rules.append(
                PeerThreshold(rule["answer"], rule["min_count"], rule["revised"])
            )
        backend = ScriptedBehavior(
            initial={
                qid: (entry["answer"], entry.get("rationale", ""))
                for qid, entry in section["initial"].items()
            },
            revision=tuple(rules),
            judge_pick=section.get("judge_pick", "majority"),
        )
    elif kind == "stochastic":
        section = raw["stochastic"]
        backend = StochasticParams(
            p_correct=section["p_correct"],
            p_adopt=section.get("p_adopt", 0.0),
            seed_offset=section.get("seed_offset", 0),
        )
    else:
        section = raw["remote"]
        backend = RemoteEndpoint(
            base_url=section["base_url"],
            model_name=section["model_name"],
            api_key_env=section["api_key_env"],
            timeout=section.get("timeout", 30.0),
            max_retries=section.get("max_retries", 2),
            temperature=section.get("temperature", 0.0),
        )
    price_entry = raw.get("price", {})
    price = prices.get(
        name,
        (price_entry.get("in_per_1k", 0.0), price_entry.get("out_per_1k", 0.0)),
    )
    return AgentProfile(id=name, backend=backend, price=price)


def parse_config(path, seed_override: int | None = None) -> RunConfig:
    """Load and strictly validate a config file; unknown fields are rejected
    with a JSON-pointer to the offending field."""
    try:
        with Path(path).open(encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        error = jsonschema.exceptions.best_match(errors)
        raise SchemaError(error.message, _pointer(error))

    panel_raw = raw["panel"]
    if panel_raw["strategy"] == "hierarchical" and "groups" not in panel_raw:
        raise SchemaError(
            "strategy 'hierarchical' requires groups", "/panel/groups"
        )
    if "dataset_path" in raw and "sim" in raw:
        raise SchemaError("dataset_path and sim are mutually exclusive", "/sim")

    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    prices = {}
    if "price_table_path" in raw:
        prices = load_price_table(raw["price_table_path"])

    agents = [
        _build_agent(i, entry, prices) for i, entry in enumerate(panel_raw["agents"])
    ]
    names = {a.id for a in agents}
    if "groups" in panel_raw:
        for gi, group in enumerate(panel_raw["groups"]):
            for name in group:
                if name not in names:
                    raise SchemaError(
                        f"group names unknown agent {name!r}", f"/panel/groups/{gi}"
                    )
    convergence = ConvergenceRule()
    if "convergence" in panel_raw:
        convergence = ConvergenceRule(
            kind=panel_raw["convergence"]["rule"],
            threshold=panel_raw["convergence"].get("threshold"),
        )
    try:
        panel = PanelConfig(
            agents=agents,
            strategy=panel_raw["strategy"],
            max_rounds=panel_raw.get("max_rounds", 2),
            convergence=convergence,
            groups=panel_raw.get("groups"),
            master_seed=seed,
        )
    except ValueError as exc:
        raise SchemaError(str(exc), "/panel") from exc

    sim_spec = None
    if "sim" in raw:
        section = raw["sim"]
        sim_spec = SimSpec(
            agent_accuracies=tuple(section["agent_accuracies"]),
            label_count=section["label_count"],
            questions=section["questions"],
            strategy=section.get("strategy", "simple_vote"),
            master_seed=section.get("master_seed", seed),
            max_rounds=section.get("max_rounds", 2),
            adoption=section.get("adoption", 0.0),
        )

    output = raw.get("output", {})
    return RunConfig(
        panel=panel,
        dataset_path=raw.get("dataset_path"),
        sim=sim_spec,
        price_table_path=raw.get("price_table_path"),
        output_path=output.get("path"),
        output_format=output.get("format", "jsonl"),
        seed=seed,
    )


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); backend failures own that code here.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gossipvote", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one question through the panel")
    run.add_argument("--config", required=True)
    run.add_argument("--question", required=True, help="question text")
    run.add_argument("--choices", required=True, help="comma-separated choice texts")
    run.add_argument("--truth", help="ground-truth label, if known")
    run.add_argument("--id", default="q0", help="question id")
    run.add_argument("--seed", type=int)
    run.add_argument("--parallelism", type=int, default=1)

    bench = sub.add_parser("bench", help="evaluate a dataset and write a report")
    bench.add_argument("--config", required=True)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--parallelism", type=int, default=1)

    simulate_p = sub.add_parser("simulate", help="run a synthetic stochastic panel")
    simulate_p.add_argument("--config", required=True)
    simulate_p.add_argument("--seed", type=int)

    report = sub.add_parser("report", help="recompute metrics from a report file")
    report.add_argument("--input", required=True)
    return parser


def _cmd_run(args) -> int:
    config = parse_config(args.config, seed_override=args.seed)
    choices = [c.strip() for c in args.choices.split(",") if c.strip()]
    if len(choices) < 2:
        raise SchemaError("need at least two choices", "/choices")
    space = AnswerSpace(generate_labels(len(choices)))
    truth = None
    if args.truth is not None:
        truth = args.truth.strip().upper()
        if truth not in space:
            raise SchemaError(
                f"truth {args.truth!r} is not one of {'/'.join(space.labels)}",
                "/truth",
            )
    question = QuestionItem(
        id=args.id,
        prompt=compose_prompt(args.question, choices),
        space=space,
        truth=truth,
    )
    engine = ConsensusEngine(config.panel)
    outcome = engine.run(question)
    print(json.dumps(outcome_to_dict(outcome), indent=2, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    config = parse_config(args.config, seed_override=args.seed)
    if config.dataset_path is None:
        raise SchemaError("bench needs dataset_path", "/dataset_path")
    if config.output_path is None:
        raise SchemaError("bench needs an output section", "/output")
    dataset = load_dataset(config.dataset_path)
    report = evaluate(
        config.panel, dataset, parallelism=max(1, args.parallelism)
    )
    emit_report(report, config.output_path, config.output_format)
    print(f"wrote {config.output_path} ({len(report.rows)} rows)", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    config = parse_config(args.config, seed_override=args.seed)
    if config.sim is None:
        raise SchemaError("simulate needs a sim section", "/sim")
    result = simulate(config.sim)
    record = {"type": "sim_result", **result.to_dict()}
    if config.output_path is None:
        print(json.dumps(record, sort_keys=True))
        return 0
    path = Path(config.output_path)
    if config.output_format == "csv":
        import csv as _csv

        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = _csv.writer(handle)
            keys = sorted(k for k in record if k != "type")
            writer.writerow(keys)
            writer.writerow([json.dumps(record[k]) for k in keys])
    else:
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.input)
    recomputed = metrics_from_rows(report.rows)
    print(
        json.dumps(
            recomputed.to_dict() if recomputed else None, indent=2, sort_keys=True
        )
    )
    stored = report.metrics
    if (stored is None) != (recomputed is None) or (
        stored is not None and stored != recomputed
    ):
        print("stored metrics do not match the rows", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_report(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except BackendUnavailable as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 2
    except (ConsensusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
