"""Shared helpers for the test suite: fake transports, a local chat server,
and panel builders."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from gossipvote import AgentProfile, ScriptedBehavior, StochasticParams


def completion(text: str, prompt_tokens: int = 10, completion_tokens: int = 5) -> dict:
    """A well-formed chat-completion response body."""
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
    }


class FakeTransport:
    """Scriptable stand-in for the HTTP layer; records every attempt.

    ``replies`` entries are (status, body) pairs or exceptions; the last entry
    repeats once the script runs out.
    """

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def __call__(self, url, headers, body, timeout):
        self.calls.append(
            {"url": url, "headers": dict(headers), "body": body, "timeout": timeout}
        )
        reply = self.replies[min(len(self.calls) - 1, len(self.replies) - 1)]
        if isinstance(reply, Exception):
            raise reply
        return reply


class LocalChatServer:
    """A real HTTP chat-completion server on localhost for transport tests.

    ``fail_first`` requests return HTTP 500 before the server starts answering
    with ``reply_text``.  Requests (headers and bodies) are recorded.
    """

    def __init__(self, reply_text: str = "Final answer: A", fail_first: int = 0):
        self.reply_text = reply_text
        self.fail_first = fail_first
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append(
                    {
                        "path": self.path,
                        "authorization": self.headers.get("Authorization"),
                        "body": body,
                    }
                )
                if len(outer.requests) <= outer.fail_first:
                    self.send_response(500)
                    self.end_headers()
                    return
                payload = json.dumps(completion(outer.reply_text)).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/chat/completions"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


def scripted(name: str, answers: dict[str, str] | str, rules=(), judge_pick="majority"):
    """A scripted agent; ``answers`` maps question id -> label (or one label
    for the default question id "q1")."""
    if isinstance(answers, str):
        answers = {"q1": answers}
    return AgentProfile(
        id=name,
        backend=ScriptedBehavior(
            initial={qid: (ans, f"{name} says {ans}") for qid, ans in answers.items()},
            revision=tuple(rules),
            judge_pick=judge_pick,
        ),
    )


def stochastic(name: str, p_correct: float, p_adopt: float = 0.0, seed_offset: int = 0):
    return AgentProfile(
        id=name,
        backend=StochasticParams(
            p_correct=p_correct, p_adopt=p_adopt, seed_offset=seed_offset
        ),
    )


def write_dataset(path, count: int, choices: int = 4, seed: int = 13) -> None:
    """Write a synthetic JSONL dataset with seeded ground-truth labels."""
    rng = random.Random(seed)
    labels = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"[:choices]
    with open(path, "w", encoding="utf-8") as handle:
        for index in range(count):
            handle.write(
                json.dumps(
                    {
                        "id": f"q{index:04d}",
                        "question": f"synthetic question {index}",
                        "choices": [f"option {i}" for i in range(choices)],
                        "answer": labels[rng.randrange(choices)],
                    }
                )
                + "\n"
            )
