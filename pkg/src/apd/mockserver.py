"""Deterministic fixture-backed mocks for the chat, guard, search, and
embedding backends, plus an HTTP server speaking the live wire protocols.

The rule engine recognizes each of the pipeline's prompt shapes and
produces stable replies from keyword rules, so all-mock runs are
bit-reproducible. Canned fixtures keyed by prompt fingerprint override
the rules for scenario tests.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .domains import OfflineIndexProvider
from .gateway import ChatRequest
from .rag import SYSTEM_PROMPT_HEADER
from .vectordb import HashEmbedder

GUARD_MODEL_DEFAULT = "mock-guard"

# Substring markers the mock guard treats as unsafe, with their category code.
GUARD_RULES = (
    ("weapon", "S1"),
    ("explosive", "S1"),
    ("violence", "S1"),
    ("narcotics", "S2"),
    ("hate speech", "S10"),
    ("malware", "S9"),
    ("credential theft", "S9"),
)

# Substring markers for the undesirability taxonomy, checked in this order.
FLAG_RULES = (
    ("advertisement", ("buy now", "% off", "discount", "limited time offer"), "Advertisement content"),
    ("sensitive", ("social security", "medical record", "passport number"), "Sensitive personal information"),
    ("biased", ("everyone agrees", "only fools", "the only truth"), "One-sided claims"),
    ("religious", ("sermon", "worship", "scripture"), "Religious content"),
    ("lottery", ("lottery", "jackpot", "casino"), "Gambling promotion"),
    ("scam", ("wire transfer", "claim your prize", "get rich quick"), "Suggests a potential crime"),
    ("spam", ("click here", "subscribe now", "forward this to"), "Spam-like call to action"),
    ("data_poisoning", ("ignore previous instructions", "disregard all prior"), "Prompt-injection attempt"),
)

UNUSABLE_MARKERS = ("lorem ipsum", "under construction", "page not found")
UNUSABLE_MIN_WORDS = 8

_INPUT_DATA_RE = re.compile(r"Input data: ```(.*?)```", re.DOTALL)
_ORIGINAL_TEXT_RE = re.compile(r"Original text: ```(.*?)```", re.DOTALL)
_USER_MESSAGE_RE = re.compile(r"User message: ```(.*?)```", re.DOTALL)


def prompt_fingerprint(messages: list[dict[str, str]]) -> str:
    """Stable key for canned fixture lookup."""
    h = hashlib.sha256()
    for msg in messages:
        h.update(msg.get("role", "").encode("utf-8"))
        h.update(b"\x1f")
        h.update(msg.get("content", "").encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


class ScriptedChatBackend:
    """Replies from a fixed sequence; records every request."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> str:
        self.requests.append(request)
        if not self.replies:
            raise AssertionError("scripted backend ran out of replies")
        return self.replies.pop(0)


class RuleChatBackend:
    """Deterministic stand-in for the chat and guard models."""

    def __init__(self, guard_model: str = GUARD_MODEL_DEFAULT, fixtures: dict[str, str] | None = None):
        self.guard_model = guard_model
        self.fixtures = dict(fixtures or {})
        self.requests: list[ChatRequest] = []

    @classmethod
    def with_fixture_file(cls, path, guard_model: str = GUARD_MODEL_DEFAULT) -> "RuleChatBackend":
        fixtures = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    fixtures[obj["fingerprint"]] = obj["reply"]
        return cls(guard_model=guard_model, fixtures=fixtures)

    def complete(self, request: ChatRequest) -> str:
        self.requests.append(request)
        key = prompt_fingerprint(request.messages)
        if key in self.fixtures:
            return self.fixtures[key]
        if request.model == self.guard_model:
            return self._guard_reply(request.messages[-1]["content"])
        first = request.messages[0]["content"]
        if first.startswith(SYSTEM_PROMPT_HEADER):
            return "Based on the provided context: " + first[len(SYSTEM_PROMPT_HEADER) :].strip()
        if first.startswith("You are a content moderator. The text below"):
            if "unusable_flag" in first:
                return self._unusable_reply(first)
            return self._flags_reply(first)
        if first.startswith("You are a content moderator preparing a dataset"):
            return self._optimize_reply(first)
        if first.startswith("You are a search assistant."):
            return self._rewrite_reply(first)
        return "I do not have that information."

    def _guard_reply(self, subject: str) -> str:
        lowered = subject.lower()
        codes = sorted({code for marker, code in GUARD_RULES if marker in lowered})
        if codes:
            return "unsafe\n" + ",".join(codes)
        return "safe"

    @staticmethod
    def _parse_prompt_rows(prompt: str) -> list[tuple[str, str]]:
        m = _INPUT_DATA_RE.search(prompt)
        if not m:
            return []
        rows = list(csv.reader(io.StringIO(m.group(1).strip(), newline="")))
        return [(r[0], r[1]) for r in rows[1:] if len(r) >= 2]

    def _flags_reply(self, prompt: str) -> str:
        lines = ["id, flags, flag_reason"]
        for row_id, text in self._parse_prompt_rows(prompt):
            lowered = text.lower()
            flags, reasons = [], []
            for flag, markers, reason in FLAG_RULES:
                if any(marker in lowered for marker in markers):
                    flags.append(flag)
                    reasons.append(reason)
            if flags:
                lines.append(f'{row_id}, "{",".join(flags)}", "{"; ".join(reasons)}"')
            else:
                lines.append(f'{row_id}, "safe", "No flags"')
        return "```\n" + "\n".join(lines) + "\n```"

    def _unusable_reply(self, prompt: str) -> str:
        lines = ["id, unusable_flag, unusable_flag_reason"]
        for row_id, text in self._parse_prompt_rows(prompt):
            lowered = text.lower()
            unusable = len(text.split()) < UNUSABLE_MIN_WORDS or any(m in lowered for m in UNUSABLE_MARKERS)
            if unusable:
                lines.append(f'{row_id}, "unusable", "No useful/new information"')
            else:
                lines.append(f'{row_id}, "safe", "Useful information"')
        return "```\n" + "\n".join(lines) + "\n```"

    @staticmethod
    def _optimize_reply(prompt: str) -> str:
        m = _ORIGINAL_TEXT_RE.search(prompt)
        original = m.group(1).strip() if m else ""
        words = original.split()
        shortened = " ".join(words[:30]) if len(words) > 30 else original
        return "```\n" + shortened + "\n```"

    @staticmethod
    def _rewrite_reply(prompt: str) -> str:
        m = _USER_MESSAGE_RE.search(prompt)
        return "```\n" + (m.group(1).strip() if m else "") + "\n```"


class _MockHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send_json(400, {"error": {"code": "bad_json", "message": "request body is not JSON"}})
            return
        if self.path == "/chat/completions":
            try:
                request = ChatRequest(
                    model=body.get("model", ""),
                    messages=body.get("messages", []),
                    temperature=body.get("temperature", 0.0),
                    max_tokens=body.get("max_tokens", 1024),
                )
            except ValueError as exc:
                self._send_json(400, {"error": {"code": "bad_request", "message": str(exc)}})
                return
            reply = self.server.chat_backend.complete(request)  # type: ignore[attr-defined]
            self._send_json(200, {"choices": [{"message": {"role": "assistant", "content": reply}}]})
        elif self.path == "/embeddings":
            texts = body.get("input", [])
            embedder = self.server.embedder  # type: ignore[attr-defined]
            self._send_json(200, {"data": [{"embedding": embedder.embed(t)} for t in texts]})
        else:
            self._send_json(404, {"error": {"code": "not_found", "message": self.path}})

    def do_GET(self):
        parts = urlsplit(self.path)
        if parts.path != "/search":
            self._send_json(404, {"error": {"code": "not_found", "message": parts.path}})
            return
        query = parse_qs(parts.query).get("q", [""])[0]
        domain = query.removeprefix("site:").strip().lower()
        provider = self.server.index_provider  # type: ignore[attr-defined]
        results = [{"url": f"http://{domain}/"}] if provider.is_indexed(domain) else []
        self._send_json(200, {"results": results})


class MockApiServer:
    """One local HTTP server for all mock backends: chat completions,
    site-restricted search, and embeddings."""

    def __init__(
        self,
        port: int = 0,
        guard_model: str = GUARD_MODEL_DEFAULT,
        allowlist=(),
        fixtures: dict[str, str] | None = None,
    ):
        self.chat_backend = RuleChatBackend(guard_model=guard_model, fixtures=fixtures)
        self.index_provider = OfflineIndexProvider(allowlist)
        self.embedder = HashEmbedder()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), _MockHandler)
        self._httpd.chat_backend = self.chat_backend  # type: ignore[attr-defined]
        self._httpd.index_provider = self.index_provider  # type: ignore[attr-defined]
        self._httpd.embedder = self.embedder  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "MockApiServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()
