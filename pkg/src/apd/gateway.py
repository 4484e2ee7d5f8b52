"""Chat-model gateway: request transport, retries, and reply parsing.

Every model call in the pipeline goes through this module, either over
HTTP (``chat``) or through an in-process backend implementing
``ChatBackend``.
"""

from __future__ import annotations

import csv
import io
import os
import re
import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol, TypeVar

import httpx

from .errors import (
    EmptyResponse,
    GatewayError,
    IncompleteOutput,
    MalformedCsv,
    NoFenceError,
    ParseError,
    UnknownFlag,
)
from .ingest import id_sort_key

MAX_RETRY_LIMIT = 5
REPAIR_RETRIES = 2

FLAG_STAGES = ("safety", "domain", "undesirable", "unusable")

# Pseudo-flags contributed by non-LLM stages; share the review vocabulary
# with the taxonomy so one merged set covers every removal reason.
PSEUDO_FLAGS = ("unsafe", "domain_unsafe", "domain_not_indexed", "flagging_failed")


@dataclass
class ChatRequest:
    model: str
    messages: list[dict[str, str]]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].get("role") not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def with_correction(self, bad_reply: str, violation: str) -> "ChatRequest":
        """Same prompt plus the bad reply and a corrective instruction."""
        extra = [
            {"role": "assistant", "content": bad_reply},
            {
                "role": "user",
                "content": f"Your previous reply was invalid: {violation} "
                "Resend the full answer in exactly the required output format.",
            },
        ]
        return replace(self, messages=[*self.messages, *extra])


@dataclass
class GatewayConfig:
    base_url: str
    api_key: str = ""
    retry_limit: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0

    def __post_init__(self):
        if not 0 <= self.retry_limit <= MAX_RETRY_LIMIT:
            raise ValueError(f"retry_limit must be in 0..{MAX_RETRY_LIMIT}")

    @classmethod
    def from_env(cls) -> "GatewayConfig":
        base = os.environ.get("APD_API_BASE", "")
        if not base:
            raise GatewayError("APD_API_BASE is not set")
        return cls(base_url=base, api_key=os.environ.get("APD_API_KEY", ""))


@dataclass
class FlagRecord:
    """Machine-assigned flags plus a short reason, for one row and stage."""

    row_id: str
    stage: str
    flags: frozenset[str]
    reason: str = ""

    def __post_init__(self):
        self.flags = frozenset(self.flags)
        if self.stage not in FLAG_STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.flags:
            raise ValueError("flags must be non-empty")
        if "safe" in self.flags and len(self.flags) > 1:
            raise ValueError("safe is exclusive with every other flag")
        if self.flags != {"safe"} and not self.reason.strip():
            raise ValueError("reason required when flags are not {safe}")


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


def chat(request: ChatRequest, config: GatewayConfig) -> str:
    """POST the request to {base_url}/chat/completions and return the
    first choice's message content.

    Transient transport errors and HTTP 429/5xx are retried with
    exponential backoff up to ``config.retry_limit``; any other 4xx fails
    immediately.
    """
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    payload = {
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    last_err: Exception | None = None
    for attempt in range(config.retry_limit + 1):
        if attempt and config.backoff_base > 0:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        try:
            resp = httpx.post(url, json=payload, headers=headers, timeout=config.timeout)
        except httpx.HTTPError as exc:
            last_err = exc
            continue
        if resp.status_code == 200:
            return _extract_content(resp)
        if resp.status_code == 429 or resp.status_code >= 500:
            last_err = GatewayError(f"HTTP {resp.status_code} from {url}")
            continue
        raise GatewayError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
    raise GatewayError(f"retry budget exhausted after {config.retry_limit + 1} attempts") from last_err


def _extract_content(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise EmptyResponse(f"malformed completion body: {exc}") from exc
    if not content:
        raise EmptyResponse("completion content is empty")
    return content


class HttpChatBackend:
    """ChatBackend speaking the chat-completions wire protocol."""

    def __init__(self, config: GatewayConfig):
        self.config = config

    def complete(self, request: ChatRequest) -> str:
        return chat(request, self.config)


_FENCE_RE = re.compile(r"```(.*?)```", re.DOTALL)
_LANG_TAG_RE = re.compile(r"[A-Za-z0-9_+-]{0,20}")


def extract_fenced(raw: str) -> str:
    """Return the contents of the first triple-backtick fence.

    A language tag on the opening fence line is stripped; the result is
    trimmed of leading/trailing whitespace.
    """
    m = _FENCE_RE.search(raw)
    if not m:
        raise NoFenceError("no complete triple-backtick fence in reply")
    inner = m.group(1)
    if "\n" in inner:
        first, rest = inner.split("\n", 1)
        if _LANG_TAG_RE.fullmatch(first.strip()):
            inner = rest
    return inner.strip()


def wrap_in_fence(text: str) -> str:
    return f"```\n{text}\n```"


def parse_flag_csv(
    inner: str,
    expected_ids: set[str],
    allowed_flags: set[str],
    stage: str = "undesirable",
) -> list[FlagRecord]:
    """Parse CSV-shaped model output into one FlagRecord per expected row.

    Columns are id, flags, reason; an optional header (first field "id")
    is skipped. The flags field is split on commas, trimmed, and
    lowercased. Every expected id must appear exactly once and every flag
    must be in ``allowed_flags``.
    """
    if not allowed_flags:
        raise ValueError("allowed_flags must be non-empty")
    try:
        parsed = list(csv.reader(io.StringIO(inner, newline=""), skipinitialspace=True))
    except csv.Error as exc:
        raise MalformedCsv(f"unparseable CSV: {exc}") from exc

    records: dict[str, FlagRecord] = {}
    for fields in parsed:
        if not fields or not any(f.strip() for f in fields):
            continue
        if fields[0].strip().lower() == "id" and not records:
            continue  # tolerated header row
        if len(fields) != 3:
            raise MalformedCsv(f"expected 3 fields per line, got {len(fields)}: {fields!r}")
        row_id, flags_field, reason = (f.strip() for f in fields)
        flags = {tok.strip().lower() for tok in flags_field.split(",") if tok.strip()}
        if not flags:
            raise MalformedCsv(f"empty flags field for id {row_id!r}")
        unknown = flags - allowed_flags
        if unknown:
            raise UnknownFlag(f"unknown flag token(s) for id {row_id!r}: {', '.join(sorted(unknown))}")
        if row_id not in expected_ids:
            raise IncompleteOutput(f"unexpected id {row_id!r} in output")
        if row_id in records:
            raise IncompleteOutput(f"duplicated id {row_id!r} in output")
        if flags != {"safe"} and not reason:
            raise MalformedCsv(f"missing reason for flagged id {row_id!r}")
        records[row_id] = FlagRecord(row_id=row_id, stage=stage, flags=frozenset(flags), reason=reason)

    missing = expected_ids - records.keys()
    if missing:
        raise IncompleteOutput(f"missing id(s) in output: {', '.join(sorted(missing))}")
    return [records[row_id] for row_id in sorted(records, key=id_sort_key)]


T = TypeVar("T")


def complete_with_repair(
    backend: ChatBackend,
    request: ChatRequest,
    parse: Callable[[str], T],
    repairs: int = REPAIR_RETRIES,
) -> T:
    """Run a chat call and parse its reply, repairing malformed output.

    On a parse failure the same prompt is re-sent with the bad reply and a
    corrective instruction appended, up to ``repairs`` extra attempts; the
    last parse error propagates after that.
    """
    current = request
    for attempt in range(repairs + 1):
        reply = backend.complete(current)
        try:
            return parse(reply)
        except ParseError as exc:
            if attempt == repairs:
                raise
            current = current.with_correction(reply, str(exc))
    raise AssertionError("unreachable")
