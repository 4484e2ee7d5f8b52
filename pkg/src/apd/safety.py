"""Guard-model safety classification of row texts and domains."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import VerdictParseError
from .gateway import ChatBackend, ChatRequest

log = logging.getLogger("apd.safety")

_CATEGORY_RE = re.compile(r"S\d+", re.IGNORECASE)

SUBJECT_TEXT = "text"
SUBJECT_DOMAIN = "domain"


@dataclass(frozen=True)
class SafetyVerdict:
    verdict: str  # "safe" | "unsafe"
    categories: frozenset[str]
    subject: str  # "text" | "domain"

    @property
    def is_unsafe(self) -> bool:
        return self.verdict == "unsafe"


def parse_guard_output(raw: str) -> tuple[str, frozenset[str]]:
    """Parse the guard reply grammar.

    Line 1 is exactly "safe" or "unsafe" (case-insensitive, trimmed); an
    unsafe verdict carries a second line of comma-separated category codes
    shaped S<digits>. Anything else is a VerdictParseError.
    """
    lines = [ln.strip() for ln in raw.strip().splitlines()]
    if not lines or not lines[0]:
        raise VerdictParseError("empty guard reply")
    verdict = lines[0].lower()
    if verdict == "safe":
        if any(lines[1:]):
            raise VerdictParseError(f"unexpected text after safe verdict: {lines[1:]!r}")
        return "safe", frozenset()
    if verdict != "unsafe":
        raise VerdictParseError(f"verdict line must be safe or unsafe, got {lines[0]!r}")
    if len(lines) < 2 or not lines[1]:
        raise VerdictParseError("unsafe verdict without a category line")
    if any(lines[2:]):
        raise VerdictParseError(f"unexpected text after category line: {lines[2:]!r}")
    codes = [tok.strip() for tok in lines[1].split(",")]
    if not all(codes) or not all(_CATEGORY_RE.fullmatch(c) for c in codes):
        raise VerdictParseError(f"bad category list: {lines[1]!r}")
    return "unsafe", frozenset(c.upper() for c in codes)


def classify(subject_text: str, subject_kind: str, backend: ChatBackend, model: str) -> SafetyVerdict:
    """Send the subject to the guard model and parse its verdict.

    Domains are classified the same way as texts: the bare domain string
    is the user turn of the guard conversation.
    """
    if not subject_text.strip():
        raise ValueError("subject_text must be non-empty")
    if subject_kind not in (SUBJECT_TEXT, SUBJECT_DOMAIN):
        raise ValueError(f"subject_kind must be text or domain, got {subject_kind!r}")
    request = ChatRequest(model=model, messages=[{"role": "user", "content": subject_text}])
    reply = backend.complete(request)
    verdict, categories = parse_guard_output(reply)
    result = SafetyVerdict(verdict=verdict, categories=categories, subject=subject_kind)
    log.debug("guard verdict subject=%s verdict=%s categories=%s", subject_kind, verdict, ",".join(sorted(categories)))
    return result
