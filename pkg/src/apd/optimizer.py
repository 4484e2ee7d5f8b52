"""Best-effort text shortening for retained rows before vector storage."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import GatewayError, ParseError
from .flagging import load_template
from .gateway import ChatBackend, ChatRequest, extract_fenced
from .ingest import WebRow, truncate_for_prompt

log = logging.getLogger("apd.optimizer")

# Accept a rewrite only if it did not grow the text beyond this factor.
MAX_GROWTH = 1.2


@dataclass(frozen=True)
class OptimizedText:
    row_id: str
    original: str
    optimized: str
    fallback_used: bool


def render_optimize_prompt(text: str) -> str:
    return load_template("optimize_text").replace("{original_text}", text)


def optimize(row: WebRow, backend: ChatBackend, model: str) -> OptimizedText:
    """Shorten a retained row's text; falls back to the original text
    rather than ever blocking the pipeline."""
    prompt = render_optimize_prompt(truncate_for_prompt(row.text))
    request = ChatRequest(model=model, messages=[{"role": "user", "content": prompt}])
    for _attempt in range(2):
        try:
            candidate = extract_fenced(backend.complete(request))
        except (ParseError, GatewayError) as exc:
            log.info("optimize attempt failed for %s: %s", row.id, exc)
            continue
        if candidate and len(candidate) <= MAX_GROWTH * len(row.text):
            return OptimizedText(row_id=row.id, original=row.text, optimized=candidate, fallback_used=False)
        log.info("optimize reply rejected for %s (empty or over length gate)", row.id)
    return OptimizedText(row_id=row.id, original=row.text, optimized=row.text, fallback_used=True)
