"""Retrieval-augmented answering: English query rewrite, top-k context,
and system-prompt injection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import BadRequest, NoFenceError
from .flagging import load_template
from .gateway import ChatBackend, ChatRequest, extract_fenced
from .vectordb import DEFAULT_K, EmbeddingBackend, RetrievalHit, VectorIndex

log = logging.getLogger("apd.rag")

SYSTEM_PROMPT_HEADER = "Use the following retrieved context to answer."

ENGLISH_ASCII_RATIO = 0.9


def ascii_letter_ratio(text: str) -> float:
    """Share of letters in the ASCII range; a cheap English-ness signal
    for rewritten queries (live models only promise English output)."""
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return 1.0
    return sum(c.isascii() for c in letters) / len(letters)


@dataclass(frozen=True)
class RagExchange:
    """Full audit record of one retrieval-augmented exchange."""

    user_query: str
    search_query: str
    hits: tuple[RetrievalHit, ...]
    system_prompt: str
    answer: str


def make_search_query(user_query: str, backend: ChatBackend, model: str) -> str:
    """Rewrite the user query (any language) into a concise English search
    query; falls back to the raw query if the model output stays unfenced."""
    if not user_query.strip():
        raise BadRequest("user query must be non-empty")
    prompt = load_template("search_query").replace("{user_query}", user_query)
    request = ChatRequest(model=model, messages=[{"role": "user", "content": prompt}])
    for attempt in range(2):
        reply = backend.complete(request)
        try:
            query = extract_fenced(reply)
            if query:
                return _checked_rewrite(query)
            violation = "the fenced query was empty."
        except NoFenceError as exc:
            violation = str(exc)
        if attempt == 0:
            request = request.with_correction(reply, violation)
    log.info("query rewrite failed; falling back to the raw user query")
    return user_query


def _checked_rewrite(query: str) -> str:
    if ascii_letter_ratio(query) <= ENGLISH_ASCII_RATIO:
        log.warning("rewritten query does not look English (ascii letter ratio <= %.1f)", ENGLISH_ASCII_RATIO)
    return query


def assemble_system_prompt(hits: list[RetrievalHit]) -> str:
    """Context block: header, then each hit's text verbatim with its
    source URL, in hit order."""
    parts = [SYSTEM_PROMPT_HEADER]
    for i, hit in enumerate(hits, start=1):
        parts.append(f"[{i}] {hit.chunk.text}\nSource: {hit.chunk.url}")
    return "\n\n".join(parts)


def answer(
    user_query: str,
    index: VectorIndex,
    backend: ChatBackend,
    embedder: EmbeddingBackend,
    model: str,
    k: int = DEFAULT_K,
    use_rag: bool = True,
) -> RagExchange:
    """Answer a user query with top-k retrieved context injected as the
    system prompt; with use_rag off, the model answers bare."""
    if not user_query.strip():
        raise BadRequest("user query must be non-empty")
    if not use_rag:
        request = ChatRequest(model=model, messages=[{"role": "user", "content": user_query}])
        reply = backend.complete(request)
        return RagExchange(user_query=user_query, search_query="", hits=(), system_prompt="", answer=reply)

    search_query = make_search_query(user_query, backend, model)
    hits = index.query(embedder.embed(search_query), k=k)
    system_prompt = assemble_system_prompt(hits)
    request = ChatRequest(
        model=model,
        messages=[
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": user_query},
        ],
    )
    reply = backend.complete(request)
    return RagExchange(
        user_query=user_query,
        search_query=search_query,
        hits=tuple(hits),
        system_prompt=system_prompt,
        answer=reply,
    )
