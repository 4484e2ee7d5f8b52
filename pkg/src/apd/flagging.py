"""Undesirability flagging over row batches and per-row flag merging."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

from .errors import ParseError
from .gateway import ChatBackend, ChatRequest, FlagRecord, complete_with_repair, extract_fenced, parse_flag_csv
from .ingest import WebRow, to_prompt_csv, truncate_for_prompt

log = logging.getLogger("apd.flagging")

TAXONOMY = (
    "safe",
    "unusable",
    "advertisement",
    "sensitive",
    "biased",
    "religious",
    "lottery",
    "scam",
    "spam",
    "data_poisoning",
)

UNDESIRABLE_FLAGS = tuple(f for f in TAXONOMY if f != "safe")

BATCH_SIZE = 10

FAILED_REASON = "flagging_failed: model output unparseable after repair retries"


def load_template(name: str) -> str:
    return resources.files("apd.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render_flag_prompt(rows: list[WebRow]) -> str:
    """Undesirability prompt over a row batch, detection list substituted."""
    csv_text = _batch_csv(rows)
    template = load_template("flag_undesirable")
    return template.replace("{flags_to_detect}", ", ".join(UNDESIRABLE_FLAGS)).replace("{csv_text}", csv_text)


def render_unusable_prompt(rows: list[WebRow]) -> str:
    """Non-informative-text prompt over a row batch."""
    template = load_template("flag_unusable")
    return template.replace("{csv_text}", _batch_csv(rows))


def _batch_csv(rows: list[WebRow]) -> str:
    capped = [WebRow(id=r.id, url=r.url, text=truncate_for_prompt(r.text), status=r.status) for r in rows]
    return to_prompt_csv(capped, columns=("id", "text"))


def _chunks(rows: list[WebRow], size: int):
    for i in range(0, len(rows), size):
        yield rows[i : i + size]


def flag_batch(rows: list[WebRow], backend: ChatBackend, model: str, batch_size: int = BATCH_SIZE) -> list[FlagRecord]:
    """Flag rows against the undesirability taxonomy, one gateway call per
    batch of at most ``batch_size`` rows.

    Batches whose output stays unparseable after repair retries yield
    flagging_failed records instead of aborting the run.
    """
    return _run_flagging(
        rows,
        backend,
        model,
        batch_size,
        stage="undesirable",
        render=render_flag_prompt,
        allowed=set(TAXONOMY),
    )


def flag_unusable(rows: list[WebRow], backend: ChatBackend, model: str, batch_size: int = BATCH_SIZE) -> list[FlagRecord]:
    """Flag non-informative rows; output flags are unusable or safe."""
    return _run_flagging(
        rows,
        backend,
        model,
        batch_size,
        stage="unusable",
        render=render_unusable_prompt,
        allowed={"unusable", "safe"},
    )


def _run_flagging(rows, backend, model, batch_size, stage, render, allowed) -> list[FlagRecord]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records: list[FlagRecord] = []
    for chunk in _chunks(rows, batch_size):
        expected = {r.id for r in chunk}
        request = ChatRequest(model=model, messages=[{"role": "user", "content": render(chunk)}])

        def parse(reply: str, _expected=expected):
            return parse_flag_csv(extract_fenced(reply), _expected, allowed, stage=stage)

        try:
            records.extend(complete_with_repair(backend, request, parse))
        except ParseError as exc:
            log.warning("batch of %d row(s) marked flagging_failed: %s", len(chunk), exc)
            records.extend(
                FlagRecord(row_id=r.id, stage=stage, flags=frozenset({"flagging_failed"}), reason=FAILED_REASON)
                for r in chunk
            )
    return records


@dataclass(frozen=True)
class MergedFlags:
    """Union of non-safe flags across stages for one row, with the reason
    each stage gave."""

    row_id: str
    flags: frozenset[str]
    reasons: dict[str, str]


def merge_flags(records: list[FlagRecord]) -> MergedFlags:
    """Fold all stage records for one row into a single flag set.

    The merged set is the union of non-safe flags; if that union is empty
    the row is safe. Reasons are kept per stage.
    """
    if not records:
        raise ValueError("records must be non-empty")
    row_ids = {r.row_id for r in records}
    if len(row_ids) > 1:
        raise ValueError(f"records span multiple rows: {sorted(row_ids)}")
    merged: set[str] = set()
    reasons: dict[str, str] = {}
    for rec in records:
        merged |= rec.flags - {"safe"}
        if rec.reason:
            reasons[rec.stage] = rec.reason
    if not merged:
        merged = {"safe"}
    return MergedFlags(row_id=records[0].row_id, flags=frozenset(merged), reasons=reasons)
