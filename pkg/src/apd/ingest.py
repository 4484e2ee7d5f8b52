"""Corpus loading: row IDs, CSV/JSONL ingestion, and prompt-CSV rendering."""

from __future__ import annotations

import csv
import json
import logging
import random
import re
import string
from dataclasses import dataclass

from .errors import IoError, SchemaError

log = logging.getLogger("apd.ingest")

DEFAULT_LIMIT = 100
PROMPT_TEXT_LIMIT = 6000

STATUS_PENDING = "pending"
STATUS_FLAGGED = "flagged"
STATUS_REVIEWED = "reviewed"
STATUS_REMOVED = "removed"
STATUS_RETAINED = "retained"

# removed/retained are alternative terminal states at the same rank
_STATUS_RANK = {
    STATUS_PENDING: 0,
    STATUS_FLAGGED: 1,
    STATUS_REVIEWED: 2,
    STATUS_REMOVED: 3,
    STATUS_RETAINED: 3,
}


@dataclass
class WebRow:
    """One corpus row moving through the pipeline."""

    id: str
    url: str
    text: str
    status: str = STATUS_PENDING

    def advance_status(self, new: str) -> None:
        """Move to a later lifecycle state; backward moves are rejected."""
        if new not in _STATUS_RANK:
            raise ValueError(f"unknown status {new!r}")
        cur = _STATUS_RANK[self.status]
        if _STATUS_RANK[new] < cur or (cur == 3 and new != self.status):
            raise ValueError(f"illegal status transition {self.status} -> {new}")
        self.status = new


def id_sort_key(row_id: str) -> tuple[str, int]:
    """Sort key putting a2 before a10 and z100 before aa1."""
    m = re.fullmatch(r"([a-z]+)(\d+)", row_id)
    if not m:
        return (row_id, 0)
    prefix, num = m.groups()
    return (f"{len(prefix)}{prefix}", int(num))


def assign_id(ordinal: int) -> str:
    """Row id for a zero-based ordinal: blocks of 100 per letter prefix.

    Ordinals 0..99 map to a1..a100, 100..199 to b1..b100; after z the
    prefix doubles (aa, ab, ...), like spreadsheet columns.
    """
    if ordinal < 0:
        raise ValueError("ordinal must be >= 0")
    block, offset = divmod(ordinal, 100)
    prefix = ""
    n = block + 1
    while n > 0:
        n, rem = divmod(n - 1, 26)
        prefix = string.ascii_lowercase[rem] + prefix
    return f"{prefix}{offset + 1}"


def load_rows(source, limit: int = DEFAULT_LIMIT, sample_seed: int | None = None) -> list[WebRow]:
    """Load rows from a CSV file (header row required, columns url,text).

    ``source`` is a path or an open text file. Returns at most ``limit``
    rows in file order, each with a fresh id and status=pending. Rows with
    an empty url or text are skipped and logged, not fatal. With
    ``sample_seed`` set, rows are drawn as a seeded random sample instead
    of the file head.
    """
    if limit < 0:
        raise ValueError("limit must be >= 0")
    try:
        if hasattr(source, "read"):
            return _read_csv(source, limit, sample_seed)
        with open(source, encoding="utf-8", newline="") as fh:
            return _read_csv(fh, limit, sample_seed)
    except OSError as exc:
        raise IoError(f"cannot read corpus file: {exc}") from exc


def _read_csv(fh, limit: int, sample_seed: int | None) -> list[WebRow]:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = {"url", "text"} - set(header)
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(sorted(missing))}")
    raw = [(i, row.get("url") or "", row.get("text") or "") for i, row in enumerate(reader, start=2)]
    return _build_rows(raw, limit, sample_seed)


def load_rows_jsonl(source, limit: int = DEFAULT_LIMIT, sample_seed: int | None = None) -> list[WebRow]:
    """Load rows from line-delimited records with keys url and text."""
    if limit < 0:
        raise ValueError("limit must be >= 0")
    try:
        if hasattr(source, "read"):
            lines = source.read().splitlines()
        else:
            with open(source, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read corpus file: {exc}") from exc
    raw = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: not a valid record: {exc}") from exc
        if not isinstance(obj, dict) or "url" not in obj or "text" not in obj:
            raise SchemaError(f"line {lineno}: record must carry url and text keys")
        raw.append((lineno, str(obj["url"]), str(obj["text"])))
    return _build_rows(raw, limit, sample_seed)


def _build_rows(raw: list[tuple[int, str, str]], limit: int, sample_seed: int | None) -> list[WebRow]:
    usable = []
    skipped = 0
    for lineno, url, text in raw:
        if not url.strip() or not text.strip():
            skipped += 1
            log.warning("skipping line %d: empty url or text", lineno)
            continue
        usable.append((url, text))
    if skipped:
        log.warning("skip report: %d row(s) dropped for empty url/text", skipped)
    if sample_seed is not None and len(usable) > limit:
        picked = sorted(random.Random(sample_seed).sample(range(len(usable)), limit))
        usable = [usable[i] for i in picked]
    else:
        usable = usable[:limit]
    return [WebRow(id=assign_id(i), url=url, text=text) for i, (url, text) in enumerate(usable)]


def truncate_for_prompt(text: str, limit: int = PROMPT_TEXT_LIMIT) -> str:
    """Cap text length before prompting, cutting at a whitespace boundary."""
    if len(text) <= limit:
        return text
    cut = text.rfind(" ", 0, limit + 1)  # prefer breaking inside the cap
    if cut <= 0:
        cut = limit
    truncated = text[:cut].rstrip()
    log.info("truncated prompt text from %d to %d chars", len(text), len(truncated))
    return truncated


def _csv_field(value: str) -> str:
    if any(c in value for c in ',"\n\r'):
        return '"' + value.replace('"', '""') + '"'
    return value


def to_prompt_csv(rows: list[WebRow], columns: tuple[str, ...] = ("id", "text")) -> str:
    """Render rows as CSV text for prompt embedding.

    Fields containing commas, quotes, or newlines (LF or CR) are quoted
    with internal quotes doubled; row order is preserved. No trailing
    newline.
    """
    if not rows:
        raise ValueError("rows must be non-empty")
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_csv_field(str(getattr(row, col))) for col in columns))
    return "\n".join(lines)
