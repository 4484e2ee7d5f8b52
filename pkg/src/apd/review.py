"""Review store: machine flags, human corrections, and the purge that
splits the corpus into removed and retained rows."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from .errors import BadRequest, Conflict, IncompleteReview, NotFound
from .flagging import TAXONOMY, MergedFlags
from .ingest import (
    STATUS_FLAGGED,
    STATUS_PENDING,
    STATUS_REMOVED,
    STATUS_RETAINED,
    STATUS_REVIEWED,
    WebRow,
    id_sort_key,
)

TRUST_MACHINE = "trust_machine"
REQUIRE_REVIEW = "require_review"

# Vocabulary a reviewer may assign: the LLM taxonomy plus the pseudo-flags
# contributed by the safety and domain stages.
REVIEW_VOCAB = frozenset(TAXONOMY) | {"unsafe", "domain_unsafe", "domain_not_indexed"}

# One removal reason per row, attributed by fixed precedence.
REASON_PRECEDENCE = ("unsafe", "domain_unsafe", "domain_not_indexed", "flagging_failed")


@dataclass(frozen=True)
class ReviewDecision:
    row_id: str
    corrected_flags: frozenset[str]
    reviewer: str
    note: str = ""
    timestamp: str = ""

    def __post_init__(self):
        object.__setattr__(self, "corrected_flags", frozenset(self.corrected_flags))
        if not self.timestamp:
            object.__setattr__(self, "timestamp", datetime.now(timezone.utc).isoformat())


@dataclass(frozen=True)
class PurgeResult:
    removed: list[tuple[str, str]]  # (row_id, primary_reason)
    retained: list[str]
    reason_counts: dict[str, int]


def validate_flags(flags) -> frozenset[str]:
    flag_set = frozenset(flags)
    if not flag_set:
        raise BadRequest("flags must be non-empty")
    unknown = flag_set - REVIEW_VOCAB
    if unknown:
        raise BadRequest(f"unknown flag token(s): {', '.join(sorted(unknown))}")
    if "safe" in flag_set and len(flag_set) > 1:
        raise BadRequest("safe is exclusive with every other flag")
    return flag_set


def primary_reason(flags: frozenset[str]) -> str:
    """Single removal reason for a multi-flag row under the fixed
    precedence; any remaining non-safe flag counts as undesirable."""
    for reason in REASON_PRECEDENCE:
        if reason in flags:
            return reason
    return "undesirable"


def final_flags_for(
    machine: Mapping[str, MergedFlags], decisions: Mapping[str, ReviewDecision]
) -> dict[str, frozenset[str]]:
    """Final flag set per row: the human decision where present, else the
    machine flags."""
    final = {}
    for row_id, merged in machine.items():
        decision = decisions.get(row_id)
        final[row_id] = decision.corrected_flags if decision else merged.flags
    return final


def finalize_purge(
    rows: list[WebRow],
    machine: Mapping[str, MergedFlags],
    decisions: Mapping[str, ReviewDecision],
    unreviewed_policy: str = TRUST_MACHINE,
) -> PurgeResult:
    """Split the corpus into removed and retained rows.

    A row is removed iff its final flag set is not exactly {safe}; each
    removed row is counted under exactly one reason.
    """
    if unreviewed_policy not in (TRUST_MACHINE, REQUIRE_REVIEW):
        raise BadRequest(f"unknown unreviewed_policy {unreviewed_policy!r}")
    missing_machine = [r.id for r in rows if r.id not in machine]
    if missing_machine:
        raise BadRequest(f"rows without machine flags: {', '.join(missing_machine[:5])}")
    if unreviewed_policy == REQUIRE_REVIEW:
        unreviewed = sorted((r.id for r in rows if r.id not in decisions), key=id_sort_key)
        if unreviewed:
            raise IncompleteReview(f"unreviewed row(s): {', '.join(unreviewed)}", row_ids=tuple(unreviewed))

    final = final_flags_for({r.id: machine[r.id] for r in rows}, decisions)
    removed: list[tuple[str, str]] = []
    retained: list[str] = []
    reason_counts: dict[str, int] = {}
    for row in rows:
        flags = final[row.id]
        if flags == frozenset({"safe"}):
            retained.append(row.id)
        else:
            reason = primary_reason(flags)
            removed.append((row.id, reason))
            reason_counts[reason] = reason_counts.get(reason, 0) + 1
    return PurgeResult(removed=removed, retained=retained, reason_counts=reason_counts)


class ReviewStore:
    """Holds rows and machine flags, accepts human corrections, and
    finalizes the purge.

    Decision writes are serialized and appended to an optional
    line-delimited log; current state is a replay of that log.
    """

    def __init__(self, rows: list[WebRow], machine: Mapping[str, MergedFlags], log_path: str | Path | None = None):
        self.rows: dict[str, WebRow] = {r.id: r for r in rows}
        self.machine = dict(machine)
        self.decisions: dict[str, ReviewDecision] = {}
        self.log_path = Path(log_path) if log_path else None
        self.purge: PurgeResult | None = None
        self._lock = threading.Lock()
        for row in self.rows.values():
            merged = self.machine.get(row.id)
            if merged and merged.flags != frozenset({"safe"}) and row.status == STATUS_PENDING:
                row.advance_status(STATUS_FLAGGED)
        if self.log_path and self.log_path.exists():
            self._replay_log()

    def _replay_log(self) -> None:
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                decision = ReviewDecision(
                    row_id=obj["row_id"],
                    corrected_flags=frozenset(obj["flags"]),
                    reviewer=obj.get("reviewer", ""),
                    note=obj.get("note", ""),
                    timestamp=obj.get("timestamp", ""),
                )
                self._apply(decision, persist=False)

    def list_pending(self, status: str | None = None, flag: str | None = None) -> list[WebRow]:
        """Rows matching the filter, ordered by id."""
        status = status or "all"
        if status not in ("all", "pending", "flagged", "reviewed", "removed", "retained"):
            raise BadRequest(f"unknown filter {status!r}")
        if flag is not None and flag not in REVIEW_VOCAB | {"flagging_failed"}:
            raise BadRequest(f"unknown flag filter {flag!r}")
        rows = []
        for row in self.rows.values():
            if status != "all" and row.status != status:
                continue
            if flag is not None:
                merged = self.machine.get(row.id)
                if not merged or flag not in merged.flags:
                    continue
            rows.append(row)
        return sorted(rows, key=lambda r: id_sort_key(r.id))

    def submit_review(self, decision: ReviewDecision) -> ReviewDecision:
        """Persist a human correction; resubmission replaces the earlier
        decision for the row."""
        with self._lock:
            if self.purge is not None:
                raise Conflict("store is finalized; reviews are closed")
            if decision.row_id not in self.rows:
                raise NotFound(f"unknown row {decision.row_id!r}")
            if decision.row_id not in self.machine:
                raise BadRequest(f"row {decision.row_id!r} has no machine flags yet")
            decision = ReviewDecision(
                row_id=decision.row_id,
                corrected_flags=validate_flags(decision.corrected_flags),
                reviewer=decision.reviewer,
                note=decision.note,
                timestamp=decision.timestamp,
            )
            self._apply(decision, persist=True)
            return decision

    def _apply(self, decision: ReviewDecision, persist: bool) -> None:
        self.decisions[decision.row_id] = decision
        row = self.rows[decision.row_id]
        if row.status in (STATUS_PENDING, STATUS_FLAGGED):
            row.advance_status(STATUS_REVIEWED)
        if persist and self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "row_id": decision.row_id,
                            "flags": sorted(decision.corrected_flags),
                            "reviewer": decision.reviewer,
                            "note": decision.note,
                            "timestamp": decision.timestamp,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    def final_flags(self) -> dict[str, frozenset[str]]:
        return final_flags_for(self.machine, self.decisions)

    def finalize(self, unreviewed_policy: str = TRUST_MACHINE) -> PurgeResult:
        """Run the purge on a quiesced store; later writes are rejected."""
        with self._lock:
            purge = finalize_purge(list(self.rows.values()), self.machine, self.decisions, unreviewed_policy)
            for row_id, _reason in purge.removed:
                self.rows[row_id].advance_status(STATUS_REMOVED)
            for row_id in purge.retained:
                self.rows[row_id].advance_status(STATUS_RETAINED)
            self.purge = purge
            return purge
