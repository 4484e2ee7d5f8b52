"""HTTP API over the review store, consumed by the review UI.

Errors carry a machine-readable code plus a human message:
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import ApdError, BadRequest, Conflict, IncompleteReview, NotFound
from .metrics import UNDESIRABLE_FAMILY, UNSAFE_FAMILY, compute_confusion, flag_family, removal_report
from .review import TRUST_MACHINE, PurgeResult, ReviewDecision, ReviewStore, finalize_purge


class ReviewBody(BaseModel):
    flags: list[str]
    reviewer: str = ""
    note: str = ""


class FinalizeBody(BaseModel):
    unreviewed_policy: str = TRUST_MACHINE


def _error_response(status: int, code: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message, **extra}})


def row_card(store: ReviewStore, row_id: str) -> dict:
    row = store.rows[row_id]
    merged = store.machine.get(row_id)
    decision = store.decisions.get(row_id)
    machine_flags = sorted(merged.flags) if merged else []
    card = {
        "id": row.id,
        "url": row.url,
        "text": row.text,
        "status": row.status,
        "machine_flags": machine_flags,
        "reasons": dict(merged.reasons) if merged else {},
        "decision": None,
        "decision_state": "unreviewed",
    }
    if decision:
        card["decision"] = {
            "flags": sorted(decision.corrected_flags),
            "reviewer": decision.reviewer,
            "note": decision.note,
            "timestamp": decision.timestamp,
        }
        card["decision_state"] = "confirmed" if decision.corrected_flags == (merged.flags if merged else frozenset()) else "overridden"
    return card


def metrics_payload(store: ReviewStore) -> dict:
    """Everything the metrics view displays, computed server-side.

    Predictions are the machine flags; actuals are the human-finalized
    flags (decision where present, else machine). The purge block is the
    trust-machine projection until the store is finalized.
    """
    final = store.final_flags()
    confusion = {}
    for name, family in (("unsafe", UNSAFE_FAMILY), ("undesirable", UNDESIRABLE_FAMILY)):
        predicted = {rid: flag_family(m.flags, family) for rid, m in store.machine.items()}
        actual = {rid: flag_family(final[rid], family) for rid in store.machine}
        confusion[name] = compute_confusion(predicted, actual).to_dict()
    purge = store.purge
    if purge is None:
        purge = finalize_purge(list(store.rows.values()), store.machine, store.decisions, TRUST_MACHINE)
    report = removal_report(purge, final)
    return {
        "rows_total": len(store.rows),
        "reviewed_total": len(store.decisions),
        "confusion": confusion,
        "histogram": report.histogram,
        "rows": report.row_matrix,
        "purge": _purge_dict(purge),
        "finalized": store.purge is not None,
    }


def _purge_dict(purge: PurgeResult) -> dict:
    return {
        "removed": len(purge.removed),
        "retained": len(purge.retained),
        "reason_counts": dict(sorted(purge.reason_counts.items())),
        "removed_rows": [{"id": rid, "reason": reason} for rid, reason in purge.removed],
        "retained_rows": list(purge.retained),
    }


def create_app(
    store: ReviewStore,
    ui_dir: str | Path | None = None,
    on_finalize: Callable[[PurgeResult], None] | None = None,
) -> FastAPI:
    app = FastAPI(title="apd review service")

    @app.exception_handler(ApdError)
    async def _apd_error(request: Request, exc: ApdError):
        if isinstance(exc, NotFound):
            return _error_response(404, "not_found", str(exc))
        if isinstance(exc, IncompleteReview):
            return _error_response(409, "incomplete_review", str(exc), unreviewed=list(exc.row_ids))
        if isinstance(exc, Conflict):
            return _error_response(409, "conflict", str(exc))
        if isinstance(exc, BadRequest):
            return _error_response(400, "bad_request", str(exc))
        return _error_response(500, "internal", str(exc))

    @app.get("/api/rows")
    def list_rows(filter: str | None = None, flag: str | None = None):
        rows = store.list_pending(status=filter, flag=flag)
        return {"rows": [row_card(store, r.id) for r in rows]}

    @app.get("/api/rows/{row_id}")
    def get_row(row_id: str):
        if row_id not in store.rows:
            raise NotFound(f"unknown row {row_id!r}")
        return row_card(store, row_id)

    @app.post("/api/rows/{row_id}/review")
    def submit_review(row_id: str, body: ReviewBody, x_reviewer: str | None = Header(default=None)):
        decision = ReviewDecision(
            row_id=row_id,
            corrected_flags=frozenset(body.flags),
            reviewer=body.reviewer or x_reviewer or "anonymous",
            note=body.note,
        )
        store.submit_review(decision)
        return row_card(store, row_id)

    @app.post("/api/finalize")
    def finalize(body: FinalizeBody):
        purge = store.finalize(unreviewed_policy=body.unreviewed_policy)
        if on_finalize:
            on_finalize(purge)
        return _purge_dict(purge)

    @app.get("/api/metrics")
    def metrics():
        return metrics_payload(store)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
