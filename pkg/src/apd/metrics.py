"""Evaluation artifacts: confusion matrices, flag histograms, and the
removal report."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import ShapeError
from .flagging import UNDESIRABLE_FLAGS

UNSAFE_FAMILY = "unsafe_family"
UNDESIRABLE_FAMILY = "undesirable_family"

_UNSAFE_TOKENS = frozenset({"unsafe", "domain_unsafe"})
_UNDESIRABLE_TOKENS = frozenset(UNDESIRABLE_FLAGS)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def accuracy_percent(self) -> str:
        """Accuracy as a percentage string with 2 decimals, computed in
        integer arithmetic and rounded once (half up)."""
        if not self.total:
            return "0.00%"
        scaled, rem = divmod((self.tp + self.tn) * 10000, self.total)
        if rem * 2 >= self.total:
            scaled += 1
        return f"{scaled // 100}.{scaled % 100:02d}%"

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "accuracy_percent": self.accuracy_percent,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def compute_confusion(predicted: Mapping[str, bool], actual: Mapping[str, bool]) -> ConfusionMatrix:
    """Confusion counts of per-row machine predictions against the
    human-finalized values."""
    if set(predicted) != set(actual):
        raise ShapeError("predicted and actual must cover the same row set")
    tp = fp = tn = fn = 0
    for row_id, pred in predicted.items():
        act = actual[row_id]
        if pred and act:
            tp += 1
        elif pred and not act:
            fp += 1
        elif act:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def flag_family(flags: Iterable[str], family: str) -> bool:
    """Whether a merged flag set belongs to a scored flag family.

    domain_not_indexed belongs to neither family: it is a deterministic
    provider outcome, not a model prediction a reviewer corrects.
    """
    flag_set = set(flags)
    if family == UNSAFE_FAMILY:
        return bool(flag_set & _UNSAFE_TOKENS)
    if family == UNDESIRABLE_FAMILY:
        return bool(flag_set & _UNDESIRABLE_TOKENS)
    raise ValueError(f"unknown family {family!r}")


def flag_histogram(flag_sets: Iterable[Iterable[str]]) -> dict[str, int]:
    """Count every flag across rows; multi-flag rows increment each flag
    they carry."""
    counts: Counter[str] = Counter()
    for flags in flag_sets:
        counts.update(set(flags))
    return dict(sorted(counts.items()))


REASON_LABELS = {
    "unsafe": "Flagged as unsafe",
    "domain_unsafe": "Domain unsafe",
    "domain_not_indexed": "Domain not indexed",
    "flagging_failed": "Flagging failed",
    "undesirable": "Flagged as undesirable",
}


@dataclass
class RemovalReport:
    removed: int
    retained: int
    reason_counts: dict[str, int]
    histogram: dict[str, int]
    row_matrix: list[dict]  # per row: id, flags membership, removal reason

    def to_text(self) -> str:
        lines = ["Reason for removal            Count", "-" * 36]
        for key, label in REASON_LABELS.items():
            if key in self.reason_counts:
                lines.append(f"{label:<30}{self.reason_counts[key]:>5}")
        lines.append(f"{'TOTAL':<30}{self.removed:>5}")
        lines.append("")
        lines.append(f"Removed:  {self.removed}")
        lines.append(f"Retained: {self.retained}")
        if self.histogram:
            lines.append("")
            lines.append("Flag histogram (post-correction):")
            for flag, count in self.histogram.items():
                lines.append(f"  {flag:<22}{count:>5}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "removed": self.removed,
            "retained": self.retained,
            "reason_counts": self.reason_counts,
            "histogram": self.histogram,
            "rows": self.row_matrix,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def removal_report(purge, final_flags: Mapping[str, Iterable[str]]) -> RemovalReport:
    """Assemble the reason table, removed/retained split, and per-row
    flag-membership matrix (the heatmap's data) from a purge result."""
    reasons = {row_id: reason for row_id, reason in purge.removed}
    matrix = []
    for row_id, flags in final_flags.items():
        flag_set = sorted(set(flags))
        matrix.append(
            {
                "id": row_id,
                "flags": flag_set,
                "flag_count": len([f for f in flag_set if f != "safe"]),
                "removed": row_id in reasons,
                "reason": reasons.get(row_id),
            }
        )
    histogram = flag_histogram(final_flags.values())
    return RemovalReport(
        removed=len(purge.removed),
        retained=len(purge.retained),
        reason_counts=dict(purge.reason_counts),
        histogram=histogram,
        row_matrix=matrix,
    )
