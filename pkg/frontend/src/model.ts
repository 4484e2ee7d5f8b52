// View models. Every number shown in the UI is copied verbatim from an
// API payload field; nothing is recomputed client-side.

import type { ConfusionPayload, MetricsPayload, PurgePayload, RowPayload } from "./types.js";

export const EXCERPT_LENGTH = 180;

export interface RowCard {
  id: string;
  url: string;
  excerpt: string;
  fullText: string;
  status: string;
  machineFlags: string[];
  reasons: { stage: string; reason: string }[];
  decisionFlags: string[] | null;
  decisionState: "unreviewed" | "confirmed" | "overridden";
}

export function buildRowCard(payload: RowPayload): RowCard {
  return {
    id: payload.id,
    url: payload.url,
    excerpt:
      payload.text.length > EXCERPT_LENGTH ? `${payload.text.slice(0, EXCERPT_LENGTH)}…` : payload.text,
    fullText: payload.text,
    status: payload.status,
    machineFlags: [...payload.machine_flags],
    reasons: Object.entries(payload.reasons).map(([stage, reason]) => ({ stage, reason })),
    decisionFlags: payload.decision ? [...payload.decision.flags] : null,
    decisionState: payload.decision_state,
  };
}

export interface ConfusionView {
  title: string;
  tp: number;
  fp: number;
  tn: number;
  fn: number;
  accuracyPercent: string;
  precision: number;
  recall: number;
  f1: number;
}

function buildConfusionView(title: string, payload: ConfusionPayload): ConfusionView {
  return {
    title,
    tp: payload.tp,
    fp: payload.fp,
    tn: payload.tn,
    fn: payload.fn,
    accuracyPercent: payload.accuracy_percent,
    precision: payload.precision,
    recall: payload.recall,
    f1: payload.f1,
  };
}

export interface HeatmapRow {
  id: string;
  flags: string[];
  flagCount: number;
  removed: boolean;
  reason: string | null;
}

export interface MetricsView {
  rowsTotal: number;
  reviewedTotal: number;
  unsafe: ConfusionView;
  undesirable: ConfusionView;
  histogram: { flag: string; count: number }[];
  removed: number;
  retained: number;
  reasonCounts: { reason: string; count: number }[];
  heatmap: HeatmapRow[];
  finalized: boolean;
}

export function buildMetricsView(payload: MetricsPayload): MetricsView {
  return {
    rowsTotal: payload.rows_total,
    reviewedTotal: payload.reviewed_total,
    unsafe: buildConfusionView("Flagged as unsafe", payload.confusion.unsafe),
    undesirable: buildConfusionView("Flagged as undesirable", payload.confusion.undesirable),
    histogram: Object.entries(payload.histogram).map(([flag, count]) => ({ flag, count })),
    removed: payload.purge.removed,
    retained: payload.purge.retained,
    reasonCounts: Object.entries(payload.purge.reason_counts).map(([reason, count]) => ({ reason, count })),
    heatmap: payload.rows.map((entry) => ({
      id: entry.id,
      flags: [...entry.flags],
      flagCount: entry.flag_count,
      removed: entry.removed,
      reason: entry.reason,
    })),
    finalized: payload.finalized,
  };
}

export interface FinalizeView {
  removed: number;
  retained: number;
  reasonCounts: { reason: string; count: number }[];
  removedRows: { id: string; reason: string }[];
}

export function buildFinalizeView(payload: PurgePayload): FinalizeView {
  return {
    removed: payload.removed,
    retained: payload.retained,
    reasonCounts: Object.entries(payload.reason_counts).map(([reason, count]) => ({ reason, count })),
    removedRows: payload.removed_rows.map((row) => ({ id: row.id, reason: row.reason })),
  };
}

// Flag vocabulary a reviewer can assign; mirrors the server's review
// vocabulary (the server still validates).
export const REVIEW_FLAGS = [
  "safe",
  "unsafe",
  "domain_unsafe",
  "domain_not_indexed",
  "unusable",
  "advertisement",
  "sensitive",
  "biased",
  "religious",
  "lottery",
  "scam",
  "spam",
  "data_poisoning",
];

// Safe-exclusivity mirrored in the control: picking safe clears the rest,
// picking anything else clears safe.
export function toggleFlag(selected: string[], flag: string): string[] {
  if (selected.includes(flag)) {
    return selected.filter((f) => f !== flag);
  }
  if (flag === "safe") {
    return ["safe"];
  }
  return [...selected.filter((f) => f !== "safe"), flag];
}
