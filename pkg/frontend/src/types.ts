// Payload shapes of the review service API. Field names are the server's;
// the UI renders them as-is.

export interface DecisionPayload {
  flags: string[];
  reviewer: string;
  note: string;
  timestamp: string;
}

export interface RowPayload {
  id: string;
  url: string;
  text: string;
  status: string;
  machine_flags: string[];
  reasons: Record<string, string>;
  decision: DecisionPayload | null;
  decision_state: "unreviewed" | "confirmed" | "overridden";
}

export interface ConfusionPayload {
  tp: number;
  fp: number;
  tn: number;
  fn: number;
  accuracy: number;
  accuracy_percent: string;
  precision: number;
  recall: number;
  f1: number;
}

export interface PurgePayload {
  removed: number;
  retained: number;
  reason_counts: Record<string, number>;
  removed_rows: { id: string; reason: string }[];
  retained_rows: string[];
}

export interface RowMatrixEntry {
  id: string;
  flags: string[];
  flag_count: number;
  removed: boolean;
  reason: string | null;
}

export interface MetricsPayload {
  rows_total: number;
  reviewed_total: number;
  confusion: { unsafe: ConfusionPayload; undesirable: ConfusionPayload };
  histogram: Record<string, number>;
  rows: RowMatrixEntry[];
  purge: PurgePayload;
  finalized: boolean;
}

export interface ApiErrorBody {
  error: { code: string; message: string; unreviewed?: string[] };
}
