import type { MetricsPayload, PurgePayload, RowPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly unreviewed: string[] = [],
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  try {
    const body = await resp.json();
    return new ApiError(resp.status, body.error.code, body.error.message, body.error.unreviewed ?? []);
  } catch {
    return new ApiError(resp.status, "unknown", `HTTP ${resp.status}`);
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    readonly reviewer: string = "reviewer",
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      throw await parseError(resp);
    }
    return resp.json() as Promise<T>;
  }

  async listRows(filter?: string, flag?: string): Promise<RowPayload[]> {
    const params = new URLSearchParams();
    if (filter) params.set("filter", filter);
    if (flag) params.set("flag", flag);
    const query = params.toString();
    const body = await this.request<{ rows: RowPayload[] }>(`/api/rows${query ? `?${query}` : ""}`);
    return body.rows;
  }

  getRow(id: string): Promise<RowPayload> {
    return this.request(`/api/rows/${id}`);
  }

  submitReview(id: string, flags: string[], note = ""): Promise<RowPayload> {
    return this.request(`/api/rows/${id}/review`, {
      method: "POST",
      headers: { "Content-Type": "application/json", "X-Reviewer": this.reviewer },
      body: JSON.stringify({ flags, reviewer: this.reviewer, note }),
    });
  }

  finalize(policy: "trust_machine" | "require_review" = "trust_machine"): Promise<PurgePayload> {
    return this.request("/api/finalize", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ unreviewed_policy: policy }),
    });
  }

  getMetrics(): Promise<MetricsPayload> {
    return this.request("/api/metrics");
  }
}
