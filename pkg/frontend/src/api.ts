import type { NextResponse, SessionSummary, VerdictPayload } from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(detail);
  }
}

/** Thin typed client over the review-service endpoints. */
export class ReviewApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listSessions(): Promise<{ sessions: SessionSummary[] }> {
    return this.request("/sessions");
  }

  createSession(body: Record<string, unknown>): Promise<SessionSummary> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  nextItem(sessionId: string, annotator: string): Promise<NextResponse> {
    const query = new URLSearchParams({ annotator });
    return this.request(`/sessions/${sessionId}/next?${query}`);
  }

  submitVerdict(
    sessionId: string,
    annotator: string,
    itemId: number,
    payload: VerdictPayload,
  ): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}/verdicts`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: annotator, item_id: itemId, payload }),
    });
  }

  summary(sessionId: string): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}/summary`);
  }

  async exportSession(sessionId: string, partial = false): Promise<string> {
    const suffix = partial ? "?partial=1" : "";
    const response = await this.fetchFn(
      `${this.baseUrl}/sessions/${sessionId}/export${suffix}`,
    );
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return response.text();
  }
}
