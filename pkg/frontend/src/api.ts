/** Thin typed client over the service HTTP API; no retries, no reordering. */

import type {
  FeedbackPost,
  FeedbackSummary,
  NextQuestion,
  PatchRequest,
  PatchResponse,
  ScanRequest,
  ScanResponse,
  SessionInfo,
  SlideSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText || "request failed";
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  listSlides(): Promise<SlideSummary[]> {
    return this.request("/slides");
  }

  scanSearch(body: ScanRequest): Promise<ScanResponse> {
    return this.post("/search/scan", body);
  }

  patchSearch(body: PatchRequest): Promise<PatchResponse> {
    return this.post("/search/patch", body);
  }

  createSession(nQuestions: number, seed: number): Promise<SessionInfo> {
    return this.post("/sessions", { n_questions: nQuestions, seed });
  }

  nextQuestion(sessionId: string): Promise<NextQuestion> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  postFeedback(body: FeedbackPost): Promise<{ status: string; result_rank: number }> {
    return this.post("/feedback", body);
  }

  feedbackSummary(): Promise<FeedbackSummary> {
    return this.request("/feedback/summary");
  }

  /** Absolute URL for a thumbnail path returned by the service. */
  resolve(path: string): string {
    return this.baseUrl + path;
  }
}
