/** Typed client for the annotation service. */

import type { AdjudicationView, AnnotationBody, CandidateView, LabelSpace, Progress,
              SubmitResult } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`request failed with status ${status}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string, private token: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: {
        "X-Auth-Token": this.token,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const detail = (payload as { detail?: unknown } | null)?.detail ?? payload;
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  labelSpace(): Promise<LabelSpace> {
    return this.request("GET", "/api/labelspace");
  }

  async nextCandidate(): Promise<CandidateView | null> {
    const body = await this.request<{ candidate: CandidateView | null }>(
      "GET", "/api/candidates/next");
    return body.candidate;
  }

  submitAnnotation(body: AnnotationBody): Promise<SubmitResult> {
    return this.request("POST", "/api/annotations", body);
  }

  async nextAdjudication(): Promise<AdjudicationView | null> {
    const body = await this.request<{ candidate: AdjudicationView | null }>(
      "GET", "/api/adjudications/next");
    return body.candidate;
  }

  submitAdjudication(body: AnnotationBody): Promise<SubmitResult> {
    return this.request("POST", "/api/adjudications", body);
  }

  progress(): Promise<Progress> {
    return this.request("GET", "/api/progress");
  }
}
