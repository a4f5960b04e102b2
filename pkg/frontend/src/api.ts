/** Typed client for the segmentation server's HTTP API.
 *
 * The server exposes five endpoints: POST /jobs to submit, GET
 * /jobs/{id} for status, GET /jobs/{id}/result for the finished
 * labeling, DELETE /jobs/{id} to cancel, and GET /bank for the pattern
 * bank the server was started with.  All images travel base64-encoded:
 * the input photo as binary PPM, seed masks and result maps as binary
 * PGM.
 */

export type JobStatusValue =
  | "queued"
  | "running"
  | "done"
  | "failed"
  | "cancelled";

export interface SubmitPayload {
  /** Base64 binary PPM. */
  image: string;
  /** Base64 binary PGM seed mask. */
  strokes: string;
  /** Smoothing prior weight; must be positive. */
  lambda: number;
  /** Pass budget, or "auto" to stop on convergence. */
  passes: number | "auto";
}

export interface JobStatusReport {
  status: JobStatusValue;
  pass: number;
  lower_bound: number | null;
  error?: string;
}

export interface JobResultPayload {
  /** Base64 binary PGM, 255 foreground / 0 background. */
  labeling: string;
  energy: number;
  lower_bound: number;
  /** Base64 binary PGM; the 128 level is the decision boundary. */
  min_marginal_map: string;
}

export interface CancelReply {
  id: string;
  status: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }

  get isQueueFull(): boolean {
    return this.status === 429;
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<unknown> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    let parsed: unknown = null;
    const text = await response.text();
    if (text.length > 0) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!response.ok) {
      const detail =
        typeof parsed === "object" && parsed !== null && "detail" in parsed
          ? String((parsed as { detail: unknown }).detail)
          : String(parsed);
      throw new ApiError(response.status, detail);
    }
    return parsed;
  }

  /** Submit a job; resolves to the new job id (the server replies 202). */
  async submitJob(payload: SubmitPayload): Promise<string> {
    const reply = (await this.request("POST", "/jobs", payload)) as {
      id: string;
    };
    return reply.id;
  }

  async jobStatus(jobId: string): Promise<JobStatusReport> {
    return (await this.request("GET", `/jobs/${jobId}`)) as JobStatusReport;
  }

  /** Fetch the result of a finished job; 409 until the job is done. */
  async jobResult(jobId: string): Promise<JobResultPayload> {
    return (await this.request(
      "GET",
      `/jobs/${jobId}/result`,
    )) as JobResultPayload;
  }

  /** Cancel a queued or running job; 409 once the job is terminal. */
  async cancelJob(jobId: string): Promise<CancelReply> {
    return (await this.request("DELETE", `/jobs/${jobId}`)) as CancelReply;
  }

  /** The pattern bank the server was started with, as plain JSON. */
  async bank(): Promise<Record<string, unknown>> {
    return (await this.request("GET", "/bank")) as Record<string, unknown>;
  }
}
