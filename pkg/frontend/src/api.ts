/** Typed client for the review service's REST API.
 *
 * This is the UI's only connection to the world: no direct store access,
 * no side channels.  Errors split into two kinds the interface treats
 * differently — `ApiError` (the server answered and said no) and
 * `NetworkError` (the server could not be reached; show a banner and
 * offer a retry).
 */

export interface VideoSummary {
  video_id: string;
  status: string;
  frame_count: number;
  fps: number;
  width: number;
  height: number;
  image_format: string;
  config_digest: string;
  revisions: number;
  instances: Record<string, string>;
  score: number | null;
  open_issues: number | null;
}

export interface FramePayload {
  video_id: string;
  frame_index: number;
  image_format: string;
  image_base64: string;
  annotation: string | null;
}

export interface ReportIssue {
  index: number;
  frame_index: number;
  instance_id: number;
  kind: string;
  status: "open" | "resolved";
  comment: string;
}

export interface ReportPayload {
  video_id: string;
  score: number;
  issues: ReportIssue[];
}

export interface RevisionsPayload {
  video_id: string;
  count: number;
  revisions: string[];
}

export interface LeaseInfo {
  video_id: string;
  held: boolean;
  reviewer?: string;
  expires_in?: number;
}

export interface LeaseGrant {
  video_id: string;
  reviewer: string;
  token: string;
  expires_in: number;
}

export interface RevisionOutcome {
  video_id: string;
  sequence: number;
  applied: boolean;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class NetworkError extends Error {}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

export interface ApiOptions {
  /** Bearer token; omitted on anonymous deployments. */
  authToken?: string;
  /** Injectable transport (tests); defaults to global fetch. */
  fetchImpl?: FetchLike;
}

export class ReviewApi {
  private readonly base: string;
  private readonly authToken?: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, options: ApiOptions = {}) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.authToken = options.authToken;
    this.fetchImpl =
      options.fetchImpl ?? (fetch as unknown as FetchLike).bind(globalThis);
  }

  private async request<T>(
    method: string,
    path: string,
    options: { body?: unknown; leaseToken?: string } = {},
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.authToken) headers["authorization"] = `Bearer ${this.authToken}`;
    if (options.leaseToken) headers["x-lease-token"] = options.leaseToken;
    let body: string | undefined;
    if (options.body !== undefined) {
      headers["content-type"] = "application/json";
      body = JSON.stringify(options.body);
    }
    let response: Awaited<ReturnType<FetchLike>>;
    try {
      response = await this.fetchImpl(this.base + path, { method, headers, body });
    } catch (err) {
      throw new NetworkError(
        err instanceof Error ? err.message : "network failure",
      );
    }
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const detail =
        payload && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : `status ${response.status}`;
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  listVideos(): Promise<{ videos: VideoSummary[] }> {
    return this.request("GET", "/api/videos");
  }

  video(videoId: string): Promise<VideoSummary> {
    return this.request("GET", `/api/videos/${videoId}`);
  }

  frame(videoId: string, index: number): Promise<FramePayload> {
    return this.request("GET", `/api/videos/${videoId}/frames/${index}`);
  }

  report(videoId: string): Promise<ReportPayload> {
    return this.request("GET", `/api/videos/${videoId}/report`);
  }

  revisions(videoId: string): Promise<RevisionsPayload> {
    return this.request("GET", `/api/videos/${videoId}/revisions`);
  }

  leaseInfo(videoId: string): Promise<LeaseInfo> {
    return this.request("GET", `/api/videos/${videoId}/lease`);
  }

  acquireLease(
    videoId: string,
    reviewer: string,
    leaseToken?: string,
  ): Promise<LeaseGrant> {
    return this.request("POST", `/api/videos/${videoId}/lease`, {
      body: { reviewer },
      leaseToken,
    });
  }

  releaseLease(
    videoId: string,
    leaseToken: string,
  ): Promise<{ video_id: string; released: boolean }> {
    return this.request("DELETE", `/api/videos/${videoId}/lease`, {
      leaseToken,
    });
  }

  postRevision(
    videoId: string,
    sequence: number,
    record: string,
    leaseToken: string,
  ): Promise<RevisionOutcome> {
    return this.request("POST", `/api/videos/${videoId}/revisions`, {
      body: { sequence, revision: record },
      leaseToken,
    });
  }

  resolveIssue(
    videoId: string,
    issueIndex: number,
    leaseToken: string,
  ): Promise<ReportPayload> {
    return this.request(
      "POST",
      `/api/videos/${videoId}/issues/${issueIndex}/resolve`,
      { leaseToken },
    );
  }

  finalize(
    videoId: string,
    override: boolean,
    leaseToken: string,
  ): Promise<{ video_id: string; status: string }> {
    return this.request("POST", `/api/videos/${videoId}/finalize`, {
      body: { override },
      leaseToken,
    });
  }
}
