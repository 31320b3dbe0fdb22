/**
 * Typed client for the curation service.
 *
 * The fetch implementation is injected so tests can run against an
 * in-memory mock; all state lives on the service side.
 */

import type {
  AcceptRequest,
  AcceptResponse,
  CandidatesPayload,
  LogEntry,
  PendingMention,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** An accept was issued against a slate computed on an older ontology version. */
export class ConflictError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.url(path), init);
    if (response.status === 409) {
      throw new ConflictError(await errorDetail(response));
    }
    if (!response.ok) {
      throw new ApiError(await errorDetail(response), response.status);
    }
    return (await response.json()) as T;
  }

  async listMentions(sessionId: string): Promise<PendingMention[]> {
    const body = await this.request<{ pending: PendingMention[] }>(
      `/sessions/${sessionId}/mentions`,
    );
    return body.pending;
  }

  async getCandidates(
    sessionId: string,
    mentionId: string,
    k?: number,
    method?: string,
  ): Promise<CandidatesPayload> {
    const params = new URLSearchParams();
    if (k !== undefined) params.set("k", String(k));
    if (method !== undefined) params.set("method", method);
    const query = params.size > 0 ? `?${params.toString()}` : "";
    return this.request<CandidatesPayload>(
      `/sessions/${sessionId}/mentions/${mentionId}/candidates${query}`,
    );
  }

  async accept(
    sessionId: string,
    mentionId: string,
    payload: AcceptRequest,
  ): Promise<AcceptResponse> {
    return this.request<AcceptResponse>(
      `/sessions/${sessionId}/mentions/${mentionId}/accept`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
  }

  async skip(sessionId: string, mentionId: string): Promise<void> {
    await this.request<{ ok: boolean }>(
      `/sessions/${sessionId}/mentions/${mentionId}/skip`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({}),
      },
    );
  }

  async getVersion(sessionId: string): Promise<number> {
    const body = await this.request<{ version: number }>(
      `/sessions/${sessionId}/ontology/version`,
    );
    return body.version;
  }

  async getLog(sessionId: string): Promise<LogEntry[]> {
    const body = await this.request<{ entries: LogEntry[] }>(
      `/sessions/${sessionId}/log`,
    );
    return body.entries;
  }
}
