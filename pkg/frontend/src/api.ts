/** Typed client for the annotation service HTTP API. */

export type Mode = "acr" | "ccr";

export interface SessionInfo {
  session_id: string;
  mode: Mode;
  svd: string;
  warmup_done: boolean;
}

export interface WarmupList {
  utterances: string[];
  warmup_done: boolean;
}

export interface AcrScale {
  min: number;
  max: number;
  min_caption: string;
  max_caption: string;
}

export interface CcrTask {
  task_id: string;
  mode: "ccr";
  utt_i: string;
  utt_j: string;
  choices: string[];
}

export interface AcrTask {
  task_id: string;
  mode: "acr";
  utterance: string;
  scale: AcrScale;
}

export type Task = CcrTask | AcrTask;

export type LabelPayload = { choice: string } | { rating: number };

export interface StoredLabel {
  status: string;
  record: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** What the session flow needs from the service; fakes implement this too. */
export interface AnnotationApi {
  newSession(annotator: string, svd: string, mode: Mode): Promise<SessionInfo>;
  warmup(sessionId: string): Promise<WarmupList>;
  warmupDone(sessionId: string): Promise<void>;
  nextTask(sessionId: string): Promise<Task>;
  submitLabel(sessionId: string, taskId: string, payload: LabelPayload): Promise<StoredLabel>;
  audioUrl(utteranceId: string): string;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient implements AnnotationApi {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly baseUrl: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  newSession(annotator: string, svd: string, mode: Mode): Promise<SessionInfo> {
    const query = new URLSearchParams({ annotator, svd, mode });
    return this.request<SessionInfo>(`/api/session/new?${query}`);
  }

  warmup(sessionId: string): Promise<WarmupList> {
    return this.request<WarmupList>(`/api/session/${sessionId}/warmup`);
  }

  async warmupDone(sessionId: string): Promise<void> {
    await this.request<{ warmup_done: boolean }>(
      `/api/session/${sessionId}/warmup/done`,
      { method: "POST" },
    );
  }

  nextTask(sessionId: string): Promise<Task> {
    return this.request<Task>(`/api/session/${sessionId}/task`);
  }

  submitLabel(
    sessionId: string,
    taskId: string,
    payload: LabelPayload,
  ): Promise<StoredLabel> {
    return this.request<StoredLabel>(`/api/session/${sessionId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task_id: taskId, payload }),
    });
  }

  audioUrl(utteranceId: string): string {
    return `${this.baseUrl}/audio/${utteranceId}`;
  }
}
