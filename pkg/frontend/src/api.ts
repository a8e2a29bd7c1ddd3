/** Typed client for the assistant's HTTP API. */

export interface Source {
  chunk_id: string;
  score: number;
}

export interface TurnTrace {
  rewrites: number;
  regenerations: number;
  elapsed_ms: number;
}

export interface TurnResponse {
  session_id: string;
  status: "answered" | "clarification_needed";
  answer: string | null;
  clarification_question: string | null;
  sources: Source[];
  trace: TurnTrace;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface AssistantApi {
  ask(question: string, sessionId?: string | null): Promise<TurnResponse>;
  clarify(sessionId: string, answer: string): Promise<TurnResponse>;
  feedback(sessionId: string, turnIndex: number, helpfulness: number): Promise<void>;
}

async function parseJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient implements AssistantApi {
  constructor(private readonly baseUrl: string = "") {}

  private async post(path: string, body: unknown): Promise<Response> {
    try {
      return await fetch(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
  }

  async ask(question: string, sessionId?: string | null): Promise<TurnResponse> {
    const body: Record<string, unknown> = { question };
    if (sessionId) body.session_id = sessionId;
    return parseJson<TurnResponse>(await this.post("/api/ask", body));
  }

  async clarify(sessionId: string, answer: string): Promise<TurnResponse> {
    return parseJson<TurnResponse>(
      await this.post(`/api/sessions/${encodeURIComponent(sessionId)}/clarify`, {
        clarification_answer: answer,
      }),
    );
  }

  async feedback(sessionId: string, turnIndex: number, helpfulness: number): Promise<void> {
    const response = await this.post("/api/feedback", {
      session_id: sessionId,
      turn_index: turnIndex,
      helpfulness,
    });
    if (response.status !== 204) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // keep status text
      }
      throw new ApiError(response.status, detail);
    }
  }
}
