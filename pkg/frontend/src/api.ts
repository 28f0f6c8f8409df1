// Typed client for the roomwalk session service. All UI logic talks to the
// SessionApi interface so tests can swap in a mock without any HTTP.

export type Delta = { forward: number; strafe: number; yaw_deg: number };

export type Pose = { rotation: number[]; translation: number[] };

export type CreateRequest = {
  scene_seed?: number;
  image_b64?: string;
  seed?: number;
  beam_width?: number;
};

export type CreateResponse = {
  id: string;
  frame_png_b64: string;
  pose: Pose;
  height: number;
  width: number;
};

export type StepResponse = {
  frame_png_b64: string;
  pose: Pose;
  beam_score: number | null;
  cached: boolean;
};

export type SessionState = {
  id: string;
  poses: Pose[];
  beam_scores: number[];
  token_grids: number[][][];
  generated_frames: number;
  model_calls: number;
};

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface SessionApi {
  create(body: CreateRequest): Promise<CreateResponse>;
  step(id: string, delta: Delta): Promise<StepResponse>;
  state(id: string): Promise<SessionState>;
  remove(id: string): Promise<void>;
}

type FetchFn = typeof fetch;

export class HttpSessionApi implements SessionApi {
  constructor(private baseUrl: string = "", private fetchFn: FetchFn = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        detail = (await res.json()).detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  create(body: CreateRequest): Promise<CreateResponse> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  step(id: string, delta: Delta): Promise<StepResponse> {
    return this.request(`/sessions/${id}/step`, {
      method: "POST",
      body: JSON.stringify({ delta }),
    });
  }

  state(id: string): Promise<SessionState> {
    return this.request(`/sessions/${id}`);
  }

  async remove(id: string): Promise<void> {
    await this.request(`/sessions/${id}`, { method: "DELETE" });
  }
}
