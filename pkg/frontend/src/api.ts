// Typed client for the annotation service. The service is the single source
// of truth: every mutation returns the full session state, which the UI
// renders verbatim.

export type LanePoints = [number, number][];

export interface ScenePayload {
  id: string;
  height: number;
  width: number;
  resolution: number;
  k_grid: number;
  raster_pgm_base64: string;
  ground_truth?: LanePoints[];
}

export interface SessionState {
  session: string;
  scene: string;
  clicks: number;
  extracted: boolean;
  lanes: LanePoints[];
  provenance?: { bin: [number, number]; k: number; steps: number; stop: string }[];
}

export interface Score {
  topology_deviation: number;
  precision: Record<string, number>;
  recall: Record<string, number>;
  clicks: number;
  lane_errors: { missed_gt: number[]; hallucinated_pred: number[]; total: number };
}

export interface LogEntry {
  ts: number;
  session: string;
  action: string;
  payload: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, init);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export function createApi(base: string) {
  const json = { "Content-Type": "application/json" };
  return {
    health: () => request<{ status: string; scenes: number }>(base, "/health"),
    listScenes: () => request<{ scenes: string[] }>(base, "/scenes"),
    getScene: (id: string, reveal = false) =>
      request<ScenePayload>(base, `/scenes/${id}${reveal ? "?reveal=true" : ""}`),
    createSession: (sceneId: string) =>
      request<SessionState>(base, "/sessions", {
        method: "POST",
        headers: json,
        body: JSON.stringify({ scene_id: sceneId }),
      }),
    getSession: (id: string) => request<SessionState>(base, `/sessions/${id}`),
    extract: (id: string) =>
      request<SessionState>(base, `/sessions/${id}/extract`, { method: "POST" }),
    trace: (id: string, bin: [number, number]) =>
      request<SessionState>(base, `/sessions/${id}/trace`, {
        method: "POST",
        headers: json,
        body: JSON.stringify({ bin }),
      }),
    deleteLane: (id: string, index: number) =>
      request<SessionState>(base, `/sessions/${id}/lanes/${index}`, { method: "DELETE" }),
    score: (id: string) => request<Score>(base, `/sessions/${id}/score`),
    log: (id: string) => request<{ actions: LogEntry[] }>(base, `/sessions/${id}/log`),
  };
}

export type Api = ReturnType<typeof createApi>;
