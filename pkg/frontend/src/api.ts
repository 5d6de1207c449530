/** Client for the recognition service endpoints. */

export type Point = [number, number];
export type Stroke = Point[];

export interface Prediction {
  label: string;
  score: number;
}

export interface GraphPayload {
  nodes: Point[];
  edges: [number, number][];
}

export interface RecognizeResponse {
  predictions: Prediction[];
  graph: GraphPayload;
  latency_ms: number;
}

export interface HealthResponse {
  status: string;
  checkpoint_id: number;
  num_classes: number;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function parseError(res: Response): Promise<never> {
  let message = `HTTP ${res.status}`;
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  throw new ApiError(message, res.status);
}

export async function recognize(
  base: string,
  strokes: Stroke[],
  topk: number,
  signal?: AbortSignal,
): Promise<RecognizeResponse> {
  const res = await fetch(`${base}/api/recognize`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ strokes, topk }),
    signal,
  });
  if (!res.ok) await parseError(res);
  return (await res.json()) as RecognizeResponse;
}

export async function health(base: string): Promise<HealthResponse> {
  const res = await fetch(`${base}/api/health`);
  if (!res.ok) await parseError(res);
  return (await res.json()) as HealthResponse;
}
