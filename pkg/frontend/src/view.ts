/** View state and request lifecycle: one in-flight recognition, newest wins. */

import type { GraphPayload, Prediction, RecognizeResponse, Stroke } from "./api.js";

export type Status = "idle" | "requesting" | "error";

export interface ViewState {
  predictions: Prediction[];
  graph: GraphPayload | null;
  latencyMs: number | null;
  status: Status;
  error: string | null;
}

export type RecognizeFn = (
  strokes: Stroke[],
  topk: number,
  signal: AbortSignal,
) => Promise<RecognizeResponse>;

const IDLE: ViewState = {
  predictions: [],
  graph: null,
  latencyMs: null,
  status: "idle",
  error: null,
};

export class RecognitionController {
  state: ViewState = { ...IDLE };
  private seq = 0;
  private inflight: AbortController | null = null;
  private lastStrokes: Stroke[] = [];

  constructor(
    private readonly recognizeFn: RecognizeFn,
    private readonly topk = 5,
    private readonly onChange: (s: ViewState) => void = () => {},
  ) {}

  private update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  /** Send the committed strokes; any response to an older request is discarded. */
  async submit(strokes: Stroke[]): Promise<void> {
    if (strokes.length === 0) return;
    this.lastStrokes = strokes;
    const ticket = ++this.seq;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.update({ status: "requesting", error: null });
    try {
      const res = await this.recognizeFn(strokes, this.topk, controller.signal);
      if (ticket !== this.seq) return; // stale response, a newer request won
      this.update({
        predictions: res.predictions,
        graph: res.graph,
        latencyMs: res.latency_ms,
        status: "idle",
      });
    } catch (err) {
      if (ticket !== this.seq) return;
      if (err instanceof DOMException && err.name === "AbortError") return;
      this.update({ status: "error", error: err instanceof Error ? err.message : String(err) });
    }
  }

  /** Re-send the strokes of the failed request. */
  retry(): Promise<void> {
    return this.submit(this.lastStrokes);
  }

  clear(): void {
    this.seq += 1; // invalidates any response still in flight
    this.inflight?.abort();
    this.inflight = null;
    this.lastStrokes = [];
    this.state = { ...IDLE };
    this.onChange(this.state);
  }
}
