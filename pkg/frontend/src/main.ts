/** DOM wiring for the drawing pad: capture, recognize on pen-up, overlay. */

import { health, recognize } from "./api.js";
import { formatPredictions, renderOverlay } from "./overlay.js";
import { StrokeBuffer } from "./strokes.js";
import { RecognitionController, ViewState } from "./view.js";

const BASE = "";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup(): void {
  const canvas = el<HTMLCanvasElement>("pad");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  const predictionList = el<HTMLOListElement>("predictions");
  const banner = el<HTMLDivElement>("banner");
  const retryButton = el<HTMLButtonElement>("retry");
  const clearButton = el<HTMLButtonElement>("clear");
  const statusLine = el<HTMLSpanElement>("status");

  const buffer = new StrokeBuffer();
  const controller = new RecognitionController(
    (strokes, topk, signal) => recognize(BASE, strokes, topk, signal),
    5,
    render,
  );

  function drawStrokes(): void {
    ctx!.clearRect(0, 0, canvas.width, canvas.height);
    ctx!.strokeStyle = "#222";
    ctx!.lineWidth = 3;
    ctx!.lineCap = "round";
    ctx!.lineJoin = "round";
    for (const stroke of [...buffer.strokes, buffer.activePoints()]) {
      if (stroke.length === 0) continue;
      ctx!.beginPath();
      ctx!.moveTo(stroke[0][0], stroke[0][1]);
      for (const [x, y] of stroke.slice(1)) ctx!.lineTo(x, y);
      ctx!.stroke();
    }
  }

  function render(state: ViewState = controller.state): void {
    drawStrokes();
    if (state.graph) {
      renderOverlay(ctx!, state.graph, canvas.width, canvas.height);
    }
    predictionList.replaceChildren(
      ...formatPredictions(state.predictions).map((row) => {
        const li = document.createElement("li");
        li.textContent = `${row.label}  ${row.percent}`;
        return li;
      }),
    );
    banner.hidden = state.status !== "error";
    banner.querySelector("span")!.textContent = state.error ?? "";
    statusLine.textContent =
      state.status === "requesting"
        ? "recognizing..."
        : state.latencyMs !== null
          ? `${state.latencyMs.toFixed(0)} ms`
          : "";
  }

  function pointerPosition(ev: PointerEvent): [number, number] {
    const rect = canvas.getBoundingClientRect();
    return [
      ((ev.clientX - rect.left) / rect.width) * canvas.width,
      ((ev.clientY - rect.top) / rect.height) * canvas.height,
    ];
  }

  canvas.addEventListener("pointerdown", (ev) => {
    canvas.setPointerCapture(ev.pointerId);
    buffer.start(...pointerPosition(ev));
    drawStrokes();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (buffer.move(...pointerPosition(ev))) drawStrokes();
  });
  canvas.addEventListener("pointerup", () => {
    if (buffer.end()) void controller.submit(buffer.strokes);
  });

  clearButton.addEventListener("click", () => {
    buffer.clear();
    controller.clear();
  });
  retryButton.addEventListener("click", () => void controller.retry());

  health(BASE)
    .then((h) => {
      statusLine.textContent = `model ready (${h.num_classes} classes)`;
    })
    .catch(() => {
      statusLine.textContent = "service unreachable";
    });

  render();
}

setup();
