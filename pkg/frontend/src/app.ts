/** Browser glue: painting, sliders, submission, polling, rendering.
 *
 * All lifecycle decisions go through the state machine in state.ts;
 * this module only performs the side effects each transition calls for
 * (HTTP requests, the 1 Hz poll loop, canvas redraws).  The poll timer
 * is torn down on navigation and whenever the machine leaves the
 * polling states, and only one job is ever in flight per tab.
 */

import { ApiClient, ApiError } from "./api.js";
import { base64ToBytes, bytesToBase64 } from "./b64.js";
import {
  BACKGROUND,
  FOREGROUND,
  maskToPgm,
  rasterize,
  type Stroke,
  type StrokeDocument,
  type StrokeTag,
} from "./mask.js";
import { decodePgm, encodePpm, type RgbImage } from "./pnm.js";
import {
  applyContour,
  composeOverlay,
  contourMask,
  rgbToRgba,
  sparklinePath,
} from "./render.js";
import {
  describeState,
  initialState,
  POLL_INTERVAL_MS,
  transition,
  type JobParams,
  type UiEvent,
  type UiState,
} from "./state.js";

/** Largest image side the server accepts; uploads are scaled to fit. */
export const MAX_SIDE = 160;

export const LAMBDA_PRESETS = [0.15, 0.3, 0.5, 1.0, 2.0, 3.0];
export const PASSES_PRESETS = [2, 10, 50, 100, 300, 1000];

const SPARK_WIDTH = 180;
const SPARK_HEIGHT = 40;

/** Deterministic two-tone test card so the UI works without an upload. */
export function makeDemoImage(width = 96, height = 96): RgbImage {
  const pixels = new Uint8Array(width * height * 3);
  const cx = width / 2;
  const cy = height / 2;
  const r = Math.min(width, height) * 0.32;
  let seed = 0x2545f491;
  const noise = () => {
    seed = (seed * 1103515245 + 12345) & 0x7fffffff;
    return (seed % 17) - 8;
  };
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const inside = (x - cx) ** 2 + (y - cy) ** 2 <= r * r;
      const base = inside ? [205, 120, 60] : [60, 90, 175];
      const i = 3 * (y * width + x);
      for (let c = 0; c < 3; c++) {
        const v = base[c] + noise();
        pixels[i + c] = v < 0 ? 0 : v > 255 ? 255 : v;
      }
    }
  }
  return { width, height, pixels };
}

interface AppElements {
  paintCanvas: HTMLCanvasElement;
  statusLine: HTMLElement;
  passCounter: HTMLElement;
  sparkline: SVGPathElement;
  bankInfo: HTMLElement;
  brushFg: HTMLInputElement;
  brushBg: HTMLInputElement;
  brushRadius: HTMLInputElement;
  lambdaSlider: HTMLInputElement;
  lambdaLabel: HTMLElement;
  passesSlider: HTMLInputElement;
  passesLabel: HTMLElement;
  passesAuto: HTMLInputElement;
  segmentButton: HTMLButtonElement;
  cancelButton: HTMLButtonElement;
  resetButton: HTMLButtonElement;
  undoButton: HTMLButtonElement;
  clearButton: HTMLButtonElement;
  fileInput: HTMLInputElement;
  demoButton: HTMLButtonElement;
}

function byId<T>(doc: Document, id: string): T {
  const el = doc.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

export class App {
  private state: UiState;
  private image: RgbImage;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private activeStroke: Stroke | null = null;
  private zoom = 3;

  constructor(
    private readonly els: AppElements,
    private readonly client: ApiClient,
  ) {
    this.image = makeDemoImage();
    this.state = initialState({
      width: this.image.width,
      height: this.image.height,
      strokes: [],
    });
  }

  start(): void {
    this.wireControls();
    this.render();
    void this.loadBankInfo();
  }

  /** Stop timers; called on pagehide so no poll outlives the page. */
  dispose(): void {
    this.stopPolling();
  }

  private dispatch(event: UiEvent): void {
    const prev = this.state;
    this.state = transition(prev, event);
    this.react(prev, this.state);
    this.render();
  }

  private react(prev: UiState, next: UiState): void {
    if (next.kind === "submitting" && prev.kind !== "submitting") {
      void this.performSubmit(next.doc, next.params);
    }
    if (next.kind === "polling" && prev.kind !== "polling" && prev.kind !== "cancelling") {
      this.startPolling();
    }
    if (next.kind === "cancelling" && prev.kind === "polling") {
      void this.performCancel(next.jobId);
    }
    if (next.kind === "fetchingResult" && prev.kind !== "fetchingResult") {
      void this.performFetchResult(next.jobId);
    }
    const needsTimer = next.kind === "polling" || next.kind === "cancelling";
    if (!needsTimer) {
      this.stopPolling();
    }
  }

  private get doc(): StrokeDocument {
    return this.state.doc;
  }

  private params(): JobParams {
    const lambdaIndex = Number(this.els.lambdaSlider.value);
    const passesIndex = Number(this.els.passesSlider.value);
    return {
      priorWeight: LAMBDA_PRESETS[lambdaIndex],
      passes: this.els.passesAuto.checked ? "auto" : PASSES_PRESETS[passesIndex],
    };
  }

  private async performSubmit(
    doc: StrokeDocument,
    params: JobParams,
  ): Promise<void> {
    try {
      const jobId = await this.client.submitJob({
        image: bytesToBase64(encodePpm(this.image)),
        strokes: bytesToBase64(maskToPgm(rasterize(doc))),
        lambda: params.priorWeight,
        passes: params.passes,
      });
      this.dispatch({ type: "submitAccepted", jobId });
    } catch (exc) {
      if (exc instanceof ApiError) {
        this.dispatch({
          type: "submitRejected",
          message: exc.detail,
          queueFull: exc.isQueueFull,
        });
      } else {
        this.dispatch({ type: "networkError", message: String(exc) });
      }
    }
  }

  private startPolling(): void {
    this.stopPolling();
    const tick = async () => {
      const current = this.state;
      if (current.kind !== "polling" && current.kind !== "cancelling") {
        return;
      }
      try {
        const report = await this.client.jobStatus(current.jobId);
        this.dispatch({
          type: "statusReport",
          status: report.status,
          passCount: report.pass,
          lowerBound: report.lower_bound,
        });
      } catch (exc) {
        this.dispatch({ type: "networkError", message: String(exc) });
        return;
      }
      if (this.state.kind === "polling" || this.state.kind === "cancelling") {
        this.pollTimer = setTimeout(() => void tick(), POLL_INTERVAL_MS);
      }
    };
    this.pollTimer = setTimeout(() => void tick(), POLL_INTERVAL_MS);
  }

  private stopPolling(): void {
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
      this.pollTimer = null;
    }
  }

  private async performCancel(jobId: string): Promise<void> {
    try {
      await this.client.cancelJob(jobId);
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 409) {
        this.dispatch({ type: "cancelDenied" });
      } else {
        this.dispatch({ type: "networkError", message: String(exc) });
      }
    }
  }

  private async performFetchResult(jobId: string): Promise<void> {
    try {
      const result = await this.client.jobResult(jobId);
      this.dispatch({ type: "resultReady", result });
    } catch (exc) {
      this.dispatch({ type: "networkError", message: String(exc) });
    }
  }

  private async loadBankInfo(): Promise<void> {
    try {
      const bank = await this.client.bank();
      const patterns = Array.isArray(bank.patterns) ? bank.patterns.length : 0;
      this.els.bankInfo.textContent =
        `bank: ${patterns} patterns, window side ${bank.side}`;
    } catch {
      this.els.bankInfo.textContent = "bank: unavailable";
    }
  }

  private replaceImage(image: RgbImage): void {
    this.image = image;
    this.dispatch({
      type: "edit",
      doc: { width: image.width, height: image.height, strokes: [] },
    });
  }

  private wireControls(): void {
    const els = this.els;
    els.segmentButton.addEventListener("click", () => {
      this.dispatch({ type: "submit", params: this.params() });
    });
    els.cancelButton.addEventListener("click", () => {
      this.dispatch({ type: "cancelRequested" });
    });
    els.resetButton.addEventListener("click", () => {
      this.dispatch({ type: "reset" });
    });
    els.undoButton.addEventListener("click", () => {
      const doc = this.doc;
      if (this.state.kind === "editing" && doc.strokes.length > 0) {
        this.dispatch({
          type: "edit",
          doc: { ...doc, strokes: doc.strokes.slice(0, -1) },
        });
      }
    });
    els.clearButton.addEventListener("click", () => {
      if (this.state.kind === "editing") {
        this.dispatch({ type: "edit", doc: { ...this.doc, strokes: [] } });
      }
    });
    els.demoButton.addEventListener("click", () => {
      if (this.state.kind === "editing") {
        this.replaceImage(makeDemoImage());
      }
    });
    els.fileInput.addEventListener("change", () => {
      const file = els.fileInput.files?.[0];
      if (file !== undefined && this.state.kind === "editing") {
        void this.loadImageFile(file);
      }
    });
    const updateLabels = () => this.renderSliderLabels();
    els.lambdaSlider.addEventListener("input", updateLabels);
    els.passesSlider.addEventListener("input", updateLabels);
    els.passesAuto.addEventListener("change", updateLabels);
    this.wirePainting();
    window.addEventListener("pagehide", () => this.dispose());
  }

  private async loadImageFile(file: File): Promise<void> {
    const bitmap = await createImageBitmap(file);
    const scale = Math.min(1, MAX_SIDE / Math.max(bitmap.width, bitmap.height));
    const width = Math.max(1, Math.round(bitmap.width * scale));
    const height = Math.max(1, Math.round(bitmap.height * scale));
    const scratch = document.createElement("canvas");
    scratch.width = width;
    scratch.height = height;
    const ctx = scratch.getContext("2d");
    if (ctx === null) {
      return;
    }
    ctx.drawImage(bitmap, 0, 0, width, height);
    const data = ctx.getImageData(0, 0, width, height).data;
    const pixels = new Uint8Array(width * height * 3);
    for (let i = 0; i < width * height; i++) {
      pixels[3 * i] = data[4 * i];
      pixels[3 * i + 1] = data[4 * i + 1];
      pixels[3 * i + 2] = data[4 * i + 2];
    }
    this.replaceImage({ width, height, pixels });
  }

  private brush(): { tag: StrokeTag; radius: number } {
    return {
      tag: this.els.brushBg.checked ? "bg" : "fg",
      radius: Number(this.els.brushRadius.value),
    };
  }

  private canvasPoint(event: PointerEvent): [number, number] {
    const rect = this.els.paintCanvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * this.image.width;
    const y = ((event.clientY - rect.top) / rect.height) * this.image.height;
    return [x, y];
  }

  private wirePainting(): void {
    const canvas = this.els.paintCanvas;
    canvas.addEventListener("pointerdown", (event) => {
      if (this.state.kind !== "editing") {
        return;
      }
      canvas.setPointerCapture(event.pointerId);
      const { tag, radius } = this.brush();
      this.activeStroke = { tag, radius, points: [this.canvasPoint(event)] };
      this.render();
    });
    canvas.addEventListener("pointermove", (event) => {
      const stroke = this.activeStroke;
      if (stroke === null) {
        return;
      }
      const point = this.canvasPoint(event);
      const last = stroke.points[stroke.points.length - 1];
      const dx = point[0] - last[0];
      const dy = point[1] - last[1];
      if (dx * dx + dy * dy >= 0.25) {
        stroke.points.push(point);
        this.render();
      }
    });
    const finish = () => {
      const stroke = this.activeStroke;
      if (stroke === null) {
        return;
      }
      this.activeStroke = null;
      this.dispatch({
        type: "edit",
        doc: { ...this.doc, strokes: [...this.doc.strokes, stroke] },
      });
    };
    canvas.addEventListener("pointerup", finish);
    canvas.addEventListener("pointercancel", finish);
  }

  private renderSliderLabels(): void {
    const { priorWeight, passes } = this.params();
    this.els.lambdaLabel.textContent = `smoothing ${priorWeight}`;
    this.els.passesLabel.textContent =
      passes === "auto" ? "passes: auto" : `passes: ${passes}`;
    this.els.passesSlider.disabled = this.els.passesAuto.checked;
  }

  private render(): void {
    const state = this.state;
    const els = this.els;
    els.statusLine.textContent = describeState(state);
    const passCount =
      state.kind === "polling" ||
      state.kind === "cancelling" ||
      state.kind === "fetchingResult" ||
      state.kind === "done"
        ? state.passCount
        : 0;
    els.passCounter.textContent = `pass ${passCount}`;
    const bounds = "bounds" in state ? state.bounds : [];
    els.sparkline.setAttribute(
      "d",
      sparklinePath(bounds, SPARK_WIDTH, SPARK_HEIGHT),
    );
    const editing = state.kind === "editing";
    els.segmentButton.disabled = !editing;
    els.cancelButton.disabled = state.kind !== "polling";
    els.resetButton.disabled =
      state.kind !== "done" && state.kind !== "failed" && state.kind !== "cancelled";
    els.undoButton.disabled = !editing || this.doc.strokes.length === 0;
    els.clearButton.disabled = !editing || this.doc.strokes.length === 0;
    els.fileInput.disabled = !editing;
    els.demoButton.disabled = !editing;
    this.renderSliderLabels();
    this.renderCanvas();
  }

  private renderCanvas(): void {
    const canvas = this.els.paintCanvas;
    const { width, height } = this.image;
    canvas.width = width;
    canvas.height = height;
    canvas.style.width = `${width * this.zoom}px`;
    canvas.style.height = `${height * this.zoom}px`;
    const ctx = canvas.getContext("2d");
    if (ctx === null) {
      return;
    }
    let rgba: Uint8ClampedArray<ArrayBuffer>;
    if (this.state.kind === "done") {
      const labels = decodePgm(base64ToBytes(this.state.result.labeling));
      const marginals = decodePgm(
        base64ToBytes(this.state.result.min_marginal_map),
      );
      rgba = composeOverlay(this.image, labels);
      applyContour(rgba, contourMask(marginals));
    } else {
      rgba = rgbToRgba(this.image);
      const strokes = this.activeStroke === null
        ? this.doc.strokes
        : [...this.doc.strokes, this.activeStroke];
      const mask = rasterize({ width, height, strokes });
      for (let i = 0; i < mask.tags.length; i++) {
        if (mask.tags[i] === FOREGROUND) {
          rgba[4 * i] = Math.round((rgba[4 * i] + 255) / 2);
          rgba[4 * i + 1] = Math.round(rgba[4 * i + 1] / 2);
          rgba[4 * i + 2] = Math.round(rgba[4 * i + 2] / 2);
        } else if (mask.tags[i] === BACKGROUND) {
          rgba[4 * i] = Math.round(rgba[4 * i] / 2);
          rgba[4 * i + 1] = Math.round(rgba[4 * i + 1] / 2);
          rgba[4 * i + 2] = Math.round((rgba[4 * i + 2] + 255) / 2);
        }
      }
    }
    ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
  }
}

export function setupApp(doc: Document, client?: ApiClient): App {
  const els: AppElements = {
    paintCanvas: byId(doc, "paint"),
    statusLine: byId(doc, "status"),
    passCounter: byId(doc, "passes"),
    sparkline: byId(doc, "sparkline"),
    bankInfo: byId(doc, "bank-info"),
    brushFg: byId(doc, "brush-fg"),
    brushBg: byId(doc, "brush-bg"),
    brushRadius: byId(doc, "brush-radius"),
    lambdaSlider: byId(doc, "lambda"),
    lambdaLabel: byId(doc, "lambda-label"),
    passesSlider: byId(doc, "passes-slider"),
    passesLabel: byId(doc, "passes-label"),
    passesAuto: byId(doc, "passes-auto"),
    segmentButton: byId(doc, "segment"),
    cancelButton: byId(doc, "cancel"),
    resetButton: byId(doc, "reset"),
    undoButton: byId(doc, "undo"),
    clearButton: byId(doc, "clear"),
    fileInput: byId(doc, "file"),
    demoButton: byId(doc, "demo"),
  };
  const app = new App(els, client ?? new ApiClient(""));
  app.start();
  return app;
}
