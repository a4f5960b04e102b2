/** End-to-end tests against a live server.
 *
 * A real server process is started on a free port with the small bank
 * from the fixtures directory, and the client, state machine, and mask
 * encoder are driven against it exactly the way the app drives them:
 * submit, poll, fetch the result, cancel, and hit every rejection path
 * the API defines.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import net from "node:net";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError, type FetchLike } from "../src/api.js";
import { base64ToBytes, bytesToBase64 } from "../src/b64.js";
import {
  BACKGROUND,
  FOREGROUND,
  maskToPgm,
  rasterize,
  type StrokeDocument,
} from "../src/mask.js";
import { decodePgm, encodePpm, type RgbImage } from "../src/pnm.js";
import {
  initialState,
  transition,
  type JobParams,
  type UiState,
} from "../src/state.js";

const BANK_PATH = fileURLToPath(
  new URL("./fixtures/bank.json", import.meta.url),
);

let server: ChildProcessWithoutNullStreams;
let serverLog = "";
let baseUrl = "";
let client: ApiClient;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
    probe.on("error", reject);
  });
}

/** Two-tone test image: left half dark blue, right half orange. */
function twoToneImage(width: number, height: number): RgbImage {
  const pixels = new Uint8Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const left = x < width / 2;
      const i = 3 * (y * width + x);
      pixels[i] = left ? 50 : 210;
      pixels[i + 1] = left ? 70 : 130;
      pixels[i + 2] = left ? 180 : 55;
    }
  }
  return { width, height, pixels };
}

/** Vertical fg stroke near the left edge, bg stroke near the right. */
function twoSidedStrokes(width: number, height: number): StrokeDocument {
  return {
    width,
    height,
    strokes: [
      { tag: "fg", radius: 1.5, points: [[3, 2], [3, height - 3]] },
      {
        tag: "bg",
        radius: 1.5,
        points: [[width - 4, 2], [width - 4, height - 3]],
      },
    ],
  };
}

function payloadFor(
  image: RgbImage,
  doc: StrokeDocument,
  params: JobParams,
): { image: string; strokes: string; lambda: number; passes: number | "auto" } {
  return {
    image: bytesToBase64(encodePpm(image)),
    strokes: bytesToBase64(maskToPgm(rasterize(doc))),
    lambda: params.priorWeight,
    passes: params.passes,
  };
}

/** Submit through the state machine the way the app does. */
async function submitViaMachine(
  image: RgbImage,
  doc: StrokeDocument,
  params: JobParams,
): Promise<UiState> {
  let state = transition(initialState(doc), { type: "submit", params });
  if (state.kind !== "submitting") {
    return state;
  }
  try {
    const jobId = await client.submitJob(payloadFor(image, doc, params));
    return transition(state, { type: "submitAccepted", jobId });
  } catch (exc) {
    if (exc instanceof ApiError) {
      return transition(state, {
        type: "submitRejected",
        message: exc.detail,
        queueFull: exc.isQueueFull,
      });
    }
    throw exc;
  }
}

/** Poll to a terminal state, feeding every report through the machine. */
async function driveToTerminal(
  state: UiState,
  intervalMs = 100,
): Promise<UiState> {
  while (
    state.kind === "polling" ||
    state.kind === "cancelling" ||
    state.kind === "fetchingResult"
  ) {
    if (state.kind === "fetchingResult") {
      const result = await client.jobResult(state.jobId);
      state = transition(state, { type: "resultReady", result });
      continue;
    }
    const report = await client.jobStatus(state.jobId);
    state = transition(state, {
      type: "statusReport",
      status: report.status,
      passCount: report.pass,
      lowerBound: report.lower_bound,
    });
    if (state.kind === "polling" || state.kind === "cancelling") {
      await sleep(intervalMs);
    }
  }
  return state;
}

async function waitForStatus(
  jobId: string,
  wanted: string,
  timeoutMs = 60_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const report = await client.jobStatus(jobId);
    if (report.status === wanted) {
      return;
    }
    if (Date.now() > deadline) {
      throw new Error(
        `job ${jobId} is ${report.status}, wanted ${wanted}`,
      );
    }
    await sleep(100);
  }
}

async function rawPost(body: unknown): Promise<Response> {
  return fetch(`${baseUrl}/jobs`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

beforeAll(async () => {
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    [
      "-m", "curvemrf.cli", "serve",
      "--bank", BANK_PATH,
      "--host", "127.0.0.1",
      "--port", String(port),
      "--queue-depth", "2",
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  server.stderr.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  client = new ApiClient(baseUrl);
  const deadline = Date.now() + 90_000;
  for (;;) {
    if (server.exitCode !== null) {
      throw new Error(`server exited early:\n${serverLog}`);
    }
    try {
      await client.bank();
      break;
    } catch {
      if (Date.now() > deadline) {
        throw new Error(`server never became ready:\n${serverLog}`);
      }
      await sleep(250);
    }
  }
});

afterAll(async () => {
  if (server !== undefined && server.exitCode === null) {
    server.kill("SIGTERM");
    const gone = new Promise<void>((resolve) => {
      server.once("exit", () => resolve());
    });
    await Promise.race([gone, sleep(5000)]);
    if (server.exitCode === null) {
      server.kill("SIGKILL");
    }
  }
});

describe("bank endpoint", () => {
  it("serves the bank the server was started with", async () => {
    const bank = await client.bank();
    expect(bank.side).toBe(4);
    expect(Array.isArray(bank.patterns)).toBe(true);
    expect((bank.patterns as unknown[]).length).toBe(3);
  });
});

describe("client-side validation", () => {
  it("blocks one-sided strokes before any request is sent", async () => {
    let requests = 0;
    const counting: FetchLike = (input, init) => {
      requests++;
      return fetch(input, init);
    };
    const countingClient = new ApiClient(baseUrl, counting);
    const doc: StrokeDocument = {
      width: 16,
      height: 16,
      strokes: [{ tag: "fg", radius: 1.5, points: [[3, 3], [3, 12]] }],
    };
    let state = transition(initialState(doc), {
      type: "submit",
      params: { priorWeight: 1, passes: 10 },
    });
    expect(state.kind).toBe("editing");
    if (state.kind === "editing") {
      expect(state.error).toMatch(/foreground and background/);
    }
    // The machine never reached submitting, so the client was never used.
    expect(requests).toBe(0);
    void countingClient;
  });
});

describe("job lifecycle", () => {
  it("runs a two-sided job to done and honors every seed", async () => {
    const image = twoToneImage(16, 16);
    const doc = twoSidedStrokes(16, 16);
    const params: JobParams = { priorWeight: 0.8, passes: 40 };

    let state = await submitViaMachine(image, doc, params);
    expect(state.kind).toBe("polling");
    state = await driveToTerminal(state);
    expect(state.kind).toBe("done");
    if (state.kind !== "done") {
      return;
    }

    expect(state.passCount).toBe(40);
    expect(state.bounds.length).toBeGreaterThan(0);
    for (let i = 1; i < state.bounds.length; i++) {
      expect(state.bounds[i]).toBeGreaterThanOrEqual(
        state.bounds[i - 1] - 1e-9,
      );
    }

    const result = state.result;
    expect(Number.isFinite(result.energy)).toBe(true);
    expect(Number.isFinite(result.lower_bound)).toBe(true);
    expect(result.energy).toBeGreaterThanOrEqual(result.lower_bound - 1e-6);

    const labeling = decodePgm(base64ToBytes(result.labeling));
    expect(labeling.width).toBe(16);
    expect(labeling.height).toBe(16);
    expect(labeling.pixels.every((v) => v === 0 || v === 255)).toBe(true);

    const marginals = decodePgm(base64ToBytes(result.min_marginal_map));
    expect(marginals.width).toBe(16);
    expect(marginals.height).toBe(16);

    // Stroked pixels are hard constraints, so the labeling must agree
    // with the mask everywhere a stroke painted it.
    const mask = rasterize(doc);
    for (let i = 0; i < mask.tags.length; i++) {
      if (mask.tags[i] === FOREGROUND) {
        expect(labeling.pixels[i]).toBe(255);
      } else if (mask.tags[i] === BACKGROUND) {
        expect(labeling.pixels[i]).toBe(0);
      }
    }
  });

  it("supports the auto pass budget end to end", async () => {
    const image = twoToneImage(8, 8);
    const doc = twoSidedStrokes(8, 8);
    let state = await submitViaMachine(image, doc, {
      priorWeight: 1.0,
      passes: "auto",
    });
    expect(state.kind).toBe("polling");
    state = await driveToTerminal(state);
    expect(state.kind).toBe("done");
    if (state.kind === "done") {
      expect(Number.isFinite(state.result.energy)).toBe(true);
      expect(state.passCount).toBeGreaterThan(0);
    }
  });
});

describe("cancellation", () => {
  it("cancels a running job and locks its terminal state", async () => {
    const image = twoToneImage(96, 96);
    const doc = twoSidedStrokes(96, 96);
    let state = await submitViaMachine(image, doc, {
      priorWeight: 1.0,
      passes: 2000,
    });
    expect(state.kind).toBe("polling");
    if (state.kind !== "polling") {
      return;
    }
    const jobId = state.jobId;
    await waitForStatus(jobId, "running");

    state = transition(state, { type: "cancelRequested" });
    expect(state.kind).toBe("cancelling");
    const reply = await client.cancelJob(jobId);
    expect(reply.id).toBe(jobId);
    expect(["running", "cancelled"]).toContain(reply.status);

    state = await driveToTerminal(state);
    expect(state.kind).toBe("cancelled");

    await expect(client.jobResult(jobId)).rejects.toMatchObject({
      status: 409,
    });
    await expect(client.cancelJob(jobId)).rejects.toMatchObject({
      status: 409,
    });
    const report = await client.jobStatus(jobId);
    expect(report.status).toBe("cancelled");
  });

  it("cancels a queued job immediately", async () => {
    const blockerImage = twoToneImage(96, 96);
    const blockerDoc = twoSidedStrokes(96, 96);
    const blocker = await submitViaMachine(blockerImage, blockerDoc, {
      priorWeight: 1.0,
      passes: 2000,
    });
    expect(blocker.kind).toBe("polling");
    if (blocker.kind !== "polling") {
      return;
    }
    await waitForStatus(blocker.jobId, "running");

    const queued = await client.submitJob(
      payloadFor(twoToneImage(16, 16), twoSidedStrokes(16, 16), {
        priorWeight: 1.0,
        passes: 5,
      }),
    );
    const reply = await client.cancelJob(queued);
    expect(reply.status).toBe("cancelled");
    const report = await client.jobStatus(queued);
    expect(report.status).toBe("cancelled");

    await client.cancelJob(blocker.jobId);
    await waitForStatus(blocker.jobId, "cancelled");
  });
});

describe("queue depth", () => {
  it("rejects submissions once the queue is full", async () => {
    const bigImage = twoToneImage(96, 96);
    const bigDoc = twoSidedStrokes(96, 96);
    const small = () =>
      payloadFor(twoToneImage(16, 16), twoSidedStrokes(16, 16), {
        priorWeight: 1.0,
        passes: 5,
      });

    const runningJob = await submitViaMachine(bigImage, bigDoc, {
      priorWeight: 1.0,
      passes: 2000,
    });
    expect(runningJob.kind).toBe("polling");
    if (runningJob.kind !== "polling") {
      return;
    }
    await waitForStatus(runningJob.jobId, "running");

    const queuedA = await client.submitJob(small());
    const queuedB = await client.submitJob(small());

    const rejected = await submitViaMachine(
      twoToneImage(16, 16),
      twoSidedStrokes(16, 16),
      { priorWeight: 1.0, passes: 5 },
    );
    expect(rejected).toMatchObject({ kind: "failed", reason: "queue-full" });

    for (const id of [queuedA, queuedB, runningJob.jobId]) {
      await client.cancelJob(id);
    }
    await waitForStatus(runningJob.jobId, "cancelled");
  });
});

describe("server-side rejection", () => {
  const goodPayload = () =>
    payloadFor(twoToneImage(8, 8), twoSidedStrokes(8, 8), {
      priorWeight: 1.0,
      passes: 5,
    });

  it("rejects invalid base64", async () => {
    const response = await rawPost({ ...goodPayload(), image: "!!!" });
    expect(response.status).toBe(400);
  });

  it("rejects mismatched image and stroke dimensions", async () => {
    const strokes = bytesToBase64(
      maskToPgm(rasterize(twoSidedStrokes(9, 9))),
    );
    const response = await rawPost({ ...goodPayload(), strokes });
    expect(response.status).toBe(400);
    const body = (await response.json()) as { detail: string };
    expect(body.detail).toMatch(/do not match/);
  });

  it("rejects one-sided masks server-side too", async () => {
    const oneSided: StrokeDocument = {
      width: 8,
      height: 8,
      strokes: [{ tag: "fg", radius: 1.5, points: [[3, 3]] }],
    };
    const response = await rawPost({
      ...goodPayload(),
      strokes: bytesToBase64(maskToPgm(rasterize(oneSided))),
    });
    expect(response.status).toBe(400);
    const body = (await response.json()) as { detail: string };
    expect(body.detail).toMatch(/foreground and background/);
  });

  it("rejects bad smoothing weights", async () => {
    for (const wrong of [0, -2, "strong", true, null]) {
      const response = await rawPost({ ...goodPayload(), lambda: wrong });
      expect(response.status).toBe(400);
    }
  });

  it("rejects bad pass budgets", async () => {
    for (const wrong of [0, -5, 2001, 1.5, "fast", false]) {
      const response = await rawPost({ ...goodPayload(), passes: wrong });
      expect(response.status).toBe(400);
    }
  });

  it("rejects oversized images", async () => {
    const image = twoToneImage(200, 20);
    const response = await rawPost({
      ...goodPayload(),
      image: bytesToBase64(encodePpm(image)),
      strokes: bytesToBase64(maskToPgm(rasterize(twoSidedStrokes(200, 20)))),
    });
    expect(response.status).toBe(400);
    const body = (await response.json()) as { detail: string };
    expect(body.detail).toMatch(/160/);
  });

  it("returns 404 for unknown job ids", async () => {
    await expect(client.jobStatus("nope")).rejects.toMatchObject({
      status: 404,
    });
    await expect(client.jobResult("nope")).rejects.toMatchObject({
      status: 404,
    });
    await expect(client.cancelJob("nope")).rejects.toMatchObject({
      status: 404,
    });
  });
});
