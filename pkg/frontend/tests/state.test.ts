import { describe, expect, it } from "vitest";

import type { JobResultPayload } from "../src/api.js";
import type { StrokeDocument } from "../src/mask.js";
import {
  describeState,
  initialState,
  POLL_INTERVAL_MS,
  submitBlocker,
  transition,
  type UiEvent,
  type UiState,
} from "../src/state.js";

const TWO_SIDED: StrokeDocument = {
  width: 12,
  height: 12,
  strokes: [
    { tag: "fg", radius: 1.5, points: [[3, 3]] },
    { tag: "bg", radius: 1.5, points: [[9, 9]] },
  ],
};

const ONE_SIDED: StrokeDocument = {
  width: 12,
  height: 12,
  strokes: [{ tag: "fg", radius: 1.5, points: [[3, 3]] }],
};

const RESULT: JobResultPayload = {
  labeling: "",
  energy: 1.25,
  lower_bound: 1.0,
  min_marginal_map: "",
};

const PARAMS = { priorWeight: 1.0, passes: 10 as const };

function run(state: UiState, events: UiEvent[]): UiState {
  return events.reduce(transition, state);
}

describe("poll cadence", () => {
  it("polls at one hertz", () => {
    expect(POLL_INTERVAL_MS).toBe(1000);
  });
});

describe("submitBlocker", () => {
  it("accepts two-sided documents", () => {
    expect(submitBlocker(TWO_SIDED)).toBeNull();
  });

  it("names the problem for empty and one-sided documents", () => {
    expect(submitBlocker({ ...TWO_SIDED, strokes: [] })).toMatch(/strokes/);
    expect(submitBlocker(ONE_SIDED)).toMatch(/foreground and background/);
  });
});

describe("happy path", () => {
  it("walks editing to done and back", () => {
    let state = initialState(TWO_SIDED);
    state = transition(state, { type: "submit", params: PARAMS });
    expect(state.kind).toBe("submitting");

    state = transition(state, { type: "submitAccepted", jobId: "j1" });
    expect(state).toMatchObject({ kind: "polling", jobId: "j1", queued: true });

    state = transition(state, {
      type: "statusReport", status: "queued", passCount: 0, lowerBound: null,
    });
    expect(state).toMatchObject({ kind: "polling", queued: true });

    state = transition(state, {
      type: "statusReport", status: "running", passCount: 2, lowerBound: -4.0,
    });
    state = transition(state, {
      type: "statusReport", status: "running", passCount: 5, lowerBound: -3.5,
    });
    expect(state).toMatchObject({ kind: "polling", queued: false, passCount: 5 });

    state = transition(state, {
      type: "statusReport", status: "done", passCount: 6, lowerBound: -3.4,
    });
    expect(state.kind).toBe("fetchingResult");
    if (state.kind === "fetchingResult") {
      expect(state.bounds).toEqual([-4.0, -3.5, -3.4]);
      expect(state.passCount).toBe(6);
    }

    state = transition(state, { type: "resultReady", result: RESULT });
    expect(state).toMatchObject({ kind: "done", jobId: "j1" });

    state = transition(state, { type: "reset" });
    expect(state.kind).toBe("editing");
  });

  it("ignores null bounds while queued", () => {
    const state = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
      { type: "submitAccepted", jobId: "j" },
      { type: "statusReport", status: "queued", passCount: 0, lowerBound: null },
      { type: "statusReport", status: "running", passCount: 1, lowerBound: -9 },
    ]);
    expect(state).toMatchObject({ kind: "polling", bounds: [-9] });
  });
});

describe("validation gate", () => {
  it("keeps one-sided documents in editing with an error", () => {
    const state = transition(initialState(ONE_SIDED), {
      type: "submit",
      params: PARAMS,
    });
    expect(state.kind).toBe("editing");
    if (state.kind === "editing") {
      expect(state.error).toMatch(/foreground and background/);
    }
    expect(describeState(state)).toMatch(/cannot submit/);
  });

  it("clears the error on the next edit", () => {
    let state = transition(initialState(ONE_SIDED), {
      type: "submit",
      params: PARAMS,
    });
    state = transition(state, { type: "edit", doc: TWO_SIDED });
    expect(state).toMatchObject({ kind: "editing", error: null });
  });
});

describe("failure paths", () => {
  it("marks queue-full rejections distinctly", () => {
    const state = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
      { type: "submitRejected", message: "job queue is full", queueFull: true },
    ]);
    expect(state).toMatchObject({ kind: "failed", reason: "queue-full" });
    expect(describeState(state)).toMatch(/queue is full/);
    expect(transition(state, { type: "reset" }).kind).toBe("editing");
  });

  it("marks other rejections as rejected", () => {
    const state = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
      { type: "submitRejected", message: "bad dims", queueFull: false },
    ]);
    expect(state).toMatchObject({ kind: "failed", reason: "rejected" });
  });

  it("surfaces server-side job failures", () => {
    const state = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
      { type: "submitAccepted", jobId: "j" },
      { type: "statusReport", status: "failed", passCount: 1, lowerBound: null },
    ]);
    expect(state).toMatchObject({ kind: "failed", reason: "job" });
  });

  it("surfaces network errors from every in-flight state", () => {
    const toSubmitting: UiEvent[] = [{ type: "submit", params: PARAMS }];
    const toPolling: UiEvent[] = [
      ...toSubmitting,
      { type: "submitAccepted", jobId: "j" },
    ];
    const toCancelling: UiEvent[] = [...toPolling, { type: "cancelRequested" }];
    const toFetching: UiEvent[] = [
      ...toPolling,
      { type: "statusReport", status: "done", passCount: 1, lowerBound: null },
    ];
    for (const prefix of [toSubmitting, toPolling, toCancelling, toFetching]) {
      const state = run(initialState(TWO_SIDED), [
        ...prefix,
        { type: "networkError", message: "offline" },
      ]);
      expect(state).toMatchObject({ kind: "failed", reason: "network" });
    }
  });
});

describe("cancel paths", () => {
  const polling: UiEvent[] = [
    { type: "submit", params: PARAMS },
    { type: "submitAccepted", jobId: "j" },
    { type: "statusReport", status: "running", passCount: 3, lowerBound: -2 },
  ];

  it("cancels a running job", () => {
    const state = run(initialState(TWO_SIDED), [
      ...polling,
      { type: "cancelRequested" },
      { type: "statusReport", status: "cancelled", passCount: 3, lowerBound: null },
    ]);
    expect(state).toMatchObject({ kind: "cancelled", jobId: "j", bounds: [-2] });
    expect(transition(state, { type: "reset" }).kind).toBe("editing");
  });

  it("returns to polling when the cancel is denied", () => {
    const state = run(initialState(TWO_SIDED), [
      ...polling,
      { type: "cancelRequested" },
      { type: "cancelDenied" },
    ]);
    expect(state).toMatchObject({ kind: "polling", passCount: 3 });
  });

  it("still lands on done if the job finished despite the cancel", () => {
    const state = run(initialState(TWO_SIDED), [
      ...polling,
      { type: "cancelRequested" },
      { type: "statusReport", status: "done", passCount: 4, lowerBound: null },
      { type: "resultReady", result: RESULT },
    ]);
    expect(state.kind).toBe("done");
  });

  it("accepts an externally cancelled job while polling", () => {
    const state = run(initialState(TWO_SIDED), [
      ...polling,
      { type: "statusReport", status: "cancelled", passCount: 3, lowerBound: null },
    ]);
    expect(state.kind).toBe("cancelled");
  });
});

describe("single job per tab", () => {
  it("ignores a second submit while one job is in flight", () => {
    const inFlight = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
      { type: "submitAccepted", jobId: "j1" },
    ]);
    const again = transition(inFlight, { type: "submit", params: PARAMS });
    expect(again).toBe(inFlight);
  });

  it("ignores edits while a job is in flight", () => {
    const inFlight = run(initialState(TWO_SIDED), [
      { type: "submit", params: PARAMS },
    ]);
    expect(transition(inFlight, { type: "edit", doc: ONE_SIDED })).toBe(inFlight);
  });
});

describe("totality and liveness", () => {
  const EVENTS: UiEvent[] = [
    { type: "edit", doc: TWO_SIDED },
    { type: "submit", params: PARAMS },
    { type: "submitAccepted", jobId: "j" },
    { type: "submitRejected", message: "nope", queueFull: false },
    { type: "submitRejected", message: "full", queueFull: true },
    { type: "statusReport", status: "queued", passCount: 0, lowerBound: null },
    { type: "statusReport", status: "running", passCount: 1, lowerBound: -1 },
    { type: "statusReport", status: "done", passCount: 2, lowerBound: -0.5 },
    { type: "statusReport", status: "failed", passCount: 2, lowerBound: null },
    { type: "statusReport", status: "cancelled", passCount: 2, lowerBound: null },
    { type: "cancelRequested" },
    { type: "cancelDenied" },
    { type: "resultReady", result: RESULT },
    { type: "networkError", message: "offline" },
    { type: "reset" },
  ];

  function key(state: UiState): string {
    switch (state.kind) {
      case "editing":
        return `editing:${state.error === null ? "ok" : "err"}`;
      case "polling":
        return `polling:${state.queued ? "q" : "r"}`;
      default:
        return state.kind;
    }
  }

  function reachable(): UiState[] {
    const seen = new Map<string, UiState>();
    const queue: UiState[] = [initialState(TWO_SIDED), initialState(ONE_SIDED)];
    for (const s of queue) {
      seen.set(key(s), s);
    }
    while (queue.length > 0) {
      const state = queue.shift()!;
      for (const event of EVENTS) {
        const next = transition(state, event);
        if (!seen.has(key(next))) {
          seen.set(key(next), next);
          queue.push(next);
        }
      }
    }
    return [...seen.values()];
  }

  it("defines a next state for every state and event", () => {
    for (const state of reachable()) {
      for (const event of EVENTS) {
        const next = transition(state, event);
        expect(next).toBeDefined();
        expect(typeof next.kind).toBe("string");
      }
    }
  });

  it("covers every machine state", () => {
    const kinds = new Set(reachable().map((s) => s.kind));
    for (const kind of [
      "editing", "submitting", "polling", "cancelling",
      "fetchingResult", "done", "failed", "cancelled",
    ]) {
      expect(kinds.has(kind as UiState["kind"])).toBe(true);
    }
  });

  it("leaves no dead ends: editing stays reachable from every state", () => {
    for (const start of reachable()) {
      const seen = new Set<string>([key(start)]);
      const queue: UiState[] = [start];
      let found = start.kind === "editing";
      while (queue.length > 0 && !found) {
        const state = queue.shift()!;
        for (const event of EVENTS) {
          const next = transition(state, event);
          if (next.kind === "editing") {
            found = true;
            break;
          }
          if (!seen.has(key(next))) {
            seen.add(key(next));
            queue.push(next);
          }
        }
      }
      expect(found, `no path from ${key(start)} back to editing`).toBe(true);
    }
  });

  it("describes every reachable state", () => {
    for (const state of reachable()) {
      expect(describeState(state).length).toBeGreaterThan(0);
    }
  });
});
