/** Job lifecycle state machine for the UI.
 *
 * The machine is a pure, total transition function: every (state,
 * event) pair yields a defined next state, and every reachable state
 * has a path back to "editing", so the UI can never strand the user.
 * One tab drives at most one job at a time; a new submission is only
 * possible from the editing state.
 *
 * Lifecycle: editing -> submitting -> polling -> fetchingResult ->
 * done, with failed / cancelled as the other terminal states and
 * cancelling as the detour taken while a cancel request is in flight.
 */

import {
  marksBothSides,
  rasterize,
  type StrokeDocument,
} from "./mask.js";
import type { JobResultPayload, JobStatusValue } from "./api.js";

/** How often the UI asks the server for job progress. */
export const POLL_INTERVAL_MS = 1000;

export interface JobParams {
  priorWeight: number;
  passes: number | "auto";
}

export type FailureReason = "rejected" | "queue-full" | "network" | "job";

export type UiState =
  | { kind: "editing"; doc: StrokeDocument; error: string | null }
  | { kind: "submitting"; doc: StrokeDocument; params: JobParams }
  | {
      kind: "polling";
      doc: StrokeDocument;
      jobId: string;
      queued: boolean;
      passCount: number;
      bounds: number[];
    }
  | {
      kind: "cancelling";
      doc: StrokeDocument;
      jobId: string;
      passCount: number;
      bounds: number[];
    }
  | {
      kind: "fetchingResult";
      doc: StrokeDocument;
      jobId: string;
      passCount: number;
      bounds: number[];
    }
  | {
      kind: "done";
      doc: StrokeDocument;
      jobId: string;
      result: JobResultPayload;
      passCount: number;
      bounds: number[];
    }
  | {
      kind: "failed";
      doc: StrokeDocument;
      reason: FailureReason;
      message: string;
      bounds: number[];
    }
  | { kind: "cancelled"; doc: StrokeDocument; jobId: string; bounds: number[] };

export type UiEvent =
  | { type: "edit"; doc: StrokeDocument }
  | { type: "submit"; params: JobParams }
  | { type: "submitAccepted"; jobId: string }
  | { type: "submitRejected"; message: string; queueFull: boolean }
  | {
      type: "statusReport";
      status: JobStatusValue;
      passCount: number;
      lowerBound: number | null;
    }
  | { type: "cancelRequested" }
  | { type: "cancelDenied" }
  | { type: "resultReady"; result: JobResultPayload }
  | { type: "networkError"; message: string }
  | { type: "reset" };

export function initialState(doc: StrokeDocument): UiState {
  return { kind: "editing", doc, error: null };
}

/** Reason a document cannot be submitted yet, or null if it can. */
export function submitBlocker(doc: StrokeDocument): string | null {
  if (doc.strokes.length === 0) {
    return "draw foreground and background strokes first";
  }
  if (!marksBothSides(rasterize(doc))) {
    return "strokes must mark both foreground and background";
  }
  return null;
}

function appendBound(bounds: number[], lowerBound: number | null): number[] {
  if (lowerBound === null) {
    return bounds;
  }
  return [...bounds, lowerBound];
}

export function transition(state: UiState, event: UiEvent): UiState {
  switch (state.kind) {
    case "editing":
      switch (event.type) {
        case "edit":
          return { kind: "editing", doc: event.doc, error: null };
        case "submit": {
          const blocker = submitBlocker(state.doc);
          if (blocker !== null) {
            return { kind: "editing", doc: state.doc, error: blocker };
          }
          return { kind: "submitting", doc: state.doc, params: event.params };
        }
        default:
          return state;
      }

    case "submitting":
      switch (event.type) {
        case "submitAccepted":
          return {
            kind: "polling",
            doc: state.doc,
            jobId: event.jobId,
            queued: true,
            passCount: 0,
            bounds: [],
          };
        case "submitRejected":
          return {
            kind: "failed",
            doc: state.doc,
            reason: event.queueFull ? "queue-full" : "rejected",
            message: event.message,
            bounds: [],
          };
        case "networkError":
          return {
            kind: "failed",
            doc: state.doc,
            reason: "network",
            message: event.message,
            bounds: [],
          };
        default:
          return state;
      }

    case "polling":
      switch (event.type) {
        case "statusReport":
          switch (event.status) {
            case "queued":
              return { ...state, queued: true };
            case "running":
              return {
                ...state,
                queued: false,
                passCount: event.passCount,
                bounds: appendBound(state.bounds, event.lowerBound),
              };
            case "done":
              return {
                kind: "fetchingResult",
                doc: state.doc,
                jobId: state.jobId,
                passCount: event.passCount,
                bounds: appendBound(state.bounds, event.lowerBound),
              };
            case "failed":
              return {
                kind: "failed",
                doc: state.doc,
                reason: "job",
                message: "the job failed on the server",
                bounds: state.bounds,
              };
            case "cancelled":
              return {
                kind: "cancelled",
                doc: state.doc,
                jobId: state.jobId,
                bounds: state.bounds,
              };
          }
          return state;
        case "cancelRequested":
          return {
            kind: "cancelling",
            doc: state.doc,
            jobId: state.jobId,
            passCount: state.passCount,
            bounds: state.bounds,
          };
        case "networkError":
          return {
            kind: "failed",
            doc: state.doc,
            reason: "network",
            message: event.message,
            bounds: state.bounds,
          };
        default:
          return state;
      }

    case "cancelling":
      switch (event.type) {
        case "statusReport":
          switch (event.status) {
            case "cancelled":
              return {
                kind: "cancelled",
                doc: state.doc,
                jobId: state.jobId,
                bounds: state.bounds,
              };
            case "done":
              return {
                kind: "fetchingResult",
                doc: state.doc,
                jobId: state.jobId,
                passCount: event.passCount,
                bounds: state.bounds,
              };
            case "failed":
              return {
                kind: "failed",
                doc: state.doc,
                reason: "job",
                message: "the job failed on the server",
                bounds: state.bounds,
              };
            default:
              return state;
          }
        case "cancelDenied":
          return {
            kind: "polling",
            doc: state.doc,
            jobId: state.jobId,
            queued: false,
            passCount: state.passCount,
            bounds: state.bounds,
          };
        case "networkError":
          return {
            kind: "failed",
            doc: state.doc,
            reason: "network",
            message: event.message,
            bounds: state.bounds,
          };
        default:
          return state;
      }

    case "fetchingResult":
      switch (event.type) {
        case "resultReady":
          return {
            kind: "done",
            doc: state.doc,
            jobId: state.jobId,
            result: event.result,
            passCount: state.passCount,
            bounds: state.bounds,
          };
        case "networkError":
          return {
            kind: "failed",
            doc: state.doc,
            reason: "network",
            message: event.message,
            bounds: state.bounds,
          };
        default:
          return state;
      }

    case "done":
    case "failed":
    case "cancelled":
      switch (event.type) {
        case "edit":
          return { kind: "editing", doc: event.doc, error: null };
        case "reset":
          return { kind: "editing", doc: state.doc, error: null };
        default:
          return state;
      }
  }
}

/** One-line status text for the UI header. */
export function describeState(state: UiState): string {
  switch (state.kind) {
    case "editing":
      return state.error === null ? "ready" : `cannot submit: ${state.error}`;
    case "submitting":
      return "submitting job";
    case "polling":
      return state.queued
        ? "waiting in queue"
        : `running, pass ${state.passCount}`;
    case "cancelling":
      return "cancelling";
    case "fetchingResult":
      return "fetching result";
    case "done":
      return `done after ${state.passCount} passes`;
    case "failed":
      switch (state.reason) {
        case "queue-full":
          return "rejected: the server queue is full, try again shortly";
        case "rejected":
          return `rejected by the server: ${state.message}`;
        case "network":
          return `connection problem: ${state.message}`;
        case "job":
          return state.message;
      }
      return state.message;
    case "cancelled":
      return "job cancelled";
  }
}
