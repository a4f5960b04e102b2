/** Stroke documents and their rasterization into seed masks.
 *
 * A stroke is a polyline with a brush radius and a tag, drawn in pixel
 * coordinates.  Rasterizing a document stamps each stroke in order onto
 * an all-free canvas, so later strokes overwrite earlier ones; the same
 * document always produces the same mask, byte for byte, and matches
 * the server's own rasterizer exactly.  Masks use one byte per pixel:
 * 255 marks foreground seeds, 0 background seeds, 128 free pixels.
 */

import { encodePgm, type GrayImage } from "./pnm.js";

export const FOREGROUND = 255;
export const BACKGROUND = 0;
export const FREE = 128;

export type StrokeTag = "fg" | "bg";

export interface Stroke {
  tag: StrokeTag;
  radius: number;
  /** Polyline vertices as [x, y] pairs; a single vertex paints a dot. */
  points: Array<[number, number]>;
}

export interface StrokeDocument {
  width: number;
  height: number;
  strokes: Stroke[];
}

export class StrokeFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StrokeFormatError";
  }
}

const TAG_VALUES: Record<StrokeTag, number> = {
  fg: FOREGROUND,
  bg: BACKGROUND,
};

export function validateStroke(stroke: Stroke): void {
  if (stroke.tag !== "fg" && stroke.tag !== "bg") {
    throw new StrokeFormatError(
      `tag must be 'fg' or 'bg', got ${JSON.stringify(stroke.tag)}`,
    );
  }
  if (!Number.isFinite(stroke.radius) || stroke.radius < 0) {
    throw new StrokeFormatError(
      `radius must be finite and >= 0, got ${stroke.radius}`,
    );
  }
  if (stroke.points.length === 0) {
    throw new StrokeFormatError("stroke needs at least one point");
  }
  for (const [x, y] of stroke.points) {
    if (!Number.isFinite(x) || !Number.isFinite(y)) {
      throw new StrokeFormatError(`non-finite point (${x}, ${y})`);
    }
  }
}

export function validateDocument(doc: StrokeDocument): void {
  if (
    !Number.isInteger(doc.width) ||
    !Number.isInteger(doc.height) ||
    doc.width < 1 ||
    doc.height < 1
  ) {
    throw new StrokeFormatError(
      `canvas must be positive, got ${doc.width}x${doc.height}`,
    );
  }
  for (const stroke of doc.strokes) {
    validateStroke(stroke);
  }
}

export function documentFromJson(text: string): StrokeDocument {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (exc) {
    throw new StrokeFormatError(`invalid JSON: ${exc}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new StrokeFormatError("document must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  if (!Array.isArray(obj.strokes)) {
    throw new StrokeFormatError("malformed stroke document: missing strokes");
  }
  const strokes: Stroke[] = obj.strokes.map((entry) => {
    const s = entry as Record<string, unknown>;
    const points = (s.points as Array<[number, number]>).map(
      (p): [number, number] => [Number(p[0]), Number(p[1])],
    );
    return {
      tag: s.tag as StrokeTag,
      radius: Number(s.radius),
      points,
    };
  });
  const doc: StrokeDocument = {
    width: Number(obj.width),
    height: Number(obj.height),
    strokes,
  };
  validateDocument(doc);
  return doc;
}

/** Canonical JSON: sorted keys, no whitespace. */
export function documentToJson(doc: StrokeDocument): string {
  validateDocument(doc);
  return JSON.stringify({
    height: doc.height,
    strokes: doc.strokes.map((s) => ({
      points: s.points.map((p) => [p[0], p[1]]),
      radius: s.radius,
      tag: s.tag,
    })),
    width: doc.width,
  });
}

export interface SeedMask {
  width: number;
  height: number;
  /** Row-major tags, values in {0, 128, 255}. */
  tags: Uint8Array;
}

/** Paint every pixel within `radius` of segment a-b.
 *
 * The arithmetic (bounding box rounding, clamped projection onto the
 * segment, squared-distance comparison) mirrors the server exactly so
 * that both sides agree on every boundary pixel.
 */
function stampSegment(
  tags: Uint8Array,
  width: number,
  height: number,
  a: [number, number],
  b: [number, number],
  radius: number,
  value: number,
): void {
  const [ax, ay] = a;
  const [bx, by] = b;
  const xLo = Math.max(Math.ceil(Math.min(ax, bx) - radius), 0);
  const xHi = Math.min(Math.floor(Math.max(ax, bx) + radius), width - 1);
  const yLo = Math.max(Math.ceil(Math.min(ay, by) - radius), 0);
  const yHi = Math.min(Math.floor(Math.max(ay, by) + radius), height - 1);
  if (xLo > xHi || yLo > yHi) {
    return;
  }
  const vx = bx - ax;
  const vy = by - ay;
  const len2 = vx * vx + vy * vy;
  const r2 = radius * radius;
  for (let py = yLo; py <= yHi; py++) {
    for (let px = xLo; px <= xHi; px++) {
      let dx: number;
      let dy: number;
      if (len2 === 0) {
        dx = px - ax;
        dy = py - ay;
      } else {
        let t = ((px - ax) * vx + (py - ay) * vy) / len2;
        if (t < 0) {
          t = 0;
        } else if (t > 1) {
          t = 1;
        }
        dx = px - (ax + t * vx);
        dy = py - (ay + t * vy);
      }
      if (dx * dx + dy * dy <= r2) {
        tags[py * width + px] = value;
      }
    }
  }
}

/** Stamp all strokes in order onto an all-free canvas. */
export function rasterize(doc: StrokeDocument): SeedMask {
  validateDocument(doc);
  const tags = new Uint8Array(doc.width * doc.height).fill(FREE);
  for (const stroke of doc.strokes) {
    const value = TAG_VALUES[stroke.tag];
    const pts = stroke.points;
    if (pts.length === 1) {
      stampSegment(tags, doc.width, doc.height, pts[0], pts[0], stroke.radius, value);
    } else {
      for (let i = 0; i + 1 < pts.length; i++) {
        stampSegment(
          tags, doc.width, doc.height, pts[i], pts[i + 1], stroke.radius, value,
        );
      }
    }
  }
  return { width: doc.width, height: doc.height, tags };
}

/** Serialize a mask in the exact seed-mask encoding the server consumes. */
export function maskToPgm(mask: SeedMask): Uint8Array {
  const image: GrayImage = {
    width: mask.width,
    height: mask.height,
    pixels: mask.tags,
  };
  return encodePgm(image);
}

/** True when the mask constrains at least one pixel on each side.
 *
 * The server rejects one-sided jobs, so the client checks this before
 * submitting.  Strokes that fall entirely outside the canvas paint
 * nothing and do not count.
 */
export function marksBothSides(mask: SeedMask): boolean {
  let fg = false;
  let bg = false;
  for (const value of mask.tags) {
    if (value === FOREGROUND) {
      fg = true;
    } else if (value === BACKGROUND) {
      bg = true;
    }
    if (fg && bg) {
      return true;
    }
  }
  return false;
}
