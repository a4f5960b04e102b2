/** Pure pixel and chart helpers for the result view.
 *
 * Everything here is deterministic integer or float math on plain
 * arrays, so it can be unit tested without a DOM; the app feeds the
 * outputs into canvas ImageData and an SVG path.
 */

import type { GrayImage, RgbImage } from "./pnm.js";

/** Foreground tint used by the 50% overlay, as [r, g, b]. */
export const OVERLAY_TINT: [number, number, number] = [255, 80, 0];

/** Contour color painted on top of the overlay, as [r, g, b]. */
export const CONTOUR_COLOR: [number, number, number] = [0, 229, 255];

/** Expand a grayscale image to opaque RGBA for ImageData. */
export function grayToRgba(image: GrayImage): Uint8ClampedArray<ArrayBuffer> {
  const { width, height, pixels } = image;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const v = pixels[i];
    out[4 * i] = v;
    out[4 * i + 1] = v;
    out[4 * i + 2] = v;
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Expand an RGB image to opaque RGBA for ImageData. */
export function rgbToRgba(image: RgbImage): Uint8ClampedArray<ArrayBuffer> {
  const { width, height, pixels } = image;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    out[4 * i] = pixels[3 * i];
    out[4 * i + 1] = pixels[3 * i + 1];
    out[4 * i + 2] = pixels[3 * i + 2];
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Blend the foreground tint at 50% over labeled pixels.
 *
 * `labels` is the result labeling as grayscale bytes; any nonzero byte
 * counts as foreground.  Background pixels keep their original color.
 */
export function composeOverlay(
  image: RgbImage,
  labels: GrayImage,
  tint: [number, number, number] = OVERLAY_TINT,
): Uint8ClampedArray<ArrayBuffer> {
  if (labels.width !== image.width || labels.height !== image.height) {
    throw new Error(
      `labeling is ${labels.width}x${labels.height}, ` +
        `image is ${image.width}x${image.height}`,
    );
  }
  const out = rgbToRgba(image);
  const n = image.width * image.height;
  for (let i = 0; i < n; i++) {
    if (labels.pixels[i] !== 0) {
      out[4 * i] = Math.round((out[4 * i] + tint[0]) / 2);
      out[4 * i + 1] = Math.round((out[4 * i + 1] + tint[1]) / 2);
      out[4 * i + 2] = Math.round((out[4 * i + 2] + tint[2]) / 2);
    }
  }
  return out;
}

/** Mark the decision boundary of a min-marginal map.
 *
 * The map encodes the per-pixel cost difference with 128 at zero, so
 * the boundary is where values cross the 128 level.  A pixel is marked
 * when it sits on the below-128 side and has a 4-neighbor at or above
 * 128, giving a one-pixel-wide contour.
 */
export function contourMask(map: GrayImage): Uint8Array {
  const { width, height, pixels } = map;
  const out = new Uint8Array(width * height);
  const below = (i: number) => pixels[i] < 128;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      if (!below(i)) {
        continue;
      }
      const crosses =
        (x > 0 && !below(i - 1)) ||
        (x + 1 < width && !below(i + 1)) ||
        (y > 0 && !below(i - width)) ||
        (y + 1 < height && !below(i + width));
      if (crosses) {
        out[i] = 1;
      }
    }
  }
  return out;
}

/** Paint contour pixels onto an RGBA buffer in place. */
export function applyContour(
  rgba: Uint8ClampedArray,
  contour: Uint8Array,
  color: [number, number, number] = CONTOUR_COLOR,
): Uint8ClampedArray {
  for (let i = 0; i < contour.length; i++) {
    if (contour[i] !== 0) {
      rgba[4 * i] = color[0];
      rgba[4 * i + 1] = color[1];
      rgba[4 * i + 2] = color[2];
      rgba[4 * i + 3] = 255;
    }
  }
  return rgba;
}

/** SVG path for a lower-bound sparkline.
 *
 * Values map left to right in arrival order; larger bounds sit higher
 * (smaller y).  A flat or single-value series draws a centered
 * horizontal line, and an empty series yields an empty path.
 */
export function sparklinePath(
  bounds: number[],
  width: number,
  height: number,
  pad = 1,
): string {
  if (bounds.length === 0) {
    return "";
  }
  const lo = Math.min(...bounds);
  const hi = Math.max(...bounds);
  const span = hi - lo;
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const xAt = (i: number) =>
    bounds.length === 1 ? pad + innerW / 2 : pad + (innerW * i) / (bounds.length - 1);
  const yAt = (v: number) =>
    span === 0 ? height / 2 : pad + innerH * (1 - (v - lo) / span);
  const parts: string[] = [];
  if (bounds.length === 1) {
    const y = yAt(bounds[0]);
    return `M ${pad} ${y} L ${width - pad} ${y}`;
  }
  for (let i = 0; i < bounds.length; i++) {
    const cmd = i === 0 ? "M" : "L";
    parts.push(`${cmd} ${xAt(i)} ${yAt(bounds[i])}`);
  }
  return parts.join(" ");
}
