/** Binary PGM (P5) and PPM (P6) codecs.
 *
 * The server exchanges images in these formats: seed masks and result
 * maps as 8-bit PGM, input photos as 8-bit PPM.  The encoders emit the
 * canonical header "P5\n{w} {h}\n255\n" (resp. P6) so that encoding a
 * given raster always yields identical bytes.
 */

export class PnmFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PnmFormatError";
  }
}

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major, one byte per pixel. */
  pixels: Uint8Array;
}

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major, three bytes (r, g, b) per pixel. */
  pixels: Uint8Array;
}

const ASCII = {
  space: 0x20,
  tab: 0x09,
  lf: 0x0a,
  cr: 0x0d,
  vt: 0x0b,
  ff: 0x0c,
  hash: 0x23,
};

function isSpace(byte: number): boolean {
  return (
    byte === ASCII.space ||
    byte === ASCII.tab ||
    byte === ASCII.lf ||
    byte === ASCII.cr ||
    byte === ASCII.vt ||
    byte === ASCII.ff
  );
}

/** Read one header token, skipping whitespace and # comments. */
function readToken(data: Uint8Array, pos: number): [string, number] {
  while (pos < data.length) {
    if (isSpace(data[pos])) {
      pos++;
    } else if (data[pos] === ASCII.hash) {
      while (pos < data.length && data[pos] !== ASCII.lf) {
        pos++;
      }
    } else {
      break;
    }
  }
  if (pos >= data.length) {
    throw new PnmFormatError("truncated header");
  }
  const start = pos;
  while (pos < data.length && !isSpace(data[pos]) && data[pos] !== ASCII.hash) {
    pos++;
  }
  let token = "";
  for (let i = start; i < pos; i++) {
    token += String.fromCharCode(data[i]);
  }
  return [token, pos];
}

function parse(
  data: Uint8Array,
  magic: string,
  channels: number,
): { width: number; height: number; pixels: Uint8Array } {
  let [token, pos] = readToken(data, 0);
  if (token !== magic) {
    throw new PnmFormatError(`expected magic ${magic}, got ${token}`);
  }
  const fields: number[] = [];
  for (let i = 0; i < 3; i++) {
    [token, pos] = readToken(data, pos);
    if (!/^[0-9]+$/.test(token)) {
      throw new PnmFormatError(`non-numeric header field ${token}`);
    }
    fields.push(parseInt(token, 10));
  }
  const [width, height, maxval] = fields;
  if (width < 1 || height < 1) {
    throw new PnmFormatError(`bad dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new PnmFormatError(`only maxval 255 is supported, got ${maxval}`);
  }
  if (pos >= data.length || !isSpace(data[pos])) {
    throw new PnmFormatError("missing whitespace after header");
  }
  pos++;
  const count = width * height * channels;
  if (data.length - pos !== count) {
    throw new PnmFormatError(
      `raster has ${data.length - pos} bytes, expected ${count}`,
    );
  }
  return { width, height, pixels: data.slice(pos) };
}

export function decodePgm(data: Uint8Array): GrayImage {
  return parse(data, "P5", 1);
}

export function decodePpm(data: Uint8Array): RgbImage {
  return parse(data, "P6", 3);
}

function header(magic: string, width: number, height: number): Uint8Array {
  const text = `${magic}\n${width} ${height}\n255\n`;
  const out = new Uint8Array(text.length);
  for (let i = 0; i < text.length; i++) {
    out[i] = text.charCodeAt(i);
  }
  return out;
}

function concat(head: Uint8Array, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(head.length + body.length);
  out.set(head, 0);
  out.set(body, head.length);
  return out;
}

export function encodePgm(image: GrayImage): Uint8Array {
  const { width, height, pixels } = image;
  if (pixels.length !== width * height) {
    throw new PnmFormatError(
      `pixel buffer has ${pixels.length} bytes, expected ${width * height}`,
    );
  }
  return concat(header("P5", width, height), pixels);
}

export function encodePpm(image: RgbImage): Uint8Array {
  const { width, height, pixels } = image;
  if (pixels.length !== width * height * 3) {
    throw new PnmFormatError(
      `pixel buffer has ${pixels.length} bytes, expected ${width * height * 3}`,
    );
  }
  return concat(header("P6", width, height), pixels);
}
