// Decoder for the service's 16-bit binary PGM raster payload.

export interface DecodedRaster {
  width: number;
  height: number;
  /** intensities normalized to [0, 1], row-major */
  data: Float32Array;
}

export function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // node (vitest) path
  return new Uint8Array(Buffer.from(b64, "base64"));
}

export function decodePgm(bytes: Uint8Array): DecodedRaster {
  if (bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new Error("not a binary PGM (P5) payload");
  }
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3) {
    while (pos < bytes.length && isSpace(bytes[pos])) pos++;
    if (bytes[pos] === 0x23) {
      // comment line
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    tokens.push(parseInt(ascii(bytes, start, pos), 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = tokens;
  const data = new Float32Array(width * height);
  if (maxval > 255) {
    for (let i = 0; i < width * height; i++) {
      data[i] = (bytes[pos + 2 * i] * 256 + bytes[pos + 2 * i + 1]) / maxval;
    }
  } else {
    for (let i = 0; i < width * height; i++) {
      data[i] = bytes[pos + i] / maxval;
    }
  }
  return { width, height, data };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}

function ascii(bytes: Uint8Array, start: number, end: number): string {
  let s = "";
  for (let i = start; i < end; i++) s += String.fromCharCode(bytes[i]);
  return s;
}
