/** Parser for exported viewer bundles.
 *
 * A bundle is a directory of `meta.json` plus one `frame_%04d.bin` per
 * frame. Every frame file is `u32 count` followed by little-endian float32
 * runs: means (N,3), unit quaternions wxyz (N,4), scales (N,3), opacities
 * (N,), spherical-harmonic coefficients (N,4,3) — 4 + 92*N bytes total.
 * Parsing never mutates its input and fails loudly with the expected vs
 * found numbers; render state lives entirely on the viewer side.
 */

export const VIEWER_BUNDLE_VERSION = 1;

export const FLOATS_PER_GAUSSIAN = 3 + 4 + 3 + 1 + 12;
export const BYTES_PER_GAUSSIAN = 4 * FLOATS_PER_GAUSSIAN;

export class BundleError extends Error {}

export interface CameraEntry {
  id: string;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  near_clip: number;
  world_to_camera: number[][]; // 4x4 row-major
  split?: string;
}

export interface BundleMeta {
  version: number;
  frame_count: number;
  gaussian_counts: number[];
  cameras: CameraEntry[];
  background: [number, number, number];
  conventions?: Record<string, unknown>;
}

export interface FrameCloud {
  count: number;
  means: Float32Array; // (N, 3) flattened
  quats: Float32Array; // (N, 4) wxyz, unit
  scales: Float32Array; // (N, 3) activated standard deviations
  opacities: Float32Array; // (N,) in (0, 1)
  sh: Float32Array; // (N, 4, 3) rows DC, y, z, x
}

export interface Bundle {
  meta: BundleMeta;
  frames: FrameCloud[];
}

export function frameFileName(index: number): string {
  return `frame_${String(index).padStart(4, "0")}.bin`;
}

const LITTLE_ENDIAN = new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

/** Copy of `bytes` as an aligned little-endian float32 array. */
function floatsLE(bytes: Uint8Array): Float32Array {
  const copy = new Uint8Array(bytes); // fresh, aligned buffer
  if (!LITTLE_ENDIAN) {
    for (let i = 0; i < copy.length; i += 4) {
      const a = copy[i];
      const b = copy[i + 1];
      copy[i] = copy[i + 3];
      copy[i + 1] = copy[i + 2];
      copy[i + 2] = b;
      copy[i + 3] = a;
    }
  }
  return new Float32Array(copy.buffer);
}

export function parseMeta(text: string): BundleMeta {
  let raw: any;
  try {
    raw = JSON.parse(text);
  } catch (e) {
    throw new BundleError(`meta.json is not valid JSON: ${(e as Error).message}`);
  }
  if (raw.version !== VIEWER_BUNDLE_VERSION) {
    throw new BundleError(
      `unsupported bundle version: expected ${VIEWER_BUNDLE_VERSION}, found ${raw.version}`,
    );
  }
  const frameCount = raw.frame_count;
  if (!Number.isInteger(frameCount) || frameCount < 1) {
    throw new BundleError(`frame_count must be a positive integer, found ${frameCount}`);
  }
  const counts = raw.gaussian_counts;
  if (!Array.isArray(counts) || counts.length !== frameCount) {
    throw new BundleError(
      `gaussian_counts must list one entry per frame: expected ${frameCount}, found ${
        Array.isArray(counts) ? counts.length : typeof counts
      }`,
    );
  }
  const background = raw.background ?? [0, 0, 0];
  if (!Array.isArray(background) || background.length !== 3) {
    throw new BundleError("background must be an [r, g, b] triple");
  }
  return {
    version: raw.version,
    frame_count: frameCount,
    gaussian_counts: counts.map((c: unknown) => Number(c)),
    cameras: Array.isArray(raw.cameras) ? raw.cameras : [],
    background: [Number(background[0]), Number(background[1]), Number(background[2])],
    conventions: raw.conventions,
  };
}

export function parseFrame(
  bytes: Uint8Array | ArrayBuffer,
  expectedCount?: number,
): FrameCloud {
  const u8 = bytes instanceof Uint8Array ? bytes : new Uint8Array(bytes);
  if (u8.length < 4) {
    throw new BundleError(`frame file too short: ${u8.length} bytes`);
  }
  const count = new DataView(u8.buffer, u8.byteOffset, 4).getUint32(0, true);
  const expectBytes = 4 + count * BYTES_PER_GAUSSIAN;
  if (u8.length !== expectBytes) {
    throw new BundleError(
      `frame byte length mismatch for ${count} Gaussians: expected ${expectBytes}, found ${u8.length}`,
    );
  }
  if (expectedCount !== undefined && count !== expectedCount) {
    throw new BundleError(
      `frame Gaussian count mismatch: metadata says ${expectedCount}, file says ${count}`,
    );
  }
  const f = floatsLE(u8.subarray(4));
  let at = 0;
  const take = (n: number) => f.subarray(at, (at += n));
  return {
    count,
    means: take(count * 3),
    quats: take(count * 4),
    scales: take(count * 3),
    opacities: take(count),
    sh: take(count * 12),
  };
}

/** Assemble a parsed bundle from raw file contents, cross-checking counts. */
export function assembleBundle(
  metaText: string,
  frameBytes: (Uint8Array | ArrayBuffer)[],
): Bundle {
  const meta = parseMeta(metaText);
  if (frameBytes.length !== meta.frame_count) {
    throw new BundleError(
      `bundle has ${frameBytes.length} frame files, metadata expects ${meta.frame_count}`,
    );
  }
  const frames = frameBytes.map((b, k) => parseFrame(b, meta.gaussian_counts[k]));
  return { meta, frames };
}
