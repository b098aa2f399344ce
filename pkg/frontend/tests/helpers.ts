/** Node-side fixture loading shared by the test suites. */

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { join } from "node:path";

import type { Bundle } from "../src/format.js";
import { assembleBundle, frameFileName } from "../src/format.js";

export const FIXTURES = fileURLToPath(new URL("./fixtures/", import.meta.url));

export function readMetaText(): string {
  return readFileSync(join(FIXTURES, "bundle", "meta.json"), "utf8");
}

export function readFrameBytes(index: number): Uint8Array {
  return new Uint8Array(readFileSync(join(FIXTURES, "bundle", frameFileName(index))));
}

export function loadFixtureBundle(): Bundle {
  const metaText = readMetaText();
  const count = JSON.parse(metaText).frame_count as number;
  const frames = Array.from({ length: count }, (_, k) => readFrameBytes(k));
  return assembleBundle(metaText, frames);
}

export interface RefEntry {
  frame: number;
  camera: string;
  file: string;
}

export interface RefManifest {
  width: number;
  height: number;
  frame_count: number;
  background: [number, number, number];
  refs: RefEntry[];
}

export function loadRefManifest(): RefManifest {
  return JSON.parse(readFileSync(join(FIXTURES, "refs", "manifest.json"), "utf8"));
}

export function loadRefImage(file: string): Float32Array {
  const bytes = new Uint8Array(readFileSync(join(FIXTURES, "refs", file)));
  return new Float32Array(bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.length));
}

export function meanAbsDiff(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) throw new Error(`length mismatch ${a.length} vs ${b.length}`);
  let s = 0;
  for (let i = 0; i < a.length; i++) s += Math.abs(a[i] - b[i]);
  return s / a.length;
}

export function maxAbsDiff(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) throw new Error(`length mismatch ${a.length} vs ${b.length}`);
  let m = 0;
  for (let i = 0; i < a.length; i++) m = Math.max(m, Math.abs(a[i] - b[i]));
  return m;
}

/** Deterministic uniform generator for property-style tests. */
export function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}
