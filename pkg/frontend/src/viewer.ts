/** Viewer state and its input-event reducer.
 *
 * Pure data in, pure data out: the browser shell translates DOM events into
 * ViewerEvent values and calls interact() before each rendered frame, so
 * scrubbing back to a frame or completing a full orbit reproduces the same
 * image. Bundle data is never mutated; only the view-side state changes.
 * Camera modes: orbit (target, radius, azimuth, elevation around the scene)
 * and fly (free position + orientation, WASD-style moves in camera axes).
 */

import type { Bundle } from "./format.js";
import type { Quat, Vec3 } from "./math.js";
import {
  add,
  lookAtPose,
  matTVec,
  quatFromAxisAngle,
  quatMul,
  quatNormalize,
  quatToMat,
  scale,
} from "./math.js";
import type { RenderCamera } from "./render.js";
import { cameraFromEntry } from "./render.js";

// world up for the bundled scenes: camera y grows downward, so -y is up
export const WORLD_UP: Vec3 = [0, -1, 0];

const MIN_RADIUS = 1e-3;
const MAX_ELEVATION = Math.PI / 2 - 1e-3;
const TWO_PI = 2 * Math.PI;

export interface OrbitCamera {
  target: Vec3;
  radius: number;
  azimuth: number; // radians, wrapped to [0, 2pi)
  elevation: number; // radians, positive looks down from above
}

export interface FlyCamera {
  eye: Vec3;
  orientation: Quat; // camera-to-world rotation
}

export interface ViewerState {
  bundle: Bundle;
  frame: number;
  mode: "orbit" | "fly";
  orbit: OrbitCamera;
  fly: FlyCamera;
  playing: boolean;
  fps: number;
  pending: number; // seconds accumulated toward the next frame advance
  intrinsics: Omit<RenderCamera, "rot" | "t">;
}

export type ViewerEvent =
  | { kind: "orbit-drag"; dAzimuth: number; dElevation: number }
  | { kind: "dolly"; factor: number }
  | { kind: "fly-move"; right: number; up: number; forward: number }
  | { kind: "fly-look"; yaw: number; pitch: number }
  | { kind: "set-mode"; mode: "orbit" | "fly" }
  | { kind: "scrub"; frame: number }
  | { kind: "play-pause" }
  | { kind: "set-fps"; fps: number }
  | { kind: "tick"; dt: number };

function wrapAngle(a: number): number {
  return ((a % TWO_PI) + TWO_PI) % TWO_PI;
}

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, x));
}

/** Initial state: orbit camera framing the first bundled camera's target
 * distance, intrinsics copied from it (or a bare default when the bundle
 * carries no cameras). */
export function createViewer(bundle: Bundle): ViewerState {
  let intrinsics: ViewerState["intrinsics"] = {
    fx: 70,
    fy: 70,
    cx: 31.5,
    cy: 31.5,
    width: 64,
    height: 64,
    nearClip: 0.01,
  };
  let radius = 4;
  if (bundle.meta.cameras.length > 0) {
    const cam = cameraFromEntry(bundle.meta.cameras[0]);
    const { rot, t, ...rest } = cam;
    intrinsics = rest;
    const eye = matTVec(rot, t).map((v) => -v) as Vec3;
    radius = Math.hypot(eye[0], eye[1], eye[2]) || radius;
  }
  return {
    bundle,
    frame: 0,
    mode: "orbit",
    orbit: { target: [0, 0, 0], radius, azimuth: 0, elevation: 0 },
    fly: { eye: [0, 0, -radius], orientation: [1, 0, 0, 0] },
    playing: false,
    fps: 30,
    pending: 0,
    intrinsics,
  };
}

export function orbitEye(orbit: OrbitCamera): Vec3 {
  const ce = Math.cos(orbit.elevation);
  return add(orbit.target, [
    orbit.radius * ce * Math.sin(orbit.azimuth),
    -orbit.radius * Math.sin(orbit.elevation),
    -orbit.radius * ce * Math.cos(orbit.azimuth),
  ]);
}

/** World-to-camera pose + intrinsics for the current state. */
export function cameraForState(state: ViewerState): RenderCamera {
  if (state.mode === "orbit") {
    const pose = lookAtPose(orbitEye(state.orbit), state.orbit.target, WORLD_UP);
    return { ...state.intrinsics, rot: pose.rot, t: pose.t };
  }
  // fly: rows of the world-to-camera rotation are the camera axes in world
  const rot = quatToMat(state.fly.orientation);
  const r: typeof rot = [
    rot[0], rot[3], rot[6],
    rot[1], rot[4], rot[7],
    rot[2], rot[5], rot[8],
  ];
  const e = state.fly.eye;
  const t: Vec3 = [
    -(r[0] * e[0] + r[1] * e[1] + r[2] * e[2]),
    -(r[3] * e[0] + r[4] * e[1] + r[5] * e[2]),
    -(r[6] * e[0] + r[7] * e[1] + r[8] * e[2]),
  ];
  return { ...state.intrinsics, rot: r, t };
}

function applyOne(state: ViewerState, ev: ViewerEvent): ViewerState {
  const frames = state.bundle.meta.frame_count;
  switch (ev.kind) {
    case "orbit-drag":
      return {
        ...state,
        orbit: {
          ...state.orbit,
          azimuth: wrapAngle(state.orbit.azimuth + ev.dAzimuth),
          elevation: clamp(state.orbit.elevation + ev.dElevation, -MAX_ELEVATION, MAX_ELEVATION),
        },
      };
    case "dolly":
      if (!(ev.factor > 0)) return state;
      return {
        ...state,
        orbit: { ...state.orbit, radius: Math.max(MIN_RADIUS, state.orbit.radius * ev.factor) },
      };
    case "fly-move": {
      // camera axes in world space are the columns of quatToMat(orientation);
      // camera y points down, so image-up is camera -y
      const m = quatToMat(state.fly.orientation);
      const dy = -ev.up;
      const deltaWorld: Vec3 = [
        m[0] * ev.right + m[1] * dy + m[2] * ev.forward,
        m[3] * ev.right + m[4] * dy + m[5] * ev.forward,
        m[6] * ev.right + m[7] * dy + m[8] * ev.forward,
      ];
      return { ...state, fly: { ...state.fly, eye: add(state.fly.eye, deltaWorld) } };
    }
    case "fly-look": {
      const m = quatToMat(state.fly.orientation);
      const rightAxis: Vec3 = [m[0], m[3], m[6]];
      const yawQ = quatFromAxisAngle(WORLD_UP, -ev.yaw);
      const pitchQ = quatFromAxisAngle(rightAxis, ev.pitch);
      const orientation = quatNormalize(quatMul(quatMul(yawQ, pitchQ), state.fly.orientation));
      return { ...state, fly: { ...state.fly, orientation } };
    }
    case "set-mode": {
      if (ev.mode === state.mode) return state;
      if (ev.mode === "fly") {
        // hand the fly camera the current orbit pose so the view is continuous
        const pose = lookAtPose(orbitEye(state.orbit), state.orbit.target, WORLD_UP);
        const orientation = matToQuat(pose.rot);
        return { ...state, mode: "fly", fly: { eye: orbitEye(state.orbit), orientation } };
      }
      return { ...state, mode: "orbit" };
    }
    case "scrub": {
      const frame = clamp(Math.round(ev.frame), 0, frames - 1);
      return { ...state, frame, pending: 0 };
    }
    case "play-pause":
      if (frames <= 1) return { ...state, playing: false };
      return { ...state, playing: !state.playing, pending: 0 };
    case "set-fps":
      if (!(ev.fps > 0)) return state;
      return { ...state, fps: ev.fps };
    case "tick": {
      if (!state.playing || !(ev.dt > 0)) return state;
      // accumulate toward whole frame steps; no absolute clock, so long
      // playback never drifts or skips from float accumulation error
      const pending = state.pending + ev.dt;
      const steps = Math.floor(pending * state.fps);
      if (steps <= 0) return { ...state, pending };
      return {
        ...state,
        pending: pending - steps / state.fps,
        frame: (state.frame + steps) % frames,
      };
    }
  }
}

/** Transposed-rotation quaternion extraction (camera-to-world from the
 * world-to-camera rotation produced by lookAtPose). */
function matToQuat(w2c: number[]): Quat {
  // camera-to-world = transpose
  const m = [w2c[0], w2c[3], w2c[6], w2c[1], w2c[4], w2c[7], w2c[2], w2c[5], w2c[8]];
  const tr = m[0] + m[4] + m[8];
  let q: Quat;
  if (tr > 0) {
    const s = Math.sqrt(tr + 1) * 2;
    q = [s / 4, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s];
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const s = Math.sqrt(1 + m[0] - m[4] - m[8]) * 2;
    q = [(m[7] - m[5]) / s, s / 4, (m[1] + m[3]) / s, (m[2] + m[6]) / s];
  } else if (m[4] > m[8]) {
    const s = Math.sqrt(1 + m[4] - m[0] - m[8]) * 2;
    q = [(m[2] - m[6]) / s, (m[1] + m[3]) / s, s / 4, (m[5] + m[7]) / s];
  } else {
    const s = Math.sqrt(1 + m[8] - m[0] - m[4]) * 2;
    q = [(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, s / 4];
  }
  return quatNormalize(q);
}

export function interact(state: ViewerState, events: ViewerEvent[]): ViewerState {
  let s = state;
  for (const ev of events) s = applyOne(s, ev);
  return s;
}

/** Cloud for the state's current frame; bounds-checked against the bundle. */
export function currentFrame(state: ViewerState) {
  const f = state.bundle.frames[state.frame];
  if (!f) throw new Error(`frame ${state.frame} outside bundle of ${state.bundle.frames.length}`);
  return f;
}
