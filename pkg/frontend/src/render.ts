/** CPU splat renderer with the same semantics as the training-side engine.
 *
 * Forward only: project each Gaussian to a screen-space ellipse via the
 * local-affine (Jacobian) approximation with a 0.3 px^2 lowpass floor,
 * depth-sort, then alpha-blend front to back per pixel with
 * alpha = min(0.99, opacity * exp(-0.5 * mahalanobis)), skipping
 * contributions below 1/255 and stopping once transmittance drops under
 * 1e-4; leftover transmittance takes the background color. Degree-1
 * spherical harmonics are evaluated per splat for the direction from the
 * camera center, as 0.5 + [C0, C1*y, C1*z, C1*x] . coeffs, clamped to [0,1].
 */

import type { CameraEntry, FrameCloud } from "./format.js";
import { BundleError } from "./format.js";
import type { Mat3, Vec3 } from "./math.js";
import { matTVec, matVec } from "./math.js";

export const LOWPASS_PX2 = 0.3;
export const SH_C0 = 0.28209479177387814;
export const SH_C1 = 0.4886025119029199;

export interface RenderCamera {
  rot: Mat3; // world-to-camera rotation, row-major
  t: Vec3; // world-to-camera translation
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  nearClip: number;
}

export interface RenderSettings {
  alphaClamp: number;
  skipAlpha: number;
  stopTransmittance: number;
}

export const DEFAULT_SETTINGS: RenderSettings = {
  alphaClamp: 0.99,
  skipAlpha: 1 / 255,
  stopTransmittance: 1e-4,
};

export interface RenderResult {
  image: Float64Array; // (H, W, 3) row-major in [0, 1]
  alphaMap: Float64Array; // (H, W) accumulated opacity
  splatCount: number; // Gaussians surviving the near-plane cull
}

export function cameraFromEntry(entry: CameraEntry): RenderCamera {
  const m = entry.world_to_camera;
  if (!Array.isArray(m) || m.length !== 4 || m.some((r) => !Array.isArray(r) || r.length !== 4)) {
    throw new BundleError(`camera ${entry.id}: world_to_camera must be 4x4`);
  }
  const rot: Mat3 = [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]];
  return {
    rot,
    t: [m[0][3], m[1][3], m[2][3]],
    fx: entry.fx,
    fy: entry.fy,
    cx: entry.cx,
    cy: entry.cy,
    width: entry.width,
    height: entry.height,
    nearClip: entry.near_clip ?? 0.01,
  };
}

export function cameraPosition(camera: RenderCamera): Vec3 {
  return matTVec(camera.rot, camera.t).map((v) => -v) as Vec3;
}

interface Prepared {
  order: Int32Array; // survivor index into the flat arrays below, depth-sorted
  u: Float64Array;
  v: Float64Array;
  conA: Float64Array; // conic [ [a, b], [b, d] ]
  conB: Float64Array;
  conD: Float64Array;
  op: Float64Array;
  col: Float64Array; // (M, 3)
  bx0: Float64Array; // inclusive pixel-space footprint bounds
  bx1: Float64Array;
  by0: Float64Array;
  by1: Float64Array;
}

/** Project, cull, color, and depth-sort every splat for one camera. */
function prepare(cloud: FrameCloud, camera: RenderCamera, settings: RenderSettings): Prepared {
  const n = cloud.count;
  const { rot, t, fx, fy, cx, cy } = camera;
  const pos = cameraPosition(camera);

  const keep: number[] = [];
  const depth: number[] = [];
  for (let i = 0; i < n; i++) {
    const mx = cloud.means[i * 3];
    const my = cloud.means[i * 3 + 1];
    const mz = cloud.means[i * 3 + 2];
    const z = rot[6] * mx + rot[7] * my + rot[8] * mz + t[2];
    if (z > camera.nearClip) {
      keep.push(i);
      depth.push(z);
    }
  }
  const order = new Int32Array(keep.length);
  for (let j = 0; j < keep.length; j++) order[j] = j;
  // stable depth order, ties broken by original index
  order.sort((a, b) => depth[a] - depth[b] || keep[a] - keep[b]);

  const m = keep.length;
  const out: Prepared = {
    order,
    u: new Float64Array(m),
    v: new Float64Array(m),
    conA: new Float64Array(m),
    conB: new Float64Array(m),
    conD: new Float64Array(m),
    op: new Float64Array(m),
    col: new Float64Array(m * 3),
    bx0: new Float64Array(m),
    bx1: new Float64Array(m),
    by0: new Float64Array(m),
    by1: new Float64Array(m),
  };

  for (let j = 0; j < m; j++) {
    const i = keep[j];
    const mean: Vec3 = [cloud.means[i * 3], cloud.means[i * 3 + 1], cloud.means[i * 3 + 2]];
    const pc = matVec(rot, mean);
    const x = pc[0] + t[0];
    const y = pc[1] + t[1];
    const z = depth[j];
    out.u[j] = (fx * x) / z + cx;
    out.v[j] = (fy * y) / z + cy;

    // world covariance R_q diag(s^2) R_q^T from the stored unit quaternion
    let qw = cloud.quats[i * 4];
    let qx = cloud.quats[i * 4 + 1];
    let qy = cloud.quats[i * 4 + 2];
    let qz = cloud.quats[i * 4 + 3];
    const qn = Math.hypot(qw, qx, qy, qz);
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const rq = [
      1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
      2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
      2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
    ];
    const v0 = cloud.scales[i * 3] * cloud.scales[i * 3];
    const v1 = cloud.scales[i * 3 + 1] * cloud.scales[i * 3 + 1];
    const v2 = cloud.scales[i * 3 + 2] * cloud.scales[i * 3 + 2];
    const sig = new Float64Array(9);
    for (let r = 0; r < 3; r++)
      for (let c = 0; c < 3; c++)
        sig[r * 3 + c] =
          rq[r * 3] * v0 * rq[c * 3] +
          rq[r * 3 + 1] * v1 * rq[c * 3 + 1] +
          rq[r * 3 + 2] * v2 * rq[c * 3 + 2];

    // M = J R_w (2x3), cov2d = M Sigma M^T + lowpass floor
    const j00 = fx / z, j02 = (-fx * x) / (z * z);
    const j11 = fy / z, j12 = (-fy * y) / (z * z);
    const mRow = [
      j00 * rot[0] + j02 * rot[6], j00 * rot[1] + j02 * rot[7], j00 * rot[2] + j02 * rot[8],
      j11 * rot[3] + j12 * rot[6], j11 * rot[4] + j12 * rot[7], j11 * rot[5] + j12 * rot[8],
    ];
    let covA = LOWPASS_PX2, covB = 0, covD = LOWPASS_PX2;
    for (let r = 0; r < 3; r++)
      for (let c = 0; c < 3; c++) {
        const s = sig[r * 3 + c];
        covA += mRow[r] * s * mRow[c];
        covB += mRow[r] * s * mRow[3 + c];
        covD += mRow[3 + r] * s * mRow[3 + c];
      }
    const det = covA * covD - covB * covB;
    out.conA[j] = covD / det;
    out.conB[j] = -covB / det;
    out.conD[j] = covA / det;

    const opac = cloud.opacities[i];
    out.op[j] = opac;

    // view color: degree-1 SH of the unit direction camera -> splat
    let dx = mean[0] - pos[0], dy = mean[1] - pos[1], dz = mean[2] - pos[2];
    const dist = Math.max(Math.hypot(dx, dy, dz), 1e-12);
    dx /= dist; dy /= dist; dz /= dist;
    for (let c = 0; c < 3; c++) {
      const raw =
        0.5 +
        SH_C0 * cloud.sh[i * 12 + c] +
        SH_C1 * dy * cloud.sh[i * 12 + 3 + c] +
        SH_C1 * dz * cloud.sh[i * 12 + 6 + c] +
        SH_C1 * dx * cloud.sh[i * 12 + 9 + c];
      out.col[j * 3 + c] = Math.min(1, Math.max(0, raw));
    }

    // conservative footprint: covers every pixel whose alpha survives the
    // skip threshold (and at least 3 sigma), so pruning it is lossless
    if (settings.skipAlpha > 0) {
      const ratio = Math.max(opac / settings.skipAlpha, 1);
      const r = Math.sqrt(Math.max(9, 2 * Math.log(ratio)));
      const hx = r * Math.sqrt(Math.max(covA, 0));
      const hy = r * Math.sqrt(Math.max(covD, 0));
      out.bx0[j] = out.u[j] - hx;
      out.bx1[j] = out.u[j] + hx;
      out.by0[j] = out.v[j] - hy;
      out.by1[j] = out.v[j] + hy;
    } else {
      out.bx0[j] = -Infinity;
      out.bx1[j] = Infinity;
      out.by0[j] = -Infinity;
      out.by1[j] = Infinity;
    }
  }
  return out;
}

export function renderFrame(
  cloud: FrameCloud,
  camera: RenderCamera,
  background: [number, number, number] = [0, 0, 0],
  settings: RenderSettings = DEFAULT_SETTINGS,
): RenderResult {
  const { width: w, height: h } = camera;
  if (w <= 0 || h <= 0) throw new BundleError("camera image size must be positive");
  const p = prepare(cloud, camera, settings);
  const image = new Float64Array(h * w * 3);
  const alphaMap = new Float64Array(h * w);
  const m = p.order.length;

  for (let py = 0; py < h; py++) {
    for (let px = 0; px < w; px++) {
      let tr = 1.0;
      let r = 0, g = 0, b = 0;
      for (let k = 0; k < m; k++) {
        if (tr < settings.stopTransmittance) break;
        const j = p.order[k];
        if (px < p.bx0[j] || px > p.bx1[j] || py < p.by0[j] || py > p.by1[j]) continue;
        const du = px - p.u[j];
        const dv = py - p.v[j];
        const maha = p.conA[j] * du * du + 2 * p.conB[j] * du * dv + p.conD[j] * dv * dv;
        const alpha = Math.min(settings.alphaClamp, p.op[j] * Math.exp(-0.5 * maha));
        if (alpha < settings.skipAlpha) continue;
        const wgt = alpha * tr;
        r += wgt * p.col[j * 3];
        g += wgt * p.col[j * 3 + 1];
        b += wgt * p.col[j * 3 + 2];
        tr *= 1 - alpha;
      }
      const at = (py * w + px) * 3;
      image[at] = r + tr * background[0];
      image[at + 1] = g + tr * background[1];
      image[at + 2] = b + tr * background[2];
      alphaMap[py * w + px] = 1 - tr;
    }
  }
  return { image, alphaMap, splatCount: m };
}
