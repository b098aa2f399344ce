/** Small dense linear algebra for the splat renderer and the camera rig.
 *
 * Vectors are plain number triples, 3x3 matrices are row-major number[9],
 * quaternions are [w, x, y, z]. Everything allocates; the hot rendering
 * loops in render.ts work on flat typed arrays instead.
 */

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // w, x, y, z
export type Mat3 = number[]; // row-major, length 9

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-12) throw new Error("cannot normalize near-zero vector");
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

export function matTVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
    m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
    m[2] * v[0] + m[5] * v[1] + m[8] * v[2],
  ];
}

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array<number>(9).fill(0);
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++) {
      let s = 0;
      for (let k = 0; k < 3; k++) s += a[i * 3 + k] * b[k * 3 + j];
      out[i * 3 + j] = s;
    }
  return out;
}

export function transpose(m: Mat3): Mat3 {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n < 1e-12) throw new Error("cannot normalize near-zero quaternion");
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

/** Rotation matrix from a unit quaternion; the formula assumes |q| = 1. */
export function quatToMat(q: Quat): Mat3 {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const u = normalize(axis);
  const h = angle / 2;
  const s = Math.sin(h);
  return [Math.cos(h), u[0] * s, u[1] * s, u[2] * s];
}

/** World-to-camera rotation and translation for a camera at `eye` looking
 * toward `target`; `up` points toward the top of the image in world space
 * (camera y grows downward, so up maps to camera -y). */
export function lookAtPose(eye: Vec3, target: Vec3, up: Vec3): { rot: Mat3; t: Vec3 } {
  const zc = sub(target, eye);
  const nz = norm(zc);
  if (nz < 1e-12) throw new Error("lookAt eye and target coincide");
  const z = scale(zc, 1 / nz);
  const xc = cross(z, up);
  const nx = norm(xc);
  if (nx < 1e-12) throw new Error("lookAt up direction is parallel to the view direction");
  const x = scale(xc, 1 / nx);
  const y = cross(z, x);
  const rot: Mat3 = [x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2]];
  return { rot, t: scale(matVec(rot, eye), -1) };
}
