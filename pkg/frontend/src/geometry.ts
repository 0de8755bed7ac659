/** Client-side quaternion/projection math for drag previews.
 *
 * Mirrors the server's conventions exactly: unit quaternions in w,x,y,z
 * order, camera-to-world poses looking down -Z with +y up on the image
 * plane, and box corners ordered lexicographically by (-,-,-)..(+,+,+)
 * sign. Authoritative geometry always comes from the server; this exists
 * so transient previews land on the same pixels.
 */

import type { CornerPx, FrameDoc, PoseDoc, Quat, Vec3 } from "./types";

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n === 0) throw new Error("zero quaternion");
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleRad: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) throw new Error("zero axis");
  const h = angleRad / 2;
  const s = Math.sin(h) / n;
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** 3x3 rotation matrix, rows-major, from a unit quaternion. */
export function quatToMatrix(q: Quat): number[][] {
  const [w, x, y, z] = quatNormalize(q);
  return [
    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
  ];
}

export function rotatePoint(q: Quat, p: Vec3): Vec3 {
  const m = quatToMatrix(q);
  return [
    m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
    m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
    m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
  ];
}

export function applyPose(pose: PoseDoc, p: Vec3): Vec3 {
  const r = rotatePoint(pose.q, p);
  return [r[0] + pose.t[0], r[1] + pose.t[1], r[2] + pose.t[2]];
}

/** Sign order is shared API with the server: lexicographic, - before +. */
export const CORNER_SIGNS: Vec3[] = [
  [-1, -1, -1],
  [-1, -1, +1],
  [-1, +1, -1],
  [-1, +1, +1],
  [+1, -1, -1],
  [+1, -1, +1],
  [+1, +1, -1],
  [+1, +1, +1],
];

export function boxCorners(pose: PoseDoc, half: Vec3): Vec3[] {
  return CORNER_SIGNS.map((s) =>
    applyPose(pose, [s[0] * half[0], s[1] * half[1], s[2] * half[2]]),
  );
}

/**
 * World point to pixel coordinates through a camera-to-world frame.
 * Returns null when the point sits at or behind the camera plane.
 */
export function projectPoint(frame: FrameDoc, p: Vec3): CornerPx {
  const m = quatToMatrix(frame.pose.q);
  const d: Vec3 = [p[0] - frame.pose.t[0], p[1] - frame.pose.t[1], p[2] - frame.pose.t[2]];
  // camera frame: transpose of the rotation applied to the offset
  const cx = m[0][0] * d[0] + m[1][0] * d[1] + m[2][0] * d[2];
  const cy = m[0][1] * d[0] + m[1][1] * d[1] + m[2][1] * d[2];
  const cz = m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2];
  const z = -cz;
  if (z <= 1e-9) return null;
  return [frame.fx * (cx / z) + frame.cx, frame.fy * (cy / z) + frame.cy];
}

export function projectBoxCorners(frame: FrameDoc, pose: PoseDoc, half: Vec3): CornerPx[] {
  return boxCorners(pose, half).map((c) => projectPoint(frame, c));
}
