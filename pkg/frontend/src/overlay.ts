/** Wireframe assembly from projected box corners.
 *
 * Corner order matches the server: index bit 2 is the x sign, bit 1 the
 * y sign, bit 0 the z sign. Box edges join corners that differ in exactly
 * one bit. Corners behind the camera arrive as null and their edges are
 * simply skipped rather than clipped.
 */

import type { CornerPx } from "./types";

export const BOX_EDGES: ReadonlyArray<readonly [number, number]> = (() => {
  const edges: Array<[number, number]> = [];
  for (let a = 0; a < 8; a++) {
    for (const bit of [1, 2, 4]) {
      const b = a ^ bit;
      if (a < b) edges.push([a, b]);
    }
  }
  return edges;
})();

export interface Segment {
  from: [number, number];
  to: [number, number];
}

export function edgesFromCorners(corners: CornerPx[]): Segment[] {
  const out: Segment[] = [];
  for (const [a, b] of BOX_EDGES) {
    const pa = corners[a];
    const pb = corners[b];
    if (pa === null || pb === null || pa === undefined || pb === undefined) continue;
    out.push({ from: [pa[0], pa[1]], to: [pb[0], pb[1]] });
  }
  return out;
}

/** Centroid of the visible corners; null when none project. */
export function cornersCenter(corners: CornerPx[]): [number, number] | null {
  let sx = 0;
  let sy = 0;
  let n = 0;
  for (const c of corners) {
    if (!c) continue;
    sx += c[0];
    sy += c[1];
    n += 1;
  }
  if (n === 0) return null;
  return [sx / n, sy / n];
}
