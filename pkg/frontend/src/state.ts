/** Pure viewport state and the drag state machine.
 *
 * Everything here is a plain reducer: no DOM, no network, no clocks.
 * The session layer owns side effects; tests drive these directly.
 */

import { quatMultiply, quatNormalize } from "./geometry";
import type { PoseDoc, Quat, Vec3 } from "./types";

export type RenderMode = "rgb" | "field_depth" | "overlay";
export type GizmoMode = "translate" | "rotate" | "scale";
export type NavAction = "first" | "prev" | "next" | "last";

export interface ViewportState {
  frameIndex: number;
  frameCount: number;
  renderMode: RenderMode;
  selectedObject: number | null;
  gizmoMode: GizmoMode;
}

export function initialViewport(frameCount: number): ViewportState {
  if (frameCount < 1) throw new Error("scene has no frames");
  return {
    frameIndex: 0,
    frameCount,
    renderMode: "rgb",
    selectedObject: null,
    gizmoMode: "translate",
  };
}

function clampFrame(index: number, count: number): number {
  return Math.min(Math.max(index, 0), count - 1);
}

/** Frame navigation clamps at both ends; it never wraps. */
export function navigate(s: ViewportState, action: NavAction): ViewportState {
  let target: number;
  switch (action) {
    case "first":
      target = 0;
      break;
    case "prev":
      target = s.frameIndex - 1;
      break;
    case "next":
      target = s.frameIndex + 1;
      break;
    case "last":
      target = s.frameCount - 1;
      break;
  }
  return { ...s, frameIndex: clampFrame(target, s.frameCount) };
}

const KEY_NAV: Record<string, NavAction> = {
  "{": "first",
  "[": "prev",
  "]": "next",
  "}": "last",
};

/** Keyboard dispatch; unknown keys leave the state untouched. */
export function keyAction(s: ViewportState, key: string): ViewportState {
  const nav = KEY_NAV[key];
  if (nav) return navigate(s, nav);
  return s;
}

export function selectObject(s: ViewportState, objectId: number | null): ViewportState {
  return { ...s, selectedObject: objectId };
}

export function setRenderMode(s: ViewportState, mode: RenderMode): ViewportState {
  return { ...s, renderMode: mode };
}

export function setGizmoMode(s: ViewportState, mode: GizmoMode): ViewportState {
  return { ...s, gizmoMode: mode };
}

/** The gizmo only exists while an object is selected. */
export function activeGizmo(s: ViewportState): GizmoMode | null {
  return s.selectedObject === null ? null : s.gizmoMode;
}

/**
 * One drag accumulates any number of pointer updates into a single
 * composed delta; commit sends exactly one PATCH, cancel sends none.
 */
export interface DragState {
  objectId: number;
  mode: GizmoMode;
  basePose: PoseDoc;
  deltaT: Vec3;
  deltaQ: Quat;
  scale: number;
}

export function beginDrag(objectId: number, mode: GizmoMode, basePose: PoseDoc): DragState {
  return {
    objectId,
    mode,
    basePose: { q: [...basePose.q] as Quat, t: [...basePose.t] as Vec3 },
    deltaT: [0, 0, 0],
    deltaQ: [1, 0, 0, 0],
    scale: 1,
  };
}

export interface DragUpdate {
  translate?: Vec3;
  rotate?: Quat;
  scale?: number;
}

export function updateDrag(d: DragState, u: DragUpdate): DragState {
  const next = { ...d };
  if (u.translate) {
    next.deltaT = [
      d.deltaT[0] + u.translate[0],
      d.deltaT[1] + u.translate[1],
      d.deltaT[2] + u.translate[2],
    ];
  }
  if (u.rotate) {
    next.deltaQ = quatNormalize(quatMultiply(u.rotate, d.deltaQ));
  }
  if (u.scale !== undefined) {
    next.scale = d.scale * u.scale;
  }
  return next;
}

/** Pose the drag currently represents; what a commit would send. */
export function composedPose(d: DragState): PoseDoc {
  return {
    q: quatNormalize(quatMultiply(d.deltaQ, d.basePose.q)),
    t: [
      d.basePose.t[0] + d.deltaT[0],
      d.basePose.t[1] + d.deltaT[1],
      d.basePose.t[2] + d.deltaT[2],
    ],
  };
}

export function dragIsIdentity(d: DragState): boolean {
  return (
    d.deltaT[0] === 0 &&
    d.deltaT[1] === 0 &&
    d.deltaT[2] === 0 &&
    d.deltaQ[0] === 1 &&
    d.deltaQ[1] === 0 &&
    d.deltaQ[2] === 0 &&
    d.deltaQ[3] === 0 &&
    d.scale === 1
  );
}
