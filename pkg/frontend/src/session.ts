/** Client session: server truth plus transient UI state.
 *
 * The session carries the last project snapshot and its revision, the
 * viewport reducer state, and at most one in-flight drag. Commits use
 * optimistic concurrency: a 409 from the server means someone else won,
 * so the drag is discarded and the project refetched verbatim. Nothing
 * is ever replayed on top of a conflict.
 */

import { Api, ApiError, ConflictError } from "./api";
import {
  DragState,
  DragUpdate,
  GizmoMode,
  NavAction,
  RenderMode,
  ViewportState,
  activeGizmo,
  beginDrag,
  composedPose,
  dragIsIdentity,
  initialViewport,
  keyAction,
  navigate,
  selectObject,
  setGizmoMode,
  setRenderMode,
  updateDrag,
} from "./state";
import type {
  AnnotationsDoc,
  ObjectDoc,
  PoseDoc,
  ProjectDoc,
  SceneDoc,
} from "./types";

export interface ConflictInfo {
  detail: string;
  at: number;
}

function scaleObjectInProject(
  project: ProjectDoc,
  objectId: number,
  factor: number,
  pose: PoseDoc,
): ProjectDoc {
  const objects = project.objects.map((o) => {
    if (o.id !== objectId) return o;
    const next: ObjectDoc = { ...o, pose };
    if (o.kind === "box" && o.half_extents) {
      next.half_extents = [
        o.half_extents[0] * factor,
        o.half_extents[1] * factor,
        o.half_extents[2] * factor,
      ];
    } else {
      next.scale = (o.scale ?? 1) * factor;
    }
    return next;
  });
  return { ...project, objects };
}

export class Session {
  readonly api: Api;
  scene: SceneDoc;
  project: ProjectDoc;
  revision: number;
  viewport: ViewportState;
  drag: DragState | null = null;
  conflict: ConflictInfo | null = null;

  private constructor(api: Api, scene: SceneDoc, project: ProjectDoc, revision: number) {
    this.api = api;
    this.scene = scene;
    this.project = project;
    this.revision = revision;
    this.viewport = initialViewport(scene.frames.length);
  }

  static async connect(api: Api): Promise<Session> {
    const scene = await api.getScene();
    const env = await api.getProject();
    return new Session(api, scene, env.project, env.revision);
  }

  // -- viewport ----------------------------------------------------------

  navigate(action: NavAction): void {
    this.viewport = navigate(this.viewport, action);
  }

  handleKey(key: string): void {
    if (key === "Escape") {
      this.cancelDrag();
      return;
    }
    this.viewport = keyAction(this.viewport, key);
  }

  select(objectId: number | null): void {
    if (this.drag && this.drag.objectId !== objectId) this.cancelDrag();
    this.viewport = selectObject(this.viewport, objectId);
  }

  setRenderMode(mode: RenderMode): void {
    this.viewport = setRenderMode(this.viewport, mode);
  }

  setGizmoMode(mode: GizmoMode): void {
    this.viewport = setGizmoMode(this.viewport, mode);
  }

  gizmo(): GizmoMode | null {
    return activeGizmo(this.viewport);
  }

  // -- project access ----------------------------------------------------

  getObject(objectId: number): ObjectDoc | null {
    return this.project.objects.find((o) => o.id === objectId) ?? null;
  }

  /** Server pose, overridden by the live drag preview when one exists. */
  displayedPose(objectId: number): PoseDoc | null {
    if (this.drag && this.drag.objectId === objectId) {
      return composedPose(this.drag);
    }
    return this.getObject(objectId)?.pose ?? null;
  }

  // -- drag machine ------------------------------------------------------

  beginDrag(): boolean {
    const mode = this.gizmo();
    const id = this.viewport.selectedObject;
    if (mode === null || id === null) return false;
    const obj = this.getObject(id);
    if (!obj) return false;
    this.drag = beginDrag(id, mode, obj.pose);
    return true;
  }

  updateDrag(u: DragUpdate): void {
    if (!this.drag) return;
    this.drag = updateDrag(this.drag, u);
  }

  /** ESC path: throw the preview away, no request leaves the client. */
  cancelDrag(): void {
    this.drag = null;
  }

  /** Drag scale factor for previews; 1 outside a scale drag. */
  displayedScale(objectId: number): number {
    if (this.drag && this.drag.objectId === objectId) return this.drag.scale;
    return 1;
  }

  /**
   * Drag end: exactly one request carrying the composed delta. Pose
   * drags PATCH the pose; scale drags rewrite the object's extents via
   * a wholesale project PUT since pose alone cannot express them. On
   * success the server's answer becomes local truth; on conflict the
   * drag is dropped and the project refetched.
   */
  async commitDrag(): Promise<boolean> {
    const d = this.drag;
    this.drag = null;
    if (!d || dragIsIdentity(d)) return false;
    const pose = composedPose(d);
    try {
      if (d.mode === "scale" && d.scale !== 1) {
        const env = await this.api.putProject(
          this.revision,
          scaleObjectInProject(this.project, d.objectId, d.scale, pose),
        );
        this.project = env.project;
        this.revision = env.revision;
      } else {
        const env = await this.api.patchPose(d.objectId, this.revision, pose);
        this.applyObject(env.revision, env.object);
      }
      return true;
    } catch (err) {
      if (await this.recoverIfStale(err)) return false;
      throw err;
    }
  }

  // -- server tools ------------------------------------------------------

  async runIcp(objectId: number, config?: Record<string, unknown>): Promise<boolean> {
    try {
      const env = await this.api.icp(objectId, this.revision, config);
      this.applyObject(env.revision, env.object);
      return true;
    } catch (err) {
      if (await this.recoverIfStale(err)) return false;
      throw err;
    }
  }

  async runTightFit(objectId: number, config?: Record<string, unknown>): Promise<boolean> {
    try {
      const env = await this.api.tightFit(objectId, this.revision, config);
      this.applyObject(env.revision, env.object);
      return true;
    } catch (err) {
      if (await this.recoverIfStale(err)) return false;
      throw err;
    }
  }

  async runExtractMesh(objectId: number, config?: Record<string, unknown>): Promise<boolean> {
    try {
      const env = await this.api.extractMesh(objectId, this.revision, config);
      this.applyObject(env.revision, env.object);
      return true;
    } catch (err) {
      if (await this.recoverIfStale(err)) return false;
      throw err;
    }
  }

  async addObject(object: ObjectDoc): Promise<boolean> {
    try {
      const env = await this.api.postObject(this.revision, object);
      // POST returns only the new object; pull the whole project so the
      // local list matches the server ordering
      this.revision = env.revision;
      await this.refresh();
      return true;
    } catch (err) {
      if (await this.recoverIfStale(err)) return false;
      throw err;
    }
  }

  async refresh(): Promise<void> {
    const env = await this.api.getProject();
    this.project = env.project;
    this.revision = env.revision;
    if (
      this.viewport.selectedObject !== null &&
      !this.project.objects.some((o) => o.id === this.viewport.selectedObject)
    ) {
      this.viewport = selectObject(this.viewport, null);
    }
  }

  annotations(frameIndex: number): Promise<AnnotationsDoc> {
    return this.api.annotations(frameIndex);
  }

  clearConflict(): void {
    this.conflict = null;
  }

  // -- internals ---------------------------------------------------------

  private applyObject(revision: number, object: ObjectDoc): void {
    this.revision = revision;
    const i = this.project.objects.findIndex((o) => o.id === object.id);
    const objects = [...this.project.objects];
    if (i >= 0) objects[i] = object;
    else objects.push(object);
    this.project = { ...this.project, objects };
  }

  /**
   * A 409 means someone else committed first; a 404 on a mutation means
   * the object itself vanished under us. Both ways the local snapshot is
   * stale: drop the drag, record what happened, refetch server truth.
   */
  private async recoverIfStale(err: unknown): Promise<boolean> {
    const stale =
      err instanceof ConflictError || (err instanceof ApiError && err.status === 404);
    if (!stale) return false;
    this.drag = null;
    this.conflict = { detail: (err as ApiError).detail, at: Date.now() };
    await this.refresh();
    return true;
  }
}
