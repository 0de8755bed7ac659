/** Wire types for the labeling service HTTP API. */

export type Quat = [number, number, number, number]; // w, x, y, z
export type Vec3 = [number, number, number];

export interface PoseDoc {
  q: Quat;
  t: Vec3;
}

export interface FrameDoc {
  index: number;
  image_path: string;
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  pose: PoseDoc;
  has_sensor_depth: boolean;
}

export interface SceneDoc {
  frames: FrameDoc[];
  scale: number;
  aabb: number[][];
}

export type ObjectKind = "box" | "mesh";

export interface ObjectDoc {
  id: number;
  class_name: string;
  kind: ObjectKind;
  pose: PoseDoc;
  half_extents?: Vec3 | null;
  mesh_ref?: string | null;
  scale?: number | null;
}

export interface ProjectDoc {
  scene_ref: string;
  class_table: Record<string, number>;
  objects: ObjectDoc[];
}

export interface ProjectEnvelope {
  revision: number;
  project: ProjectDoc;
}

export interface ObjectEnvelope {
  revision: number;
  object: ObjectDoc;
}

export interface IcpEnvelope extends ObjectEnvelope {
  residual_rms: number;
  iterations: number;
  correspondence_count: number;
}

export interface ExtractEnvelope extends ObjectEnvelope {
  triangle_count: number;
}

/** Projected box corner in pixels, or null when behind the camera. */
export type CornerPx = [number, number] | null;

export interface AnnotationObjectDoc {
  id: number;
  class_name: string;
  kind: ObjectKind;
  corners_px: CornerPx[];
  box3d_cam: { pose: PoseDoc; half_extents: Vec3 };
  pose_cam: PoseDoc;
}

export interface AnnotationsDoc {
  frame_index: number;
  revision: number;
  objects: AnnotationObjectDoc[];
}

export interface EditDoc {
  kind: string;
  object_id: number;
  payload: Record<string, unknown>;
}

export interface EditsEnvelope {
  revision: number;
  edits: EditDoc[];
}
