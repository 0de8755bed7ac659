/** Thin typed client for the annotation service HTTP API.
 *
 * Every method maps to exactly one endpoint. Geometry truth (projected
 * corners, camera-space boxes) is only ever read from the server; the
 * client never invents it. The fetch implementation is injectable so
 * tests can run against an in-memory fake.
 */

import type {
  AnnotationsDoc,
  EditsEnvelope,
  ExtractEnvelope,
  IcpEnvelope,
  ObjectDoc,
  ObjectEnvelope,
  PoseDoc,
  ProjectDoc,
  ProjectEnvelope,
  SceneDoc,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

/** Raised on 409: someone else committed first, refetch before retrying. */
export class ConflictError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = "ConflictError";
  }
}

async function readDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return res.statusText || "request failed";
  }
}

export interface RenderOptions {
  size?: number;
}

export class Api {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      const detail = await readDetail(res);
      if (res.status === 409) throw new ConflictError(detail);
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  getScene(): Promise<SceneDoc> {
    return this.request("GET", "/scene");
  }

  getProject(): Promise<ProjectEnvelope> {
    return this.request("GET", "/project");
  }

  putProject(revision: number, project: ProjectDoc): Promise<ProjectEnvelope> {
    return this.request("PUT", "/project", { revision, project });
  }

  postObject(revision: number, object: ObjectDoc): Promise<ObjectEnvelope> {
    return this.request("POST", "/objects", { revision, object });
  }

  patchPose(objectId: number, revision: number, pose: PoseDoc): Promise<ObjectEnvelope> {
    return this.request("PATCH", `/objects/${objectId}/pose`, { revision, pose });
  }

  icp(objectId: number, revision: number, config?: Record<string, unknown>): Promise<IcpEnvelope> {
    const body: Record<string, unknown> = { revision };
    if (config) body.config = config;
    return this.request("POST", `/objects/${objectId}/icp`, body);
  }

  tightFit(
    objectId: number,
    revision: number,
    config?: Record<string, unknown>,
  ): Promise<ObjectEnvelope> {
    const body: Record<string, unknown> = { revision };
    if (config) body.config = config;
    return this.request("POST", `/objects/${objectId}/tight-fit`, body);
  }

  extractMesh(
    objectId: number,
    revision: number,
    config?: Record<string, unknown>,
  ): Promise<ExtractEnvelope> {
    const body: Record<string, unknown> = { revision };
    if (config) body.config = config;
    return this.request("POST", `/objects/${objectId}/extract-mesh`, body);
  }

  annotations(frameIndex: number): Promise<AnnotationsDoc> {
    return this.request("GET", `/frames/${frameIndex}/annotations`);
  }

  edits(): Promise<EditsEnvelope> {
    return this.request("GET", "/edits");
  }

  renderUrl(frameIndex: number, mode: string, opts: RenderOptions = {}): string {
    const params = new URLSearchParams({ mode });
    if (opts.size !== undefined) params.set("size", String(opts.size));
    return `${this.baseUrl}/frames/${frameIndex}/render?${params}`;
  }

  previewMasksUrl(frameIndex: number, occlusion: "none" | "field" = "none"): string {
    return `${this.baseUrl}/frames/${frameIndex}/preview-masks?occlusion=${occlusion}`;
  }
}
