/** DOM shell: one viewport, one sidebar, no framework.
 *
 * The canvas overlay draws wireframes from the server's projected
 * corners; only the live drag preview is projected client-side, and it
 * snaps back to server truth the moment the commit answer arrives.
 */

import { Session } from "./session";
import { projectBoxCorners, quatFromAxisAngle, quatToMatrix } from "./geometry";
import { edgesFromCorners } from "./overlay";
import type { AnnotationsDoc, FrameDoc, Vec3 } from "./types";
import type { GizmoMode, RenderMode } from "./state";

const OBJECT_COLORS = ["#ffb000", "#00c0ff", "#7cff5e", "#ff5e8e", "#c08aff", "#ffe75e"];
const PREVIEW_COLOR = "#ffffff";

interface AnnotationCacheEntry {
  frameIndex: number;
  revision: number;
  doc: AnnotationsDoc;
}

export class App {
  private readonly session: Session;
  private readonly root: HTMLElement;
  private img!: HTMLImageElement;
  private canvas!: HTMLCanvasElement;
  private sidebar!: HTMLElement;
  private banner!: HTMLElement;
  private annotationCache: AnnotationCacheEntry | null = null;
  private pointer: { x: number; y: number } | null = null;

  constructor(root: HTMLElement, session: Session) {
    this.root = root;
    this.session = session;
    this.buildDom();
    this.bindEvents();
    this.render();
  }

  private frame(): FrameDoc {
    return this.session.scene.frames[this.session.viewport.frameIndex];
  }

  private buildDom(): void {
    this.root.innerHTML = "";
    this.banner = el("div", "banner hidden");
    const viewport = el("div", "viewport");
    this.img = document.createElement("img");
    this.img.className = "frame-image";
    this.img.draggable = false;
    this.canvas = document.createElement("canvas");
    this.canvas.className = "frame-overlay";
    viewport.append(this.img, this.canvas);
    this.sidebar = el("div", "sidebar");
    const main = el("div", "main");
    main.append(viewport, this.sidebar);
    this.root.append(this.banner, main);
  }

  private bindEvents(): void {
    window.addEventListener("keydown", (e) => {
      if (e.target instanceof HTMLInputElement) return;
      this.session.handleKey(e.key);
      this.render();
    });
    this.canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    this.canvas.addEventListener("pointerup", (e) => this.onPointerUp(e));
    this.img.addEventListener("load", () => this.drawOverlay());
  }

  // -- drag input --------------------------------------------------------

  private canvasPoint(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    const sx = this.canvas.width / rect.width;
    const sy = this.canvas.height / rect.height;
    return { x: (e.clientX - rect.left) * sx, y: (e.clientY - rect.top) * sy };
  }

  private onPointerDown(e: PointerEvent): void {
    if (this.session.viewport.selectedObject === null) return;
    if (!this.session.beginDrag()) return;
    this.canvas.setPointerCapture(e.pointerId);
    this.pointer = this.canvasPoint(e);
  }

  private onPointerMove(e: PointerEvent): void {
    if (!this.session.drag || !this.pointer) return;
    const p = this.canvasPoint(e);
    const dx = p.x - this.pointer.x;
    const dy = p.y - this.pointer.y;
    this.pointer = p;
    const drag = this.session.drag;
    const frame = this.frame();
    if (drag.mode === "translate") {
      this.session.updateDrag({ translate: pixelDeltaToWorld(frame, drag.basePose.t, dx, dy) });
    } else if (drag.mode === "rotate") {
      const m = quatToMatrix(frame.pose.q);
      // camera forward in world coordinates; screen-x drag spins about it
      const axis: Vec3 = [-m[0][2], -m[1][2], -m[2][2]];
      this.session.updateDrag({ rotate: quatFromAxisAngle(axis, dx * 0.01) });
    } else {
      this.session.updateDrag({ scale: Math.exp(-dy * 0.005) });
    }
    this.drawOverlay();
  }

  private onPointerUp(e: PointerEvent): void {
    this.canvas.releasePointerCapture(e.pointerId);
    this.pointer = null;
    if (!this.session.drag) return;
    void this.session.commitDrag().then(() => this.render());
  }

  // -- rendering ---------------------------------------------------------

  render(): void {
    const frame = this.frame();
    const longEdge = Math.max(frame.width, frame.height);
    this.canvas.width = frame.width;
    this.canvas.height = frame.height;
    const url = this.session.api.renderUrl(frame.index, this.session.viewport.renderMode, {
      size: longEdge,
    });
    if (this.img.src !== url) this.img.src = url;
    this.renderBanner();
    this.renderSidebar();
    void this.ensureAnnotations().then(() => this.drawOverlay());
  }

  private renderBanner(): void {
    const c = this.session.conflict;
    if (!c) {
      this.banner.className = "banner hidden";
      this.banner.textContent = "";
      return;
    }
    this.banner.className = "banner conflict";
    this.banner.textContent = `edit rejected, project reloaded: ${c.detail}`;
    const dismiss = document.createElement("button");
    dismiss.textContent = "dismiss";
    dismiss.addEventListener("click", () => {
      this.session.clearConflict();
      this.render();
    });
    this.banner.append(" ", dismiss);
  }

  private renderSidebar(): void {
    const s = this.session;
    const v = s.viewport;
    this.sidebar.innerHTML = "";

    const nav = el("div", "row");
    for (const [label, action] of [
      ["|<", "first"],
      ["<", "prev"],
      [">", "next"],
      [">|", "last"],
    ] as const) {
      const b = document.createElement("button");
      b.textContent = label;
      b.addEventListener("click", () => {
        s.navigate(action);
        this.render();
      });
      nav.append(b);
    }
    nav.append(span(`frame ${v.frameIndex + 1}/${v.frameCount}`));
    this.sidebar.append(section("frames", nav));

    const modes = el("div", "row");
    for (const mode of ["rgb", "field_depth", "overlay"] as RenderMode[]) {
      const b = document.createElement("button");
      b.textContent = mode;
      b.className = mode === v.renderMode ? "active" : "";
      b.addEventListener("click", () => {
        s.setRenderMode(mode);
        this.render();
      });
      modes.append(b);
    }
    this.sidebar.append(section("render", modes));

    const list = el("div", "objects");
    for (const obj of s.project.objects) {
      const row = el("div", obj.id === v.selectedObject ? "object selected" : "object");
      row.textContent = `#${obj.id} ${obj.class_name} (${obj.kind})`;
      row.style.borderLeftColor = colorFor(obj.id);
      row.addEventListener("click", () => {
        s.select(obj.id === v.selectedObject ? null : obj.id);
        this.render();
      });
      list.append(row);
    }
    if (s.project.objects.length === 0) list.append(span("no objects"));
    this.sidebar.append(section(`objects (rev ${s.revision})`, list));

    const gizmos = el("div", "row");
    for (const mode of ["translate", "rotate", "scale"] as GizmoMode[]) {
      const b = document.createElement("button");
      b.textContent = mode;
      b.disabled = s.gizmo() === null;
      b.className = s.gizmo() === mode ? "active" : "";
      b.addEventListener("click", () => {
        s.setGizmoMode(mode);
        this.render();
      });
      gizmos.append(b);
    }
    this.sidebar.append(section("gizmo", gizmos));

    const tools = el("div", "row");
    const selected = v.selectedObject === null ? null : s.getObject(v.selectedObject);
    for (const [label, run] of [
      ["icp", () => s.runIcp(v.selectedObject!)],
      ["tight fit", () => s.runTightFit(v.selectedObject!)],
      ["extract mesh", () => s.runExtractMesh(v.selectedObject!)],
    ] as const) {
      const b = document.createElement("button");
      b.textContent = label;
      b.disabled =
        selected === null ||
        (label !== "icp" && selected.kind !== "box");
      b.addEventListener("click", () => {
        b.disabled = true;
        void run()
          .catch((err) => this.showError(err))
          .finally(() => this.render());
      });
      tools.append(b);
    }
    this.sidebar.append(section("tools", tools));
  }

  private showError(err: unknown): void {
    this.banner.className = "banner conflict";
    this.banner.textContent = String(err instanceof Error ? err.message : err);
  }

  private async ensureAnnotations(): Promise<void> {
    const frameIndex = this.session.viewport.frameIndex;
    const revision = this.session.revision;
    const c = this.annotationCache;
    if (c && c.frameIndex === frameIndex && c.revision === revision) return;
    const doc = await this.session.annotations(frameIndex);
    this.annotationCache = { frameIndex, revision: doc.revision, doc };
  }

  private drawOverlay(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const cache = this.annotationCache;
    const drag = this.session.drag;
    const frame = this.frame();
    if (cache && cache.frameIndex === frame.index) {
      for (const obj of cache.doc.objects) {
        if (drag && drag.objectId === obj.id) continue;
        const selected = obj.id === this.session.viewport.selectedObject;
        strokeEdges(ctx, edgesFromCorners(obj.corners_px), colorFor(obj.id), selected ? 2 : 1);
      }
    }
    if (drag) {
      const obj = this.session.getObject(drag.objectId);
      const pose = this.session.displayedPose(drag.objectId);
      if (obj && pose && obj.half_extents) {
        const k = this.session.displayedScale(drag.objectId);
        const half: Vec3 = [
          obj.half_extents[0] * k,
          obj.half_extents[1] * k,
          obj.half_extents[2] * k,
        ];
        const corners = projectBoxCorners(frame, pose, half);
        strokeEdges(ctx, edgesFromCorners(corners), PREVIEW_COLOR, 2);
      }
    }
  }
}

function pixelDeltaToWorld(frame: FrameDoc, center: Vec3, dx: number, dy: number): Vec3 {
  const m = quatToMatrix(frame.pose.q);
  const d: Vec3 = [
    center[0] - frame.pose.t[0],
    center[1] - frame.pose.t[1],
    center[2] - frame.pose.t[2],
  ];
  const z = -(m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2]);
  const depth = Math.max(z, 1e-3);
  // camera-plane step matching the projection, rotated back to world
  const cx = (dx * depth) / frame.fx;
  const cy = (dy * depth) / frame.fy;
  return [
    m[0][0] * cx + m[0][1] * cy,
    m[1][0] * cx + m[1][1] * cy,
    m[2][0] * cx + m[2][1] * cy,
  ];
}

function strokeEdges(
  ctx: CanvasRenderingContext2D,
  segments: ReturnType<typeof edgesFromCorners>,
  color: string,
  width: number,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  for (const seg of segments) {
    ctx.moveTo(seg.from[0], seg.from[1]);
    ctx.lineTo(seg.to[0], seg.to[1]);
  }
  ctx.stroke();
}

function colorFor(objectId: number): string {
  return OBJECT_COLORS[objectId % OBJECT_COLORS.length];
}

function el(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}

function span(text: string): HTMLElement {
  const node = document.createElement("span");
  node.textContent = text;
  return node;
}

function section(title: string, body: HTMLElement): HTMLElement {
  const wrap = el("div", "section");
  const h = el("h3", "");
  h.textContent = title;
  wrap.append(h, body);
  return wrap;
}
