import { beforeEach, describe, expect, it } from "vitest";

import { Api } from "../src/api";
import { Session } from "../src/session";
import { composedPose } from "../src/state";
import type { ProjectDoc, SceneDoc } from "../src/types";
import { FakeServer } from "./helpers/fake-server";

import sceneJson from "./fixtures/scene.json";
import projectJson from "./fixtures/project.json";

const scene = sceneJson as unknown as SceneDoc;
const project = (projectJson as unknown as { project: ProjectDoc }).project;

let server: FakeServer;

beforeEach(() => {
  server = new FakeServer(scene, project);
});

function connect(): Promise<Session> {
  return Session.connect(new Api("", server.fetch));
}

describe("connection", () => {
  it("loads scene and project and starts at revision 0", async () => {
    const s = await connect();
    expect(s.scene.frames).toHaveLength(3);
    expect(s.project.objects.map((o) => o.id)).toEqual([1, 2]);
    expect(s.revision).toBe(0);
    expect(s.viewport.frameCount).toBe(3);
  });
});

describe("drag lifecycle", () => {
  it("refuses to start without a selection", async () => {
    const s = await connect();
    expect(s.beginDrag()).toBe(false);
    expect(s.drag).toBeNull();
  });

  it("previews locally without touching the server", async () => {
    const s = await connect();
    s.select(1);
    expect(s.beginDrag()).toBe(true);
    s.updateDrag({ translate: [0.2, 0, 0] });
    s.updateDrag({ translate: [0, 0.1, 0] });
    const preview = s.displayedPose(1)!;
    expect(preview.t[0]).toBeCloseTo(0.2, 12);
    expect(preview.t[1]).toBeCloseTo(0.1, 12);
    // server still holds the original pose and saw no writes
    expect(server.objectPose(1).t).toEqual([0, 0, 0]);
    expect(server.requestsOf("PATCH")).toHaveLength(0);
  });

  it("escape cancels with no request and reverts the preview", async () => {
    const s = await connect();
    s.select(1);
    s.beginDrag();
    s.updateDrag({ translate: [5, 5, 5] });
    s.handleKey("Escape");
    expect(s.drag).toBeNull();
    expect(s.displayedPose(1)!.t).toEqual([0, 0, 0]);
    expect(server.requestsOf("PATCH")).toHaveLength(0);
    expect(server.revision).toBe(0);
  });

  it("commit sends exactly one PATCH with the composed pose", async () => {
    const s = await connect();
    s.select(2);
    s.beginDrag();
    for (let i = 0; i < 10; i++) s.updateDrag({ translate: [0.01, 0, 0.002] });
    const expected = composedPose(s.drag!);
    expect(await s.commitDrag()).toBe(true);
    const patches = server.requestsOf("PATCH");
    expect(patches).toHaveLength(1);
    expect(patches[0].path).toBe("/objects/2/pose");
    expect((patches[0].body as { pose: unknown }).pose).toEqual(expected);
    expect(s.revision).toBe(1);
  });

  it("after a commit the displayed pose equals what GET /project returns", async () => {
    const s = await connect();
    s.select(2);
    s.beginDrag();
    s.updateDrag({ translate: [0.03, -0.02, 0.05] });
    s.updateDrag({ rotate: [Math.cos(0.1), 0, 0, Math.sin(0.1)] });
    await s.commitDrag();
    const fresh = await new Api("", server.fetch).getProject();
    const serverPose = fresh.project.objects.find((o) => o.id === 2)!.pose;
    const displayed = s.displayedPose(2)!;
    for (let i = 0; i < 4; i++) expect(displayed.q[i]).toBeCloseTo(serverPose.q[i], 12);
    for (let i = 0; i < 3; i++) expect(displayed.t[i]).toBeCloseTo(serverPose.t[i], 12);
    expect(fresh.revision).toBe(s.revision);
  });

  it("an untouched drag commits nothing", async () => {
    const s = await connect();
    s.select(1);
    s.beginDrag();
    expect(await s.commitDrag()).toBe(false);
    expect(server.requestsOf("PATCH")).toHaveLength(0);
    expect(server.revision).toBe(0);
  });

  it("a scale drag rewrites extents through a project PUT", async () => {
    const s = await connect();
    s.select(1);
    s.setGizmoMode("scale");
    s.beginDrag();
    s.updateDrag({ scale: 2 });
    expect(s.displayedScale(1)).toBe(2);
    expect(await s.commitDrag()).toBe(true);
    expect(server.requestsOf("PATCH")).toHaveLength(0);
    expect(server.requestsOf("PUT")).toHaveLength(1);
    const half = server.project.objects.find((o) => o.id === 1)!.half_extents!;
    expect(half[0]).toBeCloseTo(0.6, 12);
    expect(s.project.objects.find((o) => o.id === 1)!.half_extents![0]).toBeCloseTo(0.6, 12);
    expect(s.revision).toBe(server.revision);
  });
});

describe("conflicts", () => {
  it("surfaces a 409, drops the drag, and adopts server truth", async () => {
    const a = await connect();
    const b = await connect();

    // a wins the race
    a.select(1);
    a.beginDrag();
    a.updateDrag({ translate: [0.5, 0, 0] });
    expect(await a.commitDrag()).toBe(true);
    expect(server.revision).toBe(1);

    // b still quotes revision 0 and must lose
    b.select(1);
    b.beginDrag();
    b.updateDrag({ translate: [-0.5, 0, 0] });
    expect(await b.commitDrag()).toBe(false);

    expect(b.conflict).not.toBeNull();
    expect(b.conflict!.detail).toContain("stale");
    expect(b.drag).toBeNull();
    // nothing of b's rejected edit leaked anywhere
    expect(server.objectPose(1).t).toEqual([0.5, 0, 0]);
    expect(b.displayedPose(1)!.t).toEqual([0.5, 0, 0]);
    expect(b.revision).toBe(server.revision);
  });

  it("recovers cleanly: the next commit after a conflict succeeds", async () => {
    const a = await connect();
    const b = await connect();

    a.select(1);
    a.beginDrag();
    a.updateDrag({ translate: [0.5, 0, 0] });
    await a.commitDrag();

    b.select(1);
    b.beginDrag();
    b.updateDrag({ translate: [-0.5, 0, 0] });
    await b.commitDrag(); // 409

    b.beginDrag();
    b.updateDrag({ translate: [0.25, 0, 0] });
    expect(await b.commitDrag()).toBe(true);
    // delta applied on top of the refetched pose, not the stale one
    expect(server.objectPose(1).t[0]).toBeCloseTo(0.75, 12);
    expect(server.revision).toBe(2);
    expect(b.revision).toBe(2);
    expect(b.conflict).not.toBeNull(); // stays visible until dismissed
    b.clearConflict();
    expect(b.conflict).toBeNull();
  });

  it("drops the selection when the object vanished underneath it", async () => {
    const a = await connect();
    const b = await connect();

    const withoutBall: ProjectDoc = {
      ...a.project,
      objects: a.project.objects.filter((o) => o.id !== 1),
    };
    await a.api.putProject(a.revision, withoutBall);

    b.select(1);
    b.beginDrag();
    b.updateDrag({ translate: [0.1, 0, 0] });
    expect(await b.commitDrag()).toBe(false);
    expect(b.viewport.selectedObject).toBeNull();
    expect(b.project.objects.map((o) => o.id)).toEqual([2]);
  });
});

describe("object creation", () => {
  it("adds through POST then refetches the full list", async () => {
    const s = await connect();
    const ok = await s.addObject({
      id: 9,
      class_name: "ball",
      kind: "box",
      pose: { q: [1, 0, 0, 0], t: [0.4, 0, 0] },
      half_extents: [0.05, 0.05, 0.05],
      scale: 1,
    });
    expect(ok).toBe(true);
    expect(s.project.objects.map((o) => o.id)).toEqual([1, 2, 9]);
    expect(s.revision).toBe(server.revision);
  });

  it("conflicts on a stale add without corrupting the list", async () => {
    const a = await connect();
    const b = await connect();
    await a.api.postObject(0, {
      id: 5,
      class_name: "ball",
      kind: "box",
      pose: { q: [1, 0, 0, 0], t: [0, 0, 0.3] },
      half_extents: [0.02, 0.02, 0.02],
      scale: 1,
    });
    const ok = await b.addObject({
      id: 6,
      class_name: "crate",
      kind: "box",
      pose: { q: [1, 0, 0, 0], t: [0, 0, -0.3] },
      half_extents: [0.02, 0.02, 0.02],
      scale: 1,
    });
    expect(ok).toBe(false);
    expect(b.conflict).not.toBeNull();
    expect(b.project.objects.map((o) => o.id)).toEqual([1, 2, 5]);
    expect(b.revision).toBe(server.revision);
  });
});
