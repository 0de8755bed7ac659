import { describe, expect, it } from "vitest";

import { Api, ApiError, ConflictError, FetchLike } from "../src/api";

interface Recorded {
  url: string;
  init?: RequestInit;
}

function fetchReturning(status: number, body: unknown, log: Recorded[]): FetchLike {
  return (url, init) => {
    log.push({ url, init });
    return Promise.resolve(
      new Response(JSON.stringify(body), {
        status,
        headers: { "content-type": "application/json" },
      }),
    );
  };
}

describe("request shapes", () => {
  it("GET /project carries no body", async () => {
    const log: Recorded[] = [];
    const api = new Api("", fetchReturning(200, { revision: 3, project: { objects: [] } }, log));
    const env = await api.getProject();
    expect(env.revision).toBe(3);
    expect(log[0].url).toBe("/project");
    expect(log[0].init?.method).toBe("GET");
    expect(log[0].init?.body).toBeUndefined();
  });

  it("PATCH pose quotes the revision and wraps the pose", async () => {
    const log: Recorded[] = [];
    const api = new Api(
      "http://svc",
      fetchReturning(200, { revision: 6, object: { id: 4 } }, log),
    );
    await api.patchPose(4, 5, { q: [1, 0, 0, 0], t: [0.1, 0, 0] });
    expect(log[0].url).toBe("http://svc/objects/4/pose");
    expect(log[0].init?.method).toBe("PATCH");
    const body = JSON.parse(String(log[0].init?.body));
    expect(body).toEqual({ revision: 5, pose: { q: [1, 0, 0, 0], t: [0.1, 0, 0] } });
  });

  it("tool posts only include config when given", async () => {
    const log: Recorded[] = [];
    const api = new Api("", fetchReturning(200, { revision: 1, object: { id: 2 } }, log));
    await api.tightFit(2, 0);
    await api.icp(2, 1, { sample_count: 500 });
    expect(JSON.parse(String(log[0].init?.body))).toEqual({ revision: 0 });
    expect(log[0].url).toBe("/objects/2/tight-fit");
    expect(JSON.parse(String(log[1].init?.body))).toEqual({
      revision: 1,
      config: { sample_count: 500 },
    });
    expect(log[1].url).toBe("/objects/2/icp");
  });

  it("builds render and mask urls with query parameters", () => {
    const api = new Api("http://svc");
    expect(api.renderUrl(2, "field_depth", { size: 640 })).toBe(
      "http://svc/frames/2/render?mode=field_depth&size=640",
    );
    expect(api.renderUrl(0, "rgb")).toBe("http://svc/frames/0/render?mode=rgb");
    expect(api.previewMasksUrl(1, "field")).toBe(
      "http://svc/frames/1/preview-masks?occlusion=field",
    );
  });

  it("strips trailing slashes from the base url", () => {
    expect(new Api("http://svc///").baseUrl).toBe("http://svc");
  });
});

describe("error mapping", () => {
  it("maps 409 onto ConflictError with the server detail", async () => {
    const api = new Api(
      "",
      fetchReturning(409, { detail: "stale revision 4, head is 7" }, []),
    );
    const err = await api
      .patchPose(1, 4, { q: [1, 0, 0, 0], t: [0, 0, 0] })
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ConflictError);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.detail).toBe("stale revision 4, head is 7");
  });

  it("maps other failures onto ApiError", async () => {
    const api = new Api("", fetchReturning(422, { detail: "invalid object: bad pose" }, []));
    const err = await api
      .postObject(0, { id: 1 } as never)
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err).not.toBeInstanceOf(ConflictError);
    expect(err.status).toBe(422);
    expect(err.detail).toContain("invalid object");
  });

  it("survives an error body that is not json", async () => {
    const raw: FetchLike = () =>
      Promise.resolve(new Response("<html>boom</html>", { status: 500, statusText: "oops" }));
    const api = new Api("", raw);
    const err = await api
      .getScene()
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(500);
  });
});
