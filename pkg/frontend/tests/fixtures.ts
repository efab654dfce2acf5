/** Recorded service responses and a stub fetch implementing the API shape. */

import type { FetchLike, RetrieveResponse, SceneListResponse } from "../src/api.js";

export const RETRIEVE_FIXTURE: RetrieveResponse = {
  results: [
    { scene_id: 310, score: 0.912345, rank: 1, image_url: "/api/scene/310/image" },
    { scene_id: 42, score: 0.881201, rank: 2, image_url: "/api/scene/42/image" },
    { scene_id: 7, score: 0.653377, rank: 3, image_url: "/api/scene/7/image" },
    { scene_id: 1005, score: 0.640021, rank: 4, image_url: "/api/scene/1005/image" },
    { scene_id: 88, score: 0.512000, rank: 5, image_url: "/api/scene/88/image" },
  ],
  localization: {
    box: [22, 1, 42, 21],
    localization_text: "top-center small gray object",
  },
};

export const SCENES_FIXTURE: SceneListResponse = {
  scenes: [
    { scene_id: 12, thumbnail_url: "/api/scene/12/image" },
    { scene_id: 15, thumbnail_url: "/api/scene/15/image" },
    { scene_id: 19, thumbnail_url: "/api/scene/19/image" },
  ],
  total: 3,
  page: 1,
  page_size: 12,
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export interface FixtureLog {
  calls: { url: string; body?: unknown }[];
}

/** Fixture server: vocabulary mirrors the real grammar's failure mode. */
export function fixtureFetch(log?: FixtureLog): FetchLike {
  return async (url: string, init?: RequestInit) => {
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    log?.calls.push({ url, body });
    if (url.startsWith("/api/scenes")) {
      return jsonResponse(200, SCENES_FIXTURE);
    }
    if (url === "/api/retrieve") {
      const text: string = body?.text ?? "";
      // the fixture vocabulary rejects anything starting with "zz"
      const unknown = text.split(/\s+/).filter((t) => t.startsWith("zz"));
      if (unknown.length > 0) {
        return jsonResponse(422, { error: "unknown tokens", tokens: unknown });
      }
      if (typeof body?.reference_id !== "number") {
        return jsonResponse(400, { error: "malformed body" });
      }
      if (body.reference_id === 999999) {
        return jsonResponse(404, { error: "unknown reference 999999" });
      }
      const k: number = body?.k ?? 10;
      return jsonResponse(200, {
        ...RETRIEVE_FIXTURE,
        results: RETRIEVE_FIXTURE.results.slice(0, k),
      });
    }
    return jsonResponse(404, { error: `no fixture for ${url}` });
  };
}
