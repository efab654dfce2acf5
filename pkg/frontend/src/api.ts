/** Typed client for the retrieval service API. */

export interface SceneSummary {
  scene_id: number;
  thumbnail_url: string;
}

export interface SceneListResponse {
  scenes: SceneSummary[];
  total: number;
  page: number;
  page_size: number;
}

export interface RetrievalResult {
  scene_id: number;
  score: number;
  rank: number;
  image_url: string;
}

export interface Localization {
  box: [number, number, number, number] | null;
  localization_text: string;
}

export interface RetrieveResponse {
  results: RetrievalResult[];
  localization: Localization;
}

export interface VocabularyError {
  kind: "vocabulary";
  tokens: string[];
}

export interface RequestError {
  kind: "request";
  status: number;
  message: string;
}

export type ApiError = VocabularyError | RequestError;

export class ApiFailure extends Error {
  constructor(public readonly detail: ApiError) {
    super(detail.kind === "vocabulary"
      ? `unknown tokens: ${detail.tokens.join(", ")}`
      : detail.message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async parseError(resp: Response): Promise<ApiFailure> {
    let message = `request failed with status ${resp.status}`;
    try {
      const body = await resp.json();
      if (resp.status === 422 && Array.isArray(body.tokens)) {
        return new ApiFailure({ kind: "vocabulary", tokens: body.tokens });
      }
      if (typeof body.error === "string") message = body.error;
    } catch {
      /* non-JSON body; keep the generic message */
    }
    return new ApiFailure({ kind: "request", status: resp.status, message });
  }

  async listScenes(split: string, page: number, pageSize: number): Promise<SceneListResponse> {
    const url = `${this.baseUrl}/api/scenes?split=${split}&page=${page}&page_size=${pageSize}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) throw await this.parseError(resp);
    return resp.json();
  }

  /** Single-flight retrieve: a new submission aborts the one in progress. */
  async retrieve(referenceId: number, text: string, k: number): Promise<RetrieveResponse> {
    if (this.inflight) this.inflight.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/api/retrieve`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ reference_id: referenceId, text, k }),
        signal: controller.signal,
      });
      if (!resp.ok) throw await this.parseError(resp);
      return resp.json();
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  imageUrl(sceneId: number): string {
    return `${this.baseUrl}/api/scene/${sceneId}/image`;
  }

  overlayUrl(sceneId: number, text: string): string {
    return `${this.baseUrl}/api/scene/${sceneId}/overlay?text=${encodeURIComponent(text)}`;
  }
}
