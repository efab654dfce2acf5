/** Application wiring: gallery, query box, results, session URL. */

import { ApiClient, ApiFailure } from "./api.js";
import {
  renderBreadcrumb,
  renderError,
  renderGallery,
  renderReference,
  renderResults,
} from "./dom.js";
import {
  SessionState,
  applyResults,
  editQuery,
  initialState,
  refineFromResult,
  selectReference,
} from "./state.js";
import { decodeSession, encodeSession } from "./url.js";
import { buildBreadcrumb, buildErrorView, buildResultsView } from "./view.js";

const PAGE_SIZE = 12;
const TOP_K = 5;
const DEBOUNCE_MS = 250;

const api = new ApiClient("");
let state: SessionState = decodeSession(window.location.hash);
let page = 1;
let split = "test";
let lastError: ReturnType<typeof buildErrorView> | null = null;
let debounceTimer: number | undefined;

const $ = (id: string) => document.getElementById(id) as HTMLElement;

function syncUrl(): void {
  history.replaceState(null, "", encodeSession(state));
}

function redraw(): void {
  const queryInput = $("query") as HTMLInputElement;
  if (queryInput.value !== state.queryText) queryInput.value = state.queryText;

  const overlay =
    state.referenceId !== null && state.lastQuery
      ? api.overlayUrl(state.referenceId, state.lastQuery.text)
      : null;
  renderReference(
    $("reference"),
    state.referenceId !== null ? api.imageUrl(state.referenceId) : null,
    overlay,
  );
  renderResults($("results"),
                state.lastResponse ? buildResultsView(state.lastResponse) : null,
                onRefine);
  renderError($("error"), lastError, () => void submit());
  renderBreadcrumb($("history"), buildBreadcrumb(state));
  syncUrl();
}

async function loadGallery(): Promise<void> {
  try {
    const listing = await api.listScenes(split, page, PAGE_SIZE);
    const totalPages = Math.max(1, Math.ceil(listing.total / PAGE_SIZE));
    renderGallery($("gallery"), listing.scenes, page, totalPages, onPick, (p) => {
      page = p;
      void loadGallery();
    });
  } catch (err) {
    lastError = err instanceof ApiFailure
      ? buildErrorView(err.detail)
      : { message: String(err), offendingTokens: [], retryable: true };
    redraw();
  }
}

function onPick(sceneId: number): void {
  state = selectReference(state, sceneId);
  lastError = null;
  redraw();
}

function onRefine(sceneId: number): void {
  state = refineFromResult(state, sceneId);
  lastError = null;
  redraw();
}

async function submit(): Promise<void> {
  if (state.referenceId === null || !state.queryText.trim()) return;
  const referenceId = state.referenceId;
  const text = state.queryText.trim();
  try {
    const response = await api.retrieve(referenceId, text, TOP_K);
    state = applyResults(state, referenceId, text, response);
    lastError = null;
  } catch (err) {
    if (err instanceof DOMException && err.name === "AbortError") return;
    lastError = err instanceof ApiFailure
      ? buildErrorView(err.detail)
      : { message: String(err), offendingTokens: [], retryable: true };
  }
  redraw();
}

function onSubmitDebounced(): void {
  window.clearTimeout(debounceTimer);
  debounceTimer = window.setTimeout(() => void submit(), DEBOUNCE_MS);
}

export function install(): void {
  const queryInput = $("query") as HTMLInputElement;
  queryInput.addEventListener("input", () => {
    state = editQuery(state, queryInput.value);
    syncUrl();
  });
  queryInput.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") onSubmitDebounced();
  });
  ($("go") as HTMLButtonElement).onclick = onSubmitDebounced;
  ($("split") as HTMLSelectElement).onchange = (ev) => {
    split = (ev.target as HTMLSelectElement).value;
    page = 1;
    void loadGallery();
  };
  window.addEventListener("hashchange", () => {
    state = decodeSession(window.location.hash);
    redraw();
  });
  redraw();
  void loadGallery();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  install();
}
