/** Session state and its pure transitions.
 *
 * The UI renders a function of this state plus the last API response;
 * history is append-only within a session.
 */

import type { RetrieveResponse } from "./api.js";

export interface HistoryStep {
  reference_id: number;
  text: string;
}

export interface SessionState {
  referenceId: number | null;
  queryText: string;
  history: HistoryStep[];
  lastResponse: RetrieveResponse | null;
  lastQuery: HistoryStep | null;
}

export function initialState(): SessionState {
  return {
    referenceId: null,
    queryText: "",
    history: [],
    lastResponse: null,
    lastQuery: null,
  };
}

export function selectReference(state: SessionState, sceneId: number): SessionState {
  return { ...state, referenceId: sceneId };
}

export function editQuery(state: SessionState, text: string): SessionState {
  return { ...state, queryText: text };
}

/** Record a completed retrieval; the step enters history on refinement. */
export function applyResults(
  state: SessionState,
  referenceId: number,
  text: string,
  response: RetrieveResponse,
): SessionState {
  return {
    ...state,
    referenceId,
    lastResponse: response,
    lastQuery: { reference_id: referenceId, text },
  };
}

/** Promote a retrieved result to the next reference: the finished
 *  (reference, text) step is appended to the history and the text box
 *  clears for the next instruction. */
export function refineFromResult(state: SessionState, sceneId: number): SessionState {
  if (!state.lastResponse || !state.lastQuery ||
      !state.lastResponse.results.some((r) => r.scene_id === sceneId)) {
    return state;
  }
  return {
    ...state,
    referenceId: sceneId,
    queryText: "",
    history: [...state.history, state.lastQuery],
    lastResponse: null,
    lastQuery: null,
  };
}
