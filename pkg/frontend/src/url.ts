/** Session <-> URL fragment serialization for shareable links. */

import type { SessionState } from "./state.js";
import { initialState } from "./state.js";

interface SessionDoc {
  ref: number | null;
  text: string;
  history: { r: number; t: string }[];
}

export function encodeSession(state: SessionState): string {
  const doc: SessionDoc = {
    ref: state.referenceId,
    text: state.queryText,
    history: state.history.map((h) => ({ r: h.reference_id, t: h.text })),
  };
  return "#s=" + encodeURIComponent(JSON.stringify(doc));
}

export function decodeSession(fragment: string): SessionState {
  const state = initialState();
  const match = /^#s=(.+)$/.exec(fragment);
  if (!match) return state;
  try {
    const doc = JSON.parse(decodeURIComponent(match[1])) as SessionDoc;
    return {
      ...state,
      referenceId: typeof doc.ref === "number" ? doc.ref : null,
      queryText: typeof doc.text === "string" ? doc.text : "",
      history: Array.isArray(doc.history)
        ? doc.history
            .filter((h) => typeof h?.r === "number" && typeof h?.t === "string")
            .map((h) => ({ reference_id: h.r, text: h.t }))
        : [],
    };
  } catch {
    return state;
  }
}
