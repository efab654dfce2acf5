/** Pure view-model builders; the DOM layer renders these verbatim. */

import type { ApiError, RetrieveResponse } from "./api.js";
import type { SessionState } from "./state.js";

export interface ResultCard {
  sceneId: number;
  rank: number;
  score: string;          // 6-decimal string as served
  imageUrl: string;
  isGroundTruth: boolean; // green border when the dataset exposes it
}

export interface ResultsView {
  cards: ResultCard[];
  localizationText: string;
  box: [number, number, number, number] | null;
}

export function buildResultsView(
  response: RetrieveResponse,
  groundTruthId: number | null = null,
): ResultsView {
  return {
    cards: response.results.map((r) => ({
      sceneId: r.scene_id,
      rank: r.rank,
      score: r.score.toFixed(6),
      imageUrl: r.image_url,
      isGroundTruth: groundTruthId !== null && r.scene_id === groundTruthId,
    })),
    localizationText: response.localization.localization_text,
    box: response.localization.box,
  };
}

export interface ErrorView {
  message: string;
  offendingTokens: string[];
  retryable: boolean;
}

export function buildErrorView(error: ApiError): ErrorView {
  if (error.kind === "vocabulary") {
    return {
      message: `not in the vocabulary: ${error.tokens.join(", ")}`,
      offendingTokens: error.tokens,
      retryable: false,
    };
  }
  return {
    message: error.message,
    offendingTokens: [],
    retryable: error.status >= 500 || error.status === 0,
  };
}

export interface BreadcrumbEntry {
  label: string;
  referenceId: number;
}

export function buildBreadcrumb(state: SessionState): BreadcrumbEntry[] {
  return state.history.map((h, i) => ({
    label: `${i + 1}. scene ${h.reference_id}: "${h.text}"`,
    referenceId: h.reference_id,
  }));
}
