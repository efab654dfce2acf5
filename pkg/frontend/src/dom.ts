/** Thin DOM rendering over the view models. */

import type { SceneSummary } from "./api.js";
import type { BreadcrumbEntry, ErrorView, ResultsView } from "./view.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderGallery(
  container: HTMLElement,
  scenes: SceneSummary[],
  page: number,
  totalPages: number,
  onPick: (sceneId: number) => void,
  onPage: (page: number) => void,
): void {
  container.replaceChildren();
  const grid = el("div", "gallery-grid");
  for (const scene of scenes) {
    const cell = el("button", "gallery-cell");
    cell.dataset.sceneId = String(scene.scene_id);
    const img = el("img");
    img.src = scene.thumbnail_url;
    img.alt = `scene ${scene.scene_id}`;
    cell.append(img, el("span", "scene-id", `#${scene.scene_id}`));
    cell.onclick = () => onPick(scene.scene_id);
    grid.appendChild(cell);
  }
  container.appendChild(grid);

  const nav = el("div", "pager");
  const prev = el("button", "pager-btn", "prev");
  prev.disabled = page <= 1;
  prev.onclick = () => onPage(page - 1);
  const next = el("button", "pager-btn", "next");
  next.disabled = page >= totalPages;
  next.onclick = () => onPage(page + 1);
  nav.append(prev, el("span", "pager-label", `page ${page} / ${totalPages}`), next);
  container.appendChild(nav);
}

export function renderReference(
  container: HTMLElement,
  imageUrl: string | null,
  overlayUrl: string | null,
): void {
  container.replaceChildren();
  if (!imageUrl) {
    container.appendChild(el("p", "hint", "pick a reference scene from the gallery"));
    return;
  }
  const img = el("img", "reference-img");
  img.src = overlayUrl ?? imageUrl;
  img.alt = "reference";
  container.appendChild(img);
}

export function renderResults(
  container: HTMLElement,
  view: ResultsView | null,
  onRefine: (sceneId: number) => void,
): void {
  container.replaceChildren();
  if (!view) return;
  if (view.localizationText) {
    container.appendChild(
      el("p", "loc-text", `localized: "${view.localizationText}"`),
    );
  }
  const grid = el("div", "results-grid");
  for (const card of view.cards) {
    const cell = el("div", card.isGroundTruth ? "result-card ground-truth" : "result-card");
    cell.dataset.sceneId = String(card.sceneId);
    cell.dataset.rank = String(card.rank);
    const img = el("img");
    img.src = card.imageUrl;
    img.alt = `result ${card.rank}`;
    const caption = el("div", "result-caption",
                       `#${card.rank} scene ${card.sceneId} (${card.score})`);
    const use = el("button", "refine-btn", "use as reference");
    use.onclick = () => onRefine(card.sceneId);
    cell.append(img, caption, use);
    grid.appendChild(cell);
  }
  container.appendChild(grid);
}

export function renderError(container: HTMLElement, view: ErrorView | null,
                            onRetry: () => void): void {
  container.replaceChildren();
  if (!view) return;
  const box = el("div", "error-box");
  box.appendChild(el("span", "error-msg", view.message));
  for (const token of view.offendingTokens) {
    box.appendChild(el("code", "bad-token", token));
  }
  if (view.retryable) {
    const retry = el("button", "retry-btn", "retry");
    retry.onclick = onRetry;
    box.appendChild(retry);
  }
  container.appendChild(box);
}

export function renderBreadcrumb(container: HTMLElement,
                                 entries: BreadcrumbEntry[]): void {
  container.replaceChildren();
  if (!entries.length) return;
  const list = el("ol", "breadcrumb");
  for (const entry of entries) {
    list.appendChild(el("li", "crumb", entry.label));
  }
  container.appendChild(list);
}
