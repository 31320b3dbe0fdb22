/**
 * DOM rendering: the candidate slate list, the conflict banner, and the
 * explanation panel.
 *
 * Rendering is pure DOM construction from the view model; rows appear in
 * view order and mutations only happen through the handlers wired by the
 * app shell.
 */

import type { SlateRow, SlateView } from "./types";

export interface SlateHandlers {
  onAccept(selected: SlateRow[], slateVersion: number): void;
  onSkip(): void;
}

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

function mentionParagraph(view: SlateView): HTMLElement {
  const p = el("p", "mention-context");
  p.appendChild(
    document.createTextNode(view.mentionText.slice(0, view.highlightStart)),
  );
  const mark = el("mark", "mention-span");
  mark.textContent = view.mentionText.slice(view.highlightStart, view.highlightEnd);
  p.appendChild(mark);
  p.appendChild(document.createTextNode(view.mentionText.slice(view.highlightEnd)));
  return p;
}

export function renderSlate(
  container: HTMLElement,
  view: SlateView,
  handlers: SlateHandlers,
): void {
  container.replaceChildren();
  container.appendChild(mentionParagraph(view));

  const versionLine = el("div", "slate-version", `ontology version ${view.slateVersion}`);
  container.appendChild(versionLine);

  const list = el("ol", "slate-rows");
  list.start = 0;
  const checkboxes: HTMLInputElement[] = [];
  for (const row of view.rows) {
    const item = el("li", "slate-row");
    item.id = `option-${row.rank}`;

    const checkbox = el("input") as HTMLInputElement;
    checkbox.type = "checkbox";
    checkbox.dataset["rank"] = String(row.rank);
    checkboxes.push(checkbox);
    item.appendChild(checkbox);

    item.appendChild(el("span", "parent-label", row.parentLabel));
    item.appendChild(el("span", "edge-arrow", " → "));
    item.appendChild(
      el("span", row.isLeaf ? "child-label leaf" : "child-label", row.childLabel),
    );
    item.appendChild(el("span", "score", row.score.toFixed(4)));
    item.appendChild(el("span", `origin-badge origin-${row.origin}`, row.origin));
    list.appendChild(item);
  }
  container.appendChild(list);

  const controls = el("div", "controls");
  const acceptButton = el("button", "accept", "Accept selected");
  acceptButton.disabled = true;
  const skipButton = el("button", "skip", "Skip");
  controls.appendChild(acceptButton);
  controls.appendChild(skipButton);
  container.appendChild(controls);

  const refreshDisabled = () => {
    acceptButton.disabled = !checkboxes.some((c) => c.checked);
  };
  checkboxes.forEach((c) => c.addEventListener("change", refreshDisabled));

  acceptButton.addEventListener("click", () => {
    const selected = checkboxes
      .filter((c) => c.checked)
      .map((c) => view.rows[Number(c.dataset["rank"])])
      .filter((row): row is SlateRow => row !== undefined);
    handlers.onAccept(selected, view.slateVersion);
  });
  skipButton.addEventListener("click", () => handlers.onSkip());
}

/** Shown when an accept hit a stale slate; the user must refresh, never a
 * silent retry. */
export function showConflictBanner(container: HTMLElement, message: string): void {
  let banner = container.querySelector<HTMLElement>(".conflict-banner");
  if (!banner) {
    banner = el("div", "conflict-banner");
    container.prepend(banner);
  }
  banner.replaceChildren();
  banner.appendChild(el("span", "conflict-message", message));
  banner.appendChild(el("button", "refresh", "Refresh candidates"));
}

export function clearConflictBanner(container: HTMLElement): void {
  container.querySelector(".conflict-banner")?.remove();
}

const FINAL_ANSWERS = /the final answers are/i;

export function renderExplanation(container: HTMLElement, text: string | null): void {
  container.replaceChildren();
  if (!text || !text.trim()) {
    container.hidden = true;
    return;
  }
  container.hidden = false;
  const panel = el("div", "explanation-panel");
  const match = FINAL_ANSWERS.exec(text);
  if (!match) {
    // malformed explanation: show it untouched
    panel.appendChild(el("p", "explanation-raw", text));
    container.appendChild(panel);
    return;
  }
  const clauseStart = match.index;
  panel.appendChild(el("span", "explanation-body", text.slice(0, clauseStart)));
  const clauseText = text.slice(clauseStart);
  const clause = el("span", "final-answers");
  let cursor = 0;
  for (const numberMatch of clauseText.matchAll(/\d+/g)) {
    const at = numberMatch.index ?? 0;
    clause.appendChild(document.createTextNode(clauseText.slice(cursor, at)));
    const link = el("a", "option-link", numberMatch[0]);
    link.setAttribute("href", `#option-${numberMatch[0]}`);
    clause.appendChild(link);
    cursor = at + numberMatch[0].length;
  }
  clause.appendChild(document.createTextNode(clauseText.slice(cursor)));
  panel.appendChild(clause);
  container.appendChild(panel);
}
