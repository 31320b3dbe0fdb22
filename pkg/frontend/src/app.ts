/**
 * App shell: drives the review loop against one curation session.
 *
 * Stateless by design: every screen is rebuilt from fresh service responses,
 * so a reload (or a conflict-forced refresh) always shows current state.
 */

import { ConflictError, ServiceClient } from "./api";
import { clearConflictBanner, renderExplanation, renderSlate, showConflictBanner } from "./render";
import { toSlateView } from "./slateView";
import type { SlateRow } from "./types";

export interface AppElements {
  slate: HTMLElement;
  explanation: HTMLElement;
  status: HTMLElement;
}

export class ReviewApp {
  private inflight: Promise<void> = Promise.resolve();

  constructor(
    private readonly elements: AppElements,
    private readonly client: ServiceClient,
    private readonly sessionId: string = "default",
  ) {}

  async start(): Promise<void> {
    await this.showNext();
  }

  /** Resolves when the most recent user action has finished its round trip. */
  async idle(): Promise<void> {
    await this.inflight;
  }

  private setStatus(text: string): void {
    this.elements.status.textContent = text;
  }

  async showNext(): Promise<void> {
    const pending = await this.client.listMentions(this.sessionId);
    const first = pending[0];
    if (!first) {
      this.elements.slate.replaceChildren();
      this.elements.explanation.hidden = true;
      this.setStatus("Queue empty: all mentions reviewed.");
      return;
    }
    await this.showMention(first.mention_id);
  }

  async showMention(mentionId: string): Promise<void> {
    const payload = await this.client.getCandidates(this.sessionId, mentionId);
    const view = toSlateView(payload);
    clearConflictBanner(this.elements.slate);
    renderSlate(this.elements.slate, view, {
      onAccept: (selected, slateVersion) => {
        this.inflight = this.acceptSelection(mentionId, selected, slateVersion);
      },
      onSkip: () => {
        this.inflight = this.skipMention(mentionId);
      },
    });
    renderExplanation(this.elements.explanation, view.explanation);
    this.setStatus(`Reviewing ${mentionId} (${view.rows.length} candidates).`);
  }

  private async acceptSelection(
    mentionId: string,
    selected: SlateRow[],
    slateVersion: number,
  ): Promise<void> {
    if (selected.length === 0) return;
    try {
      const response = await this.client.accept(this.sessionId, mentionId, {
        edges: selected.map((row) => [row.parentId, row.childId]),
        slate_version: slateVersion,
      });
      this.setStatus(`Placed ${mentionId}; ontology at version ${response.version}.`);
      await this.showNext();
    } catch (error) {
      if (error instanceof ConflictError) {
        showConflictBanner(
          this.elements.slate,
          "The ontology changed since these candidates were computed. Refresh to continue.",
        );
        const refresh = this.elements.slate.querySelector<HTMLButtonElement>(
          ".conflict-banner button.refresh",
        );
        refresh?.addEventListener("click", () => {
          this.inflight = this.showMention(mentionId);
        });
        return;
      }
      throw error;
    }
  }

  private async skipMention(mentionId: string): Promise<void> {
    await this.client.skip(this.sessionId, mentionId);
    await this.showNext();
  }
}
