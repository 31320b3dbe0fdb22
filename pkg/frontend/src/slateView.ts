/**
 * View-model construction: service payload -> SlateView.
 *
 * Row order mirrors the service response exactly; this module never sorts
 * or filters.
 */

import type { CandidatesPayload, SlateRow, SlateView } from "./types";

export function toSlateView(payload: CandidatesPayload): SlateView {
  const rows: SlateRow[] = payload.edges.map((tuple, i) => {
    const [parentId, childId, score, origin] = tuple;
    const labels = payload.labels[i] ?? [parentId, childId];
    const isLeaf = childId === "NULL";
    return {
      rank: i,
      parentId,
      childId,
      parentLabel: labels[0],
      childLabel: isLeaf ? "(leaf)" : labels[1],
      isLeaf,
      score,
      origin,
    };
  });
  const highlightStart = payload.context_left.length;
  return {
    mentionId: payload.mention_id,
    mentionText: `${payload.context_left}${payload.mention}${payload.context_right}`,
    highlightStart,
    highlightEnd: highlightStart + payload.mention.length,
    rows,
    slateVersion: payload.slate_version,
    explanation: payload.explanation,
  };
}
