/**
 * Wire types for the curation service API.
 *
 * Payload shapes mirror the service's JSON verbatim; the slate row tuple is
 * [parent id, child id or "NULL", score, origin].
 */

export type SlateRowTuple = [string, string, number, string];

export interface PendingMention {
  mention_id: string;
  mention: string;
  context_left: string;
  context_right: string;
}

export interface CandidatesPayload {
  mention: string;
  context_left: string;
  context_right: string;
  k: number;
  edges: SlateRowTuple[];
  labels: [string, string][];
  gold_edges?: [string, string][];
  mention_id: string;
  slate_version: number;
  explanation: string | null;
}

export interface AcceptRequest {
  edges: [string, string][];
  slate_version: number;
  who?: string;
  manual?: boolean;
}

export interface LogEntry {
  seq: number;
  session_id: string;
  action: "accept" | "skip";
  mention_id: string;
  version_before: number;
  version_after: number;
  who: string;
  at: number;
  mention?: string;
  new_concept_id?: string;
  edges?: [string, string][];
}

export interface AcceptResponse {
  version: number;
  entry: LogEntry;
}

// ── View model ──

export interface SlateRow {
  rank: number;
  parentId: string;
  childId: string; // "NULL" for leaf placement
  parentLabel: string;
  childLabel: string; // "(leaf)" when the edge is a leaf edge
  isLeaf: boolean;
  score: number;
  origin: string;
}

export interface SlateView {
  mentionId: string;
  mentionText: string; // contexts concatenated around the mention
  highlightStart: number;
  highlightEnd: number;
  rows: SlateRow[];
  slateVersion: number;
  explanation: string | null;
}
