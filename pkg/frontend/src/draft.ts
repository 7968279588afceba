/** Annotation draft model.
 *
 * Pure state + transitions, kept separate from the DOM so the invariants
 * can be property-tested: a draft is submittable only when exactly one of
 * {intent chosen, meaningless, ambiguous} holds, selected ranges never
 * overlap, and every produced request body passes the service's own
 * validation rules by construction.
 */

import type { AnnotationBody, SlotBody } from "./types.js";

export type Flag = "meaningless" | "ambiguous";

export interface DraftState {
  candidateId: string;
  tokenCount: number;
  intent: string | null;
  flag: Flag | null;
  slots: SlotBody[];
  dirty: boolean;
}

export function newDraft(candidateId: string, tokenCount: number): DraftState {
  return { candidateId, tokenCount, intent: null, flag: null, slots: [], dirty: false };
}

export function rangesOverlap(a: { start: number; end: number },
                              b: { start: number; end: number }): boolean {
  return a.start <= b.end && b.start <= a.end;
}

export function setIntent(draft: DraftState, intent: string): DraftState {
  return { ...draft, intent, flag: null, dirty: true };
}

/** Flags exclude an intent and any slot selections. */
export function setFlag(draft: DraftState, flag: Flag): DraftState {
  return { ...draft, flag, intent: null, slots: [], dirty: true };
}

export function clearChoice(draft: DraftState): DraftState {
  return { ...draft, intent: null, flag: null, dirty: true };
}

/** Add a labeled token range; returns null when the range is invalid
 *  (out of bounds, inverted, or overlapping an existing selection). */
export function addSlot(draft: DraftState, slot: SlotBody): DraftState | null {
  if (draft.flag !== null) return null;
  if (!Number.isInteger(slot.start) || !Number.isInteger(slot.end)) return null;
  if (slot.start < 0 || slot.end >= draft.tokenCount || slot.start > slot.end) return null;
  if (draft.slots.some((s) => rangesOverlap(s, slot))) return null;
  const slots = [...draft.slots, slot].sort((a, b) => a.start - b.start);
  return { ...draft, slots, dirty: true };
}

export function removeSlot(draft: DraftState, index: number): DraftState {
  if (index < 0 || index >= draft.slots.length) return draft;
  const slots = draft.slots.filter((_, i) => i !== index);
  return { ...draft, slots, dirty: true };
}

/** Exactly one of {intent, meaningless, ambiguous}; flags carry no slots. */
export function isSubmittable(draft: DraftState): boolean {
  const choices = (draft.intent !== null ? 1 : 0) + (draft.flag !== null ? 1 : 0);
  if (choices !== 1) return false;
  if (draft.flag !== null && draft.slots.length > 0) return false;
  return true;
}

export function toRequestBody(draft: DraftState): AnnotationBody {
  if (!isSubmittable(draft)) {
    throw new Error("draft is not submittable");
  }
  if (draft.flag !== null) {
    return { candidate_id: draft.candidateId, decision: draft.flag };
  }
  return {
    candidate_id: draft.candidateId,
    decision: "valid",
    intent: draft.intent as string,
    slots: draft.slots,
  };
}

/** Click-drag selection over token cells. */
export interface TokenSelection {
  anchor: number | null;
  focus: number | null;
}

export function emptySelection(): TokenSelection {
  return { anchor: null, focus: null };
}

export function beginSelection(index: number): TokenSelection {
  return { anchor: index, focus: index };
}

export function extendSelection(sel: TokenSelection, index: number): TokenSelection {
  if (sel.anchor === null) return beginSelection(index);
  return { anchor: sel.anchor, focus: index };
}

export function selectionRange(sel: TokenSelection): { start: number; end: number } | null {
  if (sel.anchor === null || sel.focus === null) return null;
  return {
    start: Math.min(sel.anchor, sel.focus),
    end: Math.max(sel.anchor, sel.focus),
  };
}
