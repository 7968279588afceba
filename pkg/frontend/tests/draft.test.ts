import { describe, expect, it } from "vitest";

import { addSlot, beginSelection, clearChoice, DraftState, emptySelection, extendSelection,
         isSubmittable, newDraft, rangesOverlap, removeSlot, selectionRange, setFlag,
         setIntent, toRequestBody } from "../src/draft.js";

/** Tiny deterministic PRNG so the property runs are reproducible. */
function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

const INTENTS = ["alarm/set", "alarm/cancel", "weather/find"];
const LABELS = ["datetime", "location", "duration"];

describe("draft transitions", () => {
  it("starts empty and unsubmittable", () => {
    const draft = newDraft("c1", 5);
    expect(isSubmittable(draft)).toBe(false);
    expect(() => toRequestBody(draft)).toThrow();
  });

  it("intent alone is submittable", () => {
    const draft = setIntent(newDraft("c1", 5), "alarm/set");
    expect(isSubmittable(draft)).toBe(true);
    expect(toRequestBody(draft)).toEqual({
      candidate_id: "c1", decision: "valid", intent: "alarm/set", slots: [],
    });
  });

  it("flag alone is submittable and carries nothing else", () => {
    const draft = setFlag(newDraft("c1", 5), "meaningless");
    expect(isSubmittable(draft)).toBe(true);
    expect(toRequestBody(draft)).toEqual({ candidate_id: "c1", decision: "meaningless" });
  });

  it("flag clears intent and slots; intent clears flag", () => {
    let draft = setIntent(newDraft("c1", 5), "alarm/set");
    draft = addSlot(draft, { label: "datetime", start: 1, end: 2 }) as DraftState;
    draft = setFlag(draft, "ambiguous");
    expect(draft.intent).toBeNull();
    expect(draft.slots).toEqual([]);
    draft = setIntent(draft, "weather/find");
    expect(draft.flag).toBeNull();
  });

  it("rejects overlapping and out-of-range slots", () => {
    let draft = newDraft("c1", 4);
    draft = addSlot(draft, { label: "datetime", start: 1, end: 2 }) as DraftState;
    expect(draft).not.toBeNull();
    expect(addSlot(draft, { label: "location", start: 2, end: 3 })).toBeNull();
    expect(addSlot(draft, { label: "location", start: 0, end: 4 })).toBeNull();
    expect(addSlot(draft, { label: "location", start: -1, end: 0 })).toBeNull();
    expect(addSlot(draft, { label: "location", start: 3, end: 3 })).not.toBeNull();
  });

  it("cannot add slots while flagged", () => {
    const draft = setFlag(newDraft("c1", 4), "meaningless");
    expect(addSlot(draft, { label: "datetime", start: 0, end: 0 })).toBeNull();
  });
});

describe("selection model", () => {
  it("drag produces an ordered range either direction", () => {
    let sel = beginSelection(3);
    sel = extendSelection(sel, 1);
    expect(selectionRange(sel)).toEqual({ start: 1, end: 3 });
    sel = extendSelection(sel, 5);
    expect(selectionRange(sel)).toEqual({ start: 3, end: 5 });
  });

  it("empty selection has no range", () => {
    expect(selectionRange(emptySelection())).toBeNull();
  });
});

describe("draft invariants under random operation sequences", () => {
  it("never reaches a state the service would reject", () => {
    for (let run = 0; run < 1000; run++) {
      const rand = lcg(run + 1);
      const tokenCount = 1 + Math.floor(rand() * 10);
      let draft = newDraft(`c${run}`, tokenCount);
      const steps = Math.floor(rand() * 12);
      for (let step = 0; step < steps; step++) {
        const op = Math.floor(rand() * 5);
        if (op === 0) {
          draft = setIntent(draft, INTENTS[Math.floor(rand() * INTENTS.length)] as string);
        } else if (op === 1) {
          draft = setFlag(draft, rand() < 0.5 ? "meaningless" : "ambiguous");
        } else if (op === 2) {
          const start = Math.floor(rand() * (tokenCount + 2)) - 1;
          const end = start + Math.floor(rand() * 3);
          const updated = addSlot(draft, {
            label: LABELS[Math.floor(rand() * LABELS.length)] as string, start, end,
          });
          if (updated !== null) draft = updated;
        } else if (op === 3) {
          draft = removeSlot(draft, Math.floor(rand() * (draft.slots.length + 1)));
        } else {
          draft = clearChoice(draft);
        }

        // invariants: slots sorted, disjoint, in range, never alongside a flag
        for (let i = 0; i < draft.slots.length; i++) {
          const slot = draft.slots[i]!;
          expect(slot.start).toBeGreaterThanOrEqual(0);
          expect(slot.end).toBeLessThan(tokenCount);
          expect(slot.start).toBeLessThanOrEqual(slot.end);
          for (let j = i + 1; j < draft.slots.length; j++) {
            expect(rangesOverlap(slot, draft.slots[j]!)).toBe(false);
          }
        }
        if (draft.flag !== null) expect(draft.slots).toEqual([]);
        expect(draft.intent !== null && draft.flag !== null).toBe(false);

        if (isSubmittable(draft)) {
          const body = toRequestBody(draft);
          // mirror of the service's own checks
          if (body.decision === "valid") {
            expect(body.intent).toBeTruthy();
            for (const slot of body.slots ?? []) {
              expect(slot.end).toBeLessThan(tokenCount);
            }
          } else {
            expect(body.intent).toBeUndefined();
            expect(body.slots).toBeUndefined();
          }
        } else {
          expect(() => toRequestBody(draft)).toThrow();
        }
      }
    }
  });
});
