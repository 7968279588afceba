/** DOM wiring for the annotation tool.
 *
 * Annotator flow: pull a candidate, drag across token cells to select a
 * span, pick its slot label, choose an intent (keys 1-9) or flag the
 * sentence meaningless (m) / ambiguous (x), submit (enter). Adjudicator
 * flow shows the two conflicting annotations side by side.
 */

import { ApiClient, ApiError } from "./api.js";
import { addSlot, beginSelection, clearChoice, DraftState, emptySelection, extendSelection,
         Flag, isSubmittable, newDraft, removeSlot, selectionRange, setFlag, setIntent,
         TokenSelection, toRequestBody } from "./draft.js";
import type { AdjudicationView, CandidateView, RecordedDecision } from "./types.js";

type Mode = "annotate" | "adjudicate";

interface AppState {
  client: ApiClient | null;
  mode: Mode;
  candidate: CandidateView | AdjudicationView | null;
  draft: DraftState | null;
  selection: TokenSelection;
  dragging: boolean;
  pendingLabel: string | null;
  notice: string;
}

const state: AppState = {
  client: null,
  mode: "annotate",
  candidate: null,
  draft: null,
  selection: emptySelection(),
  dragging: false,
  pendingLabel: null,
  notice: "",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function root(): HTMLElement {
  return document.getElementById("app") as HTMLElement;
}

function notice(message: string) {
  state.notice = message;
  const bar = document.getElementById("notice");
  if (bar) {
    bar.textContent = message;
    bar.className = message ? "notice visible" : "notice";
  }
}

async function loadNext() {
  if (!state.client) return;
  state.selection = emptySelection();
  state.pendingLabel = null;
  try {
    const candidate = state.mode === "annotate"
      ? await state.client.nextCandidate()
      : await state.client.nextAdjudication();
    state.candidate = candidate;
    state.draft = candidate ? newDraft(candidate.candidate_id,
                                       candidate.paraphrase_tokens.length) : null;
  } catch (err) {
    state.candidate = null;
    state.draft = null;
    notice(err instanceof ApiError ? `request failed: ${JSON.stringify(err.detail)}`
                                   : String(err));
  }
  render();
}

async function submit() {
  if (!state.client || !state.draft || !isSubmittable(state.draft)) return;
  const body = toRequestBody(state.draft);
  try {
    const result = state.mode === "annotate"
      ? await state.client.submitAnnotation(body)
      : await state.client.submitAdjudication(body);
    notice(`saved ${result.candidate_id}: ${result.status}`);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      notice("someone already covered this one; moving on");
    } else {
      notice(err instanceof ApiError ? `rejected: ${JSON.stringify(err.detail)}` : String(err));
      render();
      return; // validation problem: stay on the candidate
    }
  }
  await loadNext();
}

function handleKey(event: KeyboardEvent) {
  if (!state.candidate || !state.draft) return;
  if (event.target instanceof HTMLInputElement) return;
  const intents = state.candidate.intents;
  const num = parseInt(event.key, 10);
  if (num >= 1 && num <= Math.min(9, intents.length)) {
    state.draft = setIntent(state.draft, intents[num - 1] as string);
    render();
  } else if (event.key === "m") {
    state.draft = setFlag(state.draft, "meaningless");
    render();
  } else if (event.key === "x") {
    state.draft = setFlag(state.draft, "ambiguous");
    render();
  } else if (event.key === "Enter") {
    void submit();
  } else if (event.key === "Escape") {
    state.draft = clearChoice(state.draft);
    state.selection = emptySelection();
    render();
  }
}

function tokenCells(tokens: string[]): HTMLElement {
  const range = selectionRange(state.selection);
  const row = el("div", { class: "tokens" });
  tokens.forEach((token, i) => {
    const inSelection = range !== null && i >= range.start && i <= range.end;
    const slot = state.draft?.slots.find((s) => i >= s.start && i <= s.end);
    const cell = el("span", {
      class: "token" + (inSelection ? " selected" : "") + (slot ? " slotted" : ""),
      "data-index": String(i),
    }, token);
    if (slot && i === slot.start) {
      cell.append(el("span", { class: "slot-tag" }, slot.label));
    }
    cell.addEventListener("mousedown", (e) => {
      e.preventDefault();
      state.dragging = true;
      state.selection = beginSelection(i);
      render();
    });
    cell.addEventListener("mouseenter", () => {
      if (state.dragging) {
        state.selection = extendSelection(state.selection, i);
        render();
      }
    });
    row.append(cell);
  });
  return row;
}

function labelPicker(labels: string[]): HTMLElement {
  const range = selectionRange(state.selection);
  const box = el("div", { class: "label-picker" },
                 el("span", { class: "hint" },
                    range ? `label tokens ${range.start}-${range.end}:` : ""));
  if (!range) return box;
  labels.forEach((label) => {
    const button = el("button", { class: "label-btn" }, label);
    button.addEventListener("click", () => {
      if (!state.draft) return;
      const updated = addSlot(state.draft, { label, start: range.start, end: range.end });
      if (updated === null) {
        notice("overlapping or invalid selection");
      } else {
        state.draft = updated;
        state.selection = emptySelection();
        notice("");
      }
      render();
    });
    box.append(button);
  });
  return box;
}

function intentPalette(intents: string[]): HTMLElement {
  const box = el("div", { class: "intents" });
  intents.forEach((intent, i) => {
    const button = el("button", {
      class: "intent-btn" + (state.draft?.intent === intent ? " active" : ""),
    }, i < 9 ? `${i + 1}. ${intent}` : intent);
    button.addEventListener("click", () => {
      if (state.draft) {
        state.draft = setIntent(state.draft, intent);
        render();
      }
    });
    box.append(button);
  });
  return box;
}

function flagButtons(): HTMLElement {
  const box = el("div", { class: "flags" });
  const flags: [Flag, string][] = [["meaningless", "m. meaningless"], ["ambiguous", "x. ambiguous"]];
  for (const [flag, label] of flags) {
    const button = el("button", {
      class: "flag-btn" + (state.draft?.flag === flag ? " active" : ""),
    }, label);
    button.addEventListener("click", () => {
      if (state.draft) {
        state.draft = setFlag(state.draft, flag);
        render();
      }
    });
    box.append(button);
  }
  return box;
}

function slotChips(): HTMLElement {
  const box = el("div", { class: "chips" });
  state.draft?.slots.forEach((slot, index) => {
    const chip = el("span", { class: "chip" }, `${slot.label} [${slot.start}-${slot.end}]`);
    const remove = el("button", { class: "chip-x" }, "×");
    remove.addEventListener("click", () => {
      if (state.draft) {
        state.draft = removeSlot(state.draft, index);
        render();
      }
    });
    chip.append(remove);
    box.append(chip);
  });
  return box;
}

function decisionSummary(decision: RecordedDecision): string {
  if (decision.kind !== "valid") return decision.kind;
  const slots = (decision.slots ?? []).map(([label, s, e]) => `${label}[${s}-${e}]`).join(" ");
  return `${decision.intent}${slots ? " " + slots : ""}`;
}

function render() {
  const app = root();
  app.replaceChildren();
  app.append(el("div", { class: "notice" + (state.notice ? " visible" : ""), id: "notice" },
                state.notice));
  if (!state.client) {
    app.append(renderLogin());
    return;
  }
  if (!state.candidate || !state.draft) {
    app.append(el("div", { class: "done" },
                  el("h2", {}, "all done"),
                  el("p", {}, state.mode === "annotate"
                      ? "no candidates left for you to annotate"
                      : "no disagreements waiting for adjudication")));
    return;
  }
  const candidate = state.candidate;
  const card = el("div", { class: "card" });
  card.append(el("div", { class: "source" }, `source: ${candidate.source}`));
  card.append(tokenCells(candidate.paraphrase_tokens));
  card.append(labelPicker(candidate.slot_labels));
  card.append(slotChips());
  if (candidate.original_text) {
    card.append(el("div", { class: "original" }, "original: ", candidate.original_text));
  }
  if (state.mode === "adjudicate" && "annotations" in candidate) {
    const panel = el("div", { class: "disagreement" },
                     el("h3", {}, "conflicting annotations"));
    for (const ann of (candidate as AdjudicationView).annotations) {
      panel.append(el("div", { class: "previous" },
                      `${ann.annotator_id}: ${decisionSummary(ann.decision)}`));
    }
    card.append(panel);
  }
  card.append(el("h3", {}, "intent"));
  card.append(intentPalette(candidate.intents));
  card.append(flagButtons());
  const submitButton = el("button", {
    class: "submit",
    ...(isSubmittable(state.draft) ? {} : { disabled: "disabled" }),
  }, "submit (enter)");
  submitButton.addEventListener("click", () => void submit());
  card.append(submitButton);
  app.append(card);
}

function renderLogin(): HTMLElement {
  const token = el("input", { type: "password", placeholder: "session token", id: "token" });
  token.value = localStorage.getItem("annotation-token") ?? "";
  const mode = el("select", { id: "mode" },
                  el("option", { value: "annotate" }, "annotate"),
                  el("option", { value: "adjudicate" }, "adjudicate"));
  const go = el("button", { class: "submit" }, "start");
  go.addEventListener("click", () => {
    localStorage.setItem("annotation-token", token.value);
    state.client = new ApiClient("", token.value);
    state.mode = (mode as HTMLSelectElement).value as Mode;
    void loadNext();
  });
  return el("div", { class: "login" },
            el("h2", {}, "annotation"),
            token, mode, go);
}

export function start() {
  document.addEventListener("keydown", handleKey);
  document.addEventListener("mouseup", () => {
    state.dragging = false;
  });
  render();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start();
}
