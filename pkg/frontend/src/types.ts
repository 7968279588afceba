/** Wire types of the annotation service API. */

export interface CandidateView {
  candidate_id: string;
  paraphrase_text: string;
  paraphrase_tokens: string[];
  original_text: string | null;
  source: string;
  intents: string[];
  slot_labels: string[];
}

export interface RecordedDecision {
  kind: "valid" | "meaningless" | "ambiguous";
  intent?: string;
  slots?: [string, number, number][];
}

export interface AdjudicationView extends CandidateView {
  annotations: { annotator_id: string; decision: RecordedDecision }[];
}

export interface SlotBody {
  label: string;
  start: number;
  end: number;
}

export interface AnnotationBody {
  candidate_id: string;
  decision: "valid" | "meaningless" | "ambiguous";
  intent?: string;
  slots?: SlotBody[];
}

export interface SubmitResult {
  candidate_id: string;
  status: string;
}

export interface Progress {
  total: number;
  by_status: Record<string, number>;
  by_source: Record<string, Record<string, number>>;
}

export interface LabelSpace {
  intents: string[];
  slot_labels: string[];
}
