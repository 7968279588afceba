"""Workflow glue between modules: augmentation building, evaluation reports,
augmented-dataset files, and the adversarial-set export format.

File formats owned here:
  - augmented dataset (JSONL): {"id", "text", "intent", "slots", "origin",
    "weight", "original_id"} per line
  - adversarial export (TSV): text<TAB>intent<TAB>slots<TAB>source
  - report (JSONL rows + aligned text table)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .corpus import (Annotation, DataError, LabeledExample, SlotSpan, Utterance,
                     format_slots, normalize, parse_slot_field)
from .pairing import PairingConfig
from .paraphraser import dedupe
from .tagger import (TaggerConfig, TaggerModel, ensemble_predict, exact_match, predict_batch,
                     self_train_tag)


@dataclass
class ExperimentConfig:
    """One training run, fully resolved: data, model, losses, outputs, seed.

    A frozen copy is written into every run's output directory so the run
    can be reproduced from the artifact alone.
    """

    train: str
    output_dir: str
    dev: str | None = None
    test: str | None = None
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    pairing: PairingConfig | None = None
    augment: list = field(default_factory=list)      # augmented JSONL paths (task loss on)
    pair_data: list = field(default_factory=list)    # paraphrase JSONL paths (pairing only)
    eval_sets: dict = field(default_factory=dict)    # name -> dataset path
    seed: int = 0

    def validate(self):
        self.tagger.validate()
        if self.pairing is not None:
            self.pairing.validate()
        if self.augment and self.pair_data:
            raise DataError("config may set augment or pair_data, not both")
        for path in [self.train, self.dev, self.test, *self.augment, *self.pair_data,
                     *self.eval_sets.values()]:
            if path and not os.path.exists(path):
                raise DataError(f"referenced path does not exist: {path}")

    def to_json(self) -> dict:
        return {"train": self.train, "dev": self.dev, "test": self.test,
                "output_dir": self.output_dir, "tagger": self.tagger.to_json(),
                "pairing": self.pairing.to_json() if self.pairing else None,
                "augment": list(self.augment), "pair_data": list(self.pair_data),
                "eval_sets": dict(self.eval_sets), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        return cls(train=obj["train"], dev=obj.get("dev"), test=obj.get("test"),
                   output_dir=obj["output_dir"],
                   tagger=TaggerConfig.from_json(obj.get("tagger", {})),
                   pairing=PairingConfig.from_json(obj["pairing"]) if obj.get("pairing") else None,
                   augment=list(obj.get("augment", [])),
                   pair_data=list(obj.get("pair_data", [])),
                   eval_sets=dict(obj.get("eval_sets", {})),
                   seed=int(obj.get("seed", 0)))


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        config = ExperimentConfig.from_json(json.load(fh))
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Augmentation


def build_augmented(model: TaggerModel, originals, paraphrase_sets, weight: float = 0.1,
                    exclude_texts: set | None = None) -> list[LabeledExample]:
    """Self-train-tag paraphrase beams into weighted augmented examples.

    Beams already present in the training data (lowercased) are dropped,
    the intent is copied from the original's gold, and slots come from
    the model's own prediction on the paraphrase.
    """
    by_id = {ex.utterance.id: ex for ex in originals}
    reference = exclude_texts if exclude_texts is not None else {
        normalize(ex.utterance.text) for ex in originals}
    out = []
    for pset in paraphrase_sets:
        original = by_id.get(pset.original_id)
        if original is None:
            continue
        for rank, beam in enumerate(dedupe(pset.beams, reference)):
            utt = Utterance.make(f"{pset.original_id}::{pset.source}::{rank}", beam.text)
            annotation = self_train_tag(model, utt, original)
            out.append(LabeledExample(utt, annotation, origin="augmented", weight=weight,
                                      original_id=original.utterance.id))
    return out


def write_augmented(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "id": ex.utterance.id,
                "text": ex.utterance.text,
                "intent": ex.annotation.intent,
                "slots": format_slots(ex.annotation.slots),
                "origin": ex.origin,
                "weight": ex.weight,
                "original_id": ex.original_id,
            }) + "\n")


def read_augmented(path) -> list[LabeledExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                utt = Utterance.make(obj["id"], obj["text"])
                ann = Annotation(obj["intent"], tuple(parse_slot_field(obj["slots"])))
                out.append(LabeledExample(utt, ann, origin=obj.get("origin", "augmented"),
                                          weight=float(obj.get("weight", 0.1)),
                                          original_id=obj.get("original_id")))
            except (KeyError, ValueError, DataError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Adversarial-set export file (canonical columns + source descriptor)


def write_advset_file(path, rows):
    """rows: (LabeledExample, source descriptor) pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex, source in rows:
            fh.write(f"{ex.utterance.text}\t{ex.annotation.intent}"
                     f"\t{format_slots(ex.annotation.slots)}\t{source}\n")


def read_advset_file(path) -> dict:
    """Exported adversarial examples grouped by source descriptor."""
    groups: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 columns, got {len(parts)}")
            text, intent, slots, source = parts
            utt = Utterance.make(f"{path}-{lineno}", text)
            ann = Annotation(intent, tuple(parse_slot_field(slots)))
            groups.setdefault(source, []).append(
                LabeledExample(utt, ann, origin="adversarial", weight=1.0))
    return groups


# ---------------------------------------------------------------------------
# Evaluation reports


@dataclass
class ReportRow:
    model: str
    clean: float                         # percent
    adversarial: dict = field(default_factory=dict)  # set name -> percent

    @property
    def adv_average(self) -> float:
        if not self.adversarial:
            return 0.0
        return sum(self.adversarial.values()) / len(self.adversarial)

    def to_json(self):
        return {"model": self.model, "clean": self.clean,
                "adversarial": dict(self.adversarial), "adv_average": self.adv_average}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["model"], obj["clean"], dict(obj["adversarial"]))


@dataclass
class EvalReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"metadata": self.metadata})]
        lines += [json.dumps(r.to_json()) for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EvalReport":
        lines = [line for line in text.splitlines() if line.strip()]
        metadata = json.loads(lines[0])["metadata"]
        rows = [ReportRow.from_json(json.loads(line)) for line in lines[1:]]
        return cls(rows, metadata)

    def render(self) -> str:
        """Aligned table, percentages with one decimal."""
        adv_names = []
        for row in self.rows:
            for name in row.adversarial:
                if name not in adv_names:
                    adv_names.append(name)
        headers = ["model", "clean"] + adv_names + ["adv-avg"]
        table = [headers]
        for row in self.rows:
            cells = [row.model, f"{row.clean:.1f}"]
            cells += [f"{row.adversarial[n]:.1f}" if n in row.adversarial else "-"
                      for n in adv_names]
            cells.append(f"{row.adv_average:.1f}")
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
        out = []
        for r in table:
            out.append("  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                                 for i, cell in enumerate(r)))
        return "\n".join(out) + "\n"


def evaluate_examples(predictor, examples) -> float:
    """Exact-match percentage of one model or an ensemble on a dataset."""
    golds = [ex.annotation for ex in examples]
    if isinstance(predictor, (list, tuple)):
        preds = [ensemble_predict(list(predictor), ex.utterance) for ex in examples]
    else:
        preds = predict_batch(predictor, [ex.utterance for ex in examples])
    return 100.0 * exact_match(preds, golds)


def make_report(variants, clean_set, adversarial_sets, metadata=None) -> EvalReport:
    """One row per (name, model-or-ensemble); columns clean + each adversarial set.

    adversarial_sets maps set name to examples; every set must be nonempty.
    """
    if not clean_set:
        raise DataError("clean test set is empty")
    for name, examples in adversarial_sets.items():
        if not examples:
            raise DataError(f"adversarial test set {name!r} is empty")
    rows = []
    for name, predictor in variants:
        clean = evaluate_examples(predictor, clean_set)
        adv = {set_name: evaluate_examples(predictor, examples)
               for set_name, examples in adversarial_sets.items()}
        rows.append(ReportRow(name, clean, adv))
    return EvalReport(rows, metadata or {})
