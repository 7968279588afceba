"""Data model and dataset ingestion for the joint intent/slot task.

Canonical file format (UTF-8, one record per line):

    text<TAB>intent<TAB>label:start-end[,label:start-end...]

Slot indices are inclusive token positions over the lowercased
whitespace-split tokens; the slot field may be empty. An importer for
token/tag column files (CoNLL-style blocks) is provided as well.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)

ORIGINS = ("clean", "augmented", "adversarial")


class DataError(ValueError):
    """Malformed records, inconsistent labels, or invalid spans."""


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def tokenize(text: str) -> list[str]:
    tokens = text.lower().split()
    if not tokens:
        raise DataError(f"utterance has no tokens: {text!r}")
    return tokens


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def make(cls, uid: str, text: str) -> "Utterance":
        return cls(uid, text, tuple(tokenize(text)))


@dataclass(frozen=True, order=True)
class SlotSpan:
    start: int
    end: int  # inclusive
    label: str = field(compare=True)

    def validate(self, n_tokens: int):
        if not (0 <= self.start <= self.end < n_tokens):
            raise DataError(
                f"span {self.label}:{self.start}-{self.end} out of range for {n_tokens} tokens")


@dataclass(frozen=True)
class Annotation:
    intent: str
    slots: tuple[SlotSpan, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(sorted(self.slots)))
        prev_end = -1
        for s in self.slots:
            if s.start <= prev_end:
                raise DataError(f"overlapping slot spans at token {s.start}")
            prev_end = s.end

    def span_set(self) -> frozenset:
        return frozenset((s.label, s.start, s.end) for s in self.slots)


@dataclass
class LabeledExample:
    utterance: Utterance
    annotation: Annotation
    origin: str = "clean"
    weight: float = 1.0
    original_id: str | None = None  # paraphrase link for augmentation/ALP

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise DataError(f"unknown origin {self.origin!r}")
        if self.weight <= 0:
            raise DataError(f"weight must be positive, got {self.weight}")
        if self.origin == "clean" and self.weight != 1.0:
            raise DataError("clean examples must have weight 1.0")
        for s in self.annotation.slots:
            s.validate(len(self.utterance.tokens))


class LabelSpace:
    """Intent and slot label inventories plus the derived BIO tag set."""

    def __init__(self, intents, slot_labels):
        self.intents = tuple(sorted(set(intents)))
        self.slot_labels = tuple(sorted(set(slot_labels)))
        if not self.intents:
            raise DataError("label space needs at least one intent")
        self.tag_set = ("O",) + tuple(
            f"{prefix}-{label}" for label in self.slot_labels for prefix in ("B", "I"))
        self.intent_index = {lab: i for i, lab in enumerate(self.intents)}
        self.tag_index = {tag: i for i, tag in enumerate(self.tag_set)}

    def check(self, ann: Annotation):
        if ann.intent not in self.intent_index:
            raise DataError(f"unknown intent {ann.intent!r}")
        for s in ann.slots:
            if s.label not in self.slot_labels:
                raise DataError(f"unknown slot label {s.label!r}")

    def to_json(self) -> dict:
        return {"intents": list(self.intents), "slot_labels": list(self.slot_labels)}

    @classmethod
    def from_json(cls, obj: dict) -> "LabelSpace":
        return cls(obj["intents"], obj["slot_labels"])

    def __eq__(self, other):
        return (isinstance(other, LabelSpace) and self.intents == other.intents
                and self.slot_labels == other.slot_labels)


# ---------------------------------------------------------------------------
# BIO tags


def spans_to_bio(ann: Annotation, n_tokens: int) -> list[str]:
    """B- at each span start, I- inside, O elsewhere."""
    tags = ["O"] * n_tokens
    for s in ann.slots:
        s.validate(n_tokens)
        tags[s.start] = f"B-{s.label}"
        for i in range(s.start + 1, s.end + 1):
            tags[i] = f"I-{s.label}"
    return tags


def repair_bio(tags: list[str]) -> list[str]:
    """Promote orphan I-x (not preceded by B-x/I-x) to B-x."""
    out = list(tags)
    for i, tag in enumerate(out):
        if tag.startswith("I-"):
            label = tag[2:]
            if i == 0 or out[i - 1] not in (f"B-{label}", f"I-{label}"):
                out[i] = f"B-{label}"
    return out


def bio_to_spans(tags: list[str]) -> list[SlotSpan]:
    """Total function: ill-formed sequences are repaired first."""
    tags = repair_bio(tags)
    spans = []
    start = None
    label = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                spans.append(SlotSpan(start, i - 1, label))
            start, label = i, tag[2:]
        elif tag.startswith("I-"):
            pass  # guaranteed continuation after repair
        else:
            if start is not None:
                spans.append(SlotSpan(start, i - 1, label))
                start, label = None, None
    if start is not None:
        spans.append(SlotSpan(start, len(tags) - 1, label))
    return spans


# ---------------------------------------------------------------------------
# Canonical format


def format_slots(slots) -> str:
    return ",".join(f"{s.label}:{s.start}-{s.end}" for s in slots)


def parse_slot_field(text: str) -> list[SlotSpan]:
    spans = []
    text = text.strip()
    if not text:
        return spans
    for chunk in text.split(","):
        chunk = chunk.strip()
        try:
            label, rng = chunk.rsplit(":", 1)
            start, end = rng.split("-", 1)
            spans.append(SlotSpan(int(start), int(end), label.strip()))
        except ValueError as exc:
            raise DataError(f"malformed slot field {chunk!r}") from exc
    return spans


def serialize_example(ex: LabeledExample) -> str:
    return f"{ex.utterance.text}\t{ex.annotation.intent}\t{format_slots(ex.annotation.slots)}"


def parse_dataset(lines, id_prefix: str = "ex", label_space: LabelSpace | None = None,
                  origin: str = "clean"):
    """Parse canonical records into examples plus a label space.

    When label_space is None (training split) the space is built from the
    parsed examples; otherwise every record is validated against the given
    space and unknown labels are rejected.
    """
    examples = []
    intents, slot_labels = set(), set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise DataError(f"line {lineno}: expected text<TAB>intent[<TAB>slots], got {line!r}")
        text, intent = parts[0], parts[1].strip()
        slot_field = parts[2] if len(parts) > 2 else ""
        try:
            utt = Utterance.make(f"{id_prefix}-{lineno:06d}", text)
            ann = Annotation(intent, tuple(parse_slot_field(slot_field)))
            ex = LabeledExample(utt, ann, origin=origin,
                                weight=1.0 if origin == "clean" else 0.1)
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
        if label_space is not None:
            try:
                label_space.check(ann)
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
        intents.add(intent)
        slot_labels.update(s.label for s in ann.slots)
        examples.append(ex)
    if label_space is None:
        if not examples:
            raise DataError("no training data")
        label_space = LabelSpace(intents, slot_labels)
    return examples, label_space


def load_dataset(path, id_prefix: str | None = None, label_space: LabelSpace | None = None,
                 origin: str = "clean"):
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh, id_prefix or str(path), label_space, origin)


def write_dataset(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(serialize_example(ex) + "\n")


def parse_column_format(lines, id_prefix: str = "ex"):
    """Importer for token/tag column blocks.

    Blocks are separated by blank lines; each block starts with a
    `# intent: <label>` line followed by `token<TAB>tag` lines.
    """
    examples = []
    block_tokens, block_tags, intent = [], [], None
    block_start = 1

    def flush(lineno):
        nonlocal block_tokens, block_tags, intent
        if not block_tokens and intent is None:
            return
        if intent is None:
            raise DataError(f"block ending at line {lineno}: missing '# intent:' header")
        if not block_tokens:
            raise DataError(f"block ending at line {lineno}: no tokens")
        text = " ".join(block_tokens)
        utt = Utterance.make(f"{id_prefix}-{len(examples) + 1:06d}", text)
        spans = bio_to_spans(block_tags)
        examples.append(LabeledExample(utt, Annotation(intent, tuple(spans))))
        block_tokens, block_tags, intent = [], [], None

    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush(lineno)
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.lower().startswith("intent"):
                intent = body.split(":", 1)[1].strip()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected token<TAB>tag, got {line!r}")
        block_tokens.append(parts[0].strip().lower())
        block_tags.append(parts[1].strip())
    flush(lineno + 1)
    return examples


# ---------------------------------------------------------------------------
# Vocabulary


class Vocab:
    """Token to index map with reserved <pad>, <unk>, <bos>, <eos>."""

    def __init__(self, tokens):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.pad, self.unk = self.stoi[PAD], self.stoi[UNK]
        self.bos, self.eos = self.stoi[BOS], self.stoi[EOS]

    def __len__(self):
        return len(self.itos)

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk)

    def encode(self, tokens) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_json(self) -> list[str]:
        return self.itos[len(RESERVED):]

    @classmethod
    def from_json(cls, tokens) -> "Vocab":
        return cls(tokens)


def build_vocab(examples, min_count: int = 1) -> Vocab:
    """Frequency-desc, then lexicographic; tokens below min_count fall to <unk>."""
    if min_count < 1:
        raise DataError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for ex in examples:
        counts.update(ex.utterance.tokens)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


def augmented_example(original: LabeledExample, utterance: Utterance, annotation: Annotation,
                      weight: float = 0.1) -> LabeledExample:
    return LabeledExample(utterance, annotation, origin="augmented", weight=weight,
                          original_id=original.utterance.id)


def with_weight(ex: LabeledExample, weight: float) -> LabeledExample:
    return replace(ex, weight=weight)
