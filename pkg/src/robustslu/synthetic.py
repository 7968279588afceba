"""Synthetic grammar for desk-scale experiments.

Generates gold-annotated weather/alarm style corpora from intent
templates with slot placeholders, plus a held-out perturbation set built
by applying rewrite rules that the training distribution never saw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Annotation, DataError, LabeledExample, SlotSpan, Utterance
from .rules import RewriteRule, apply_rule, rule_variants


@dataclass
class SyntheticGrammar:
    intents: dict            # intent -> list of templates with {slot} holes
    lexicons: dict           # slot label -> list of value strings
    rules: list = field(default_factory=list)          # augmentation-visible rewrites
    heldout_rules: list = field(default_factory=list)  # perturbation-only rewrites

    def validate(self):
        if len(self.intents) < 4:
            raise DataError(f"grammar needs >= 4 intents, has {len(self.intents)}")
        if len(self.lexicons) < 3:
            raise DataError(f"grammar needs >= 3 slot labels, has {len(self.lexicons)}")
        for intent, templates in self.intents.items():
            if not templates:
                raise DataError(f"intent {intent!r} has no templates")
            for tpl in templates:
                for slot in _template_slots(tpl):
                    if slot not in self.lexicons:
                        raise DataError(f"template {tpl!r} uses unknown slot {slot!r}")

    def to_json(self) -> dict:
        return {"intents": self.intents, "lexicons": self.lexicons,
                "rules": [r.to_json() for r in self.rules],
                "heldout_rules": [r.to_json() for r in self.heldout_rules]}

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticGrammar":
        g = cls(obj["intents"], obj["lexicons"],
                [RewriteRule.from_json(r) for r in obj.get("rules", [])],
                [RewriteRule.from_json(r) for r in obj.get("heldout_rules", [])])
        g.validate()
        return g


def load_grammar(path) -> SyntheticGrammar:
    with open(path, encoding="utf-8") as fh:
        return SyntheticGrammar.from_json(json.load(fh))


def save_grammar(path, grammar: SyntheticGrammar):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grammar.to_json(), fh, indent=2)
        fh.write("\n")


def _template_slots(template: str) -> list[str]:
    out = []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            out.append(piece[1:-1])
    return out


def _render(template: str, values: dict):
    """Fill placeholders; returns (tokens, spans) with spans by construction."""
    tokens, spans = [], []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            label = piece[1:-1]
            value_tokens = values[label].split()
            spans.append(SlotSpan(len(tokens), len(tokens) + len(value_tokens) - 1, label))
            tokens.extend(value_tokens)
        else:
            tokens.append(piece)
    return tokens, spans


@dataclass
class SyntheticSplits:
    train: list
    dev: list
    test: list
    perturbed: list
    grammar: SyntheticGrammar


def generate_synthetic(grammar: SyntheticGrammar, seed: int, n_train: int, n_test: int,
                       n_dev: int | None = None, max_variants_per_sentence: int = 3,
                       perturb_chain: tuple = (2, 3)) -> SyntheticSplits:
    """Deterministic gold-annotated splits plus the held-out perturbation set.

    Sentences are unique across all splits. Each perturbed sentence chains
    perturb_chain[0]..perturb_chain[1] distinct held-out rewrite rules on a
    test sentence (paraphrase beams from real MT pile up several small
    edits at once), so it simulates a distribution shift the training data
    never exhibits.
    """
    grammar.validate()
    if n_dev is None:
        n_dev = max(1, n_test // 2)
    rng = np.random.default_rng(seed)
    intents = sorted(grammar.intents)
    total = n_train + n_dev + n_test
    seen = set()
    sentences = []
    attempts = 0
    while len(sentences) < total:
        attempts += 1
        if attempts > 400 * total:
            raise DataError(f"grammar too small: only {len(sentences)} unique sentences "
                            f"after {attempts} draws, need {total}")
        intent = intents[rng.integers(len(intents))]
        templates = grammar.intents[intent]
        template = templates[rng.integers(len(templates))]
        values = {}
        for slot in _template_slots(template):
            lex = grammar.lexicons[slot]
            values[slot] = lex[rng.integers(len(lex))]
        tokens, spans = _render(template, values)
        text = " ".join(tokens)
        if text in seen:
            continue
        seen.add(text)
        sentences.append((text, intent, spans))
    # uniqueness exhausts small template families first; shuffle so every
    # split draws from the same template distribution
    order = rng.permutation(len(sentences))
    sentences = [sentences[i] for i in order]

    def build(split, items):
        out = []
        for i, (text, intent, spans) in enumerate(items, start=1):
            utt = Utterance.make(f"synth-{split}-{i:06d}", text)
            out.append(LabeledExample(utt, Annotation(intent, tuple(spans))))
        return out

    train = build("train", sentences[:n_train])
    dev = build("dev", sentences[n_train:n_train + n_dev])
    test = build("test", sentences[n_train + n_dev:])

    lo, hi = perturb_chain
    if not (1 <= lo <= hi):
        raise DataError(f"perturb_chain must satisfy 1 <= lo <= hi, got {perturb_chain}")
    perturbed = []
    seen_perturbed = set()
    n_rules = len(grammar.heldout_rules)
    for ex in test:
        taken = 0
        for _attempt in range(4 * max_variants_per_sentence):
            if taken >= max_variants_per_sentence or n_rules == 0:
                break
            depth = int(rng.integers(lo, hi + 1))
            tokens = list(ex.utterance.tokens)
            spans = list(ex.annotation.slots)
            applied = 0
            for ri in rng.permutation(n_rules):
                if applied >= depth:
                    break
                rule = grammar.heldout_rules[ri]
                result = apply_rule(rule, tokens, spans,
                                    int(rng.integers(len(rule.options))))
                if result is None:
                    continue
                tokens, spans = result
                applied += 1
            if applied == 0:
                continue
            text = " ".join(tokens)
            if text in seen_perturbed or text in seen:
                continue
            seen_perturbed.add(text)
            utt = Utterance.make(f"{ex.utterance.id}-perturbed-{taken + 1}", text)
            perturbed.append(LabeledExample(utt, Annotation(ex.annotation.intent, tuple(spans)),
                                            origin="adversarial", weight=1.0))
            taken += 1
    return SyntheticSplits(train, dev, test, perturbed, grammar)


def default_grammar() -> SyntheticGrammar:
    """Built-in weather/alarm style grammar: 6 intents, 5 slot labels.

    Short politeness tails are a routine part of the clean distribution,
    so gold supervision teaches that slots need not end the sentence; the
    held-out rewrite rules then probe unseen tails, verbs, and fillers.
    """
    tails = ["for me", "again", "real quick", "first thing", "one more time"]
    base_templates = {
        "alarm/set": [
            "set an alarm for {datetime}",
            "set a {alarm_name} alarm for {datetime}",
            "set an alarm called {alarm_name} for {datetime}",
            "wake me up at {datetime}",
        ],
        "alarm/cancel": [
            "cancel the alarm for {datetime}",
            "cancel the {alarm_name} alarm",
            "cancel every alarm i have",
            "turn off the {alarm_name} alarm",
        ],
        "alarm/modify": [
            "change the alarm to {datetime}",
            "change the {alarm_name} alarm to {datetime}",
            "move my alarm to {datetime}",
            "push the alarm back by {duration}",
        ],
        "timer/set": [
            "set a timer for {duration}",
            "start a timer for {duration}",
            "count down {duration}",
        ],
        "weather/find": [
            "what's the weather in {location} {datetime}",
            "what's the high in {location}",
            "show me the weather for {location}",
            "how is the weather looking in {location}",
        ],
        "weather/check_condition": [
            "will it {weather_condition} in {location} {datetime}",
            "is it going to {weather_condition} {datetime}",
            "any chance of {weather_condition} in {location}",
        ],
    }
    intents = {}
    for i, (intent, templates) in enumerate(base_templates.items()):
        expanded = list(templates)
        for j, tpl in enumerate(templates):
            expanded.append(tpl + " " + tails[(i + j) % len(tails)])
            expanded.append(tpl + " " + tails[(i + j + 2) % len(tails)])
        intents[intent] = expanded
    lexicons = {
        "location": ["sydney", "seattle", "portland", "boston", "denver", "oslo", "paris",
                     "austin", "chicago", "miami", "dublin", "tokyo", "cairo", "lima",
                     "new york", "san francisco", "los angeles", "palo alto"],
        "datetime": ["today", "tomorrow", "tonight", "this morning", "this afternoon",
                     "this weekend", "next monday", "next friday", "9 am", "6 pm",
                     "noon", "midnight", "sunday morning", "april third"],
        "weather_condition": ["rain", "snow", "hail", "drizzle", "thunder", "fog",
                              "sleet", "wind", "frost", "storm"],
        "alarm_name": ["wake up", "work", "gym", "school", "morning", "nap", "meeting",
                       "medicine", "workout", "yoga", "lunch break", "backup"],
        "duration": ["20 minutes", "an hour", "5 minutes", "90 seconds", "two hours",
                     "half an hour", "45 minutes", "ten minutes", "one minute", "three hours"],
    }

    def rule(name, find, options, anchor="any"):
        return RewriteRule(name, tuple(find.split()),
                           tuple(tuple(o.split()) for o in options), anchor)

    rules = [
        rule("tail-thanks", "", ["thanks"], anchor="end"),
        rule("tail-rightaway", "", ["right away"], anchor="end"),
        rule("tail-thankyou", "", ["thank you"], anchor="end"),
        rule("syn-set", "set", ["create", "make"], anchor="start"),
        rule("syn-cancel", "cancel", ["stop", "remove"], anchor="start"),
        rule("syn-whats", "what's", ["what is"], anchor="start"),
        rule("filler-canyou", "", ["can you"], anchor="start"),
    ]
    heldout_rules = [
        rule("tail-whenyoucan", "", ["when you can"], anchor="end"),
        rule("tail-ifpossible", "", ["if possible"], anchor="end"),
        rule("tail-okthanks", "", ["ok thanks"], anchor="end"),
        rule("syn-set-x", "set", ["schedule"], anchor="start"),
        rule("syn-cancel-x", "cancel", ["drop"], anchor="start"),
        rule("filler-kindly", "", ["kindly"], anchor="start"),
    ]
    return SyntheticGrammar(intents, lexicons, rules, heldout_rules)
