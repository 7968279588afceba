"""Logit-pairing loss terms.

Clean pairing pulls together the logits of same-annotation sentences in
a batch; adversarial pairing pulls a sentence toward its paraphrases
(and optionally paraphrases toward each other). Slot logits are paired
per entity, mean-pooled over the entity's tokens, with entities matched
by common label left to right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class PairingConfig:
    lambda_sf: float = 0.0         # clean pairing weight
    lambda_a: float = 0.01         # adversarial pairing weight
    pair_cap: int = 10             # max sampled pairs per group
    include_para_para: bool = True
    seed: int = 0

    def validate(self):
        if not (np.isfinite(self.lambda_sf) and np.isfinite(self.lambda_a)):
            raise ValueError("pairing weights must be finite")
        if self.lambda_sf < 0 or self.lambda_a < 0:
            raise ValueError("pairing weights must be >= 0")
        if self.pair_cap < 1:
            raise ValueError(f"pair_cap must be >= 1, got {self.pair_cap}")

    def to_json(self) -> dict:
        return {"lambda_sf": self.lambda_sf, "lambda_a": self.lambda_a,
                "pair_cap": self.pair_cap, "include_para_para": self.include_para_para,
                "seed": self.seed}

    @classmethod
    def from_json(cls, obj) -> "PairingConfig":
        return cls(**obj)


@dataclass
class PairGroup:
    key: tuple              # (intent, sorted slot-label multiset)
    members: list[int]      # indices into the batch


@dataclass
class PairingItem:
    """One sentence's pairable logits: intent vector plus per-entity slot vectors."""

    intent_logits: Tensor                 # [1, n_intents]
    entities: list[tuple[str, Tensor]]    # (label, [1, n_tags]) in position order

    def labels(self) -> list[str]:
        return [lab for lab, _ in self.entities]


def annotation_key(example) -> tuple:
    labels = tuple(sorted(s.label for s in example.annotation.slots))
    return (example.annotation.intent, labels)


def group_by_annotation(batch) -> list[PairGroup]:
    """Partition batch indices by (intent, slot-label multiset)."""
    groups = {}
    for idx, ex in enumerate(batch):
        groups.setdefault(annotation_key(ex), []).append(idx)
    return [PairGroup(key, members) for key, members in groups.items()]


def sample_pairs(group: PairGroup, cap: int, rng: np.random.Generator):
    """All unordered member pairs, uniformly subsampled to cap when larger."""
    members = group.members
    pairs = [(members[a], members[b])
             for a in range(len(members)) for b in range(a + 1, len(members))]
    if len(pairs) <= cap:
        return pairs
    chosen = rng.choice(len(pairs), size=cap, replace=False)
    return [pairs[i] for i in sorted(chosen)]


def align_slots(original_labels, paraphrase_labels):
    """Match i-th occurrence of each common label, left to right.

    Returns (original_index, paraphrase_index, label) triples sorted by
    original position; unmatched entities on either side are dropped.
    """
    remaining = {}
    for j, lab in enumerate(paraphrase_labels):
        remaining.setdefault(lab, []).append(j)
    taken = {lab: 0 for lab in remaining}
    out = []
    for i, lab in enumerate(original_labels):
        queue = remaining.get(lab, [])
        if taken.get(lab, 0) < len(queue):
            out.append((i, queue[taken[lab]], lab))
            taken[lab] += 1
    return out


def _pair_term(a: PairingItem, b: PairingItem) -> Tensor:
    parts = [T.mse(a.intent_logits, b.intent_logits)]
    for i, j, _ in align_slots(a.labels(), b.labels()):
        parts.append(T.mse(a.entities[i][1], b.entities[j][1]))
    return T.add_n(parts)


def clean_pair_loss(items, groups, cfg: PairingConfig,
                    rng: np.random.Generator | None = None) -> Tensor:
    """(lambda_sf / P) * sum over sampled same-annotation pairs of paired MSEs."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    terms = []
    total_pairs = 0
    for group in groups:
        for i, j in sample_pairs(group, cfg.pair_cap, rng):
            terms.append(_pair_term(items[i], items[j]))
            total_pairs += 1
    if total_pairs == 0:
        return T.tensor(np.float32(0.0))
    return T.scale(T.add_n(terms), cfg.lambda_sf / total_pairs)


def adv_pair_loss(pair_sets, cfg: PairingConfig) -> Tensor:
    """(lambda_a / P) * sum over original-paraphrase (and paraphrase-paraphrase) pairs.

    pair_sets is a list of (original PairingItem, [paraphrase PairingItem...]).
    P counts every pair across the whole collection, para-para included.
    """
    terms = []
    total_pairs = 0
    for original, paraphrases in pair_sets:
        for para in paraphrases:
            terms.append(_pair_term(original, para))
            total_pairs += 1
        if cfg.include_para_para:
            for a in range(len(paraphrases)):
                for b in range(a + 1, len(paraphrases)):
                    terms.append(_pair_term(paraphrases[a], paraphrases[b]))
                    total_pairs += 1
    if total_pairs == 0:
        return T.tensor(np.float32(0.0))
    return T.scale(T.add_n(terms), cfg.lambda_a / total_pairs)
