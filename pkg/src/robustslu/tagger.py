"""Joint intent classification and slot tagging model.

A biLSTM encoder feeds two projection heads: one over the concatenated
final forward/backward states for the intent, one per token for BIO slot
tags. Training combines the clean task loss, a down-weighted task loss
on augmented paraphrases, and optional logit-pairing terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import pairing as pairing_mod
from . import tensor as T
from .corpus import (Annotation, LabelSpace, SlotSpan, Utterance, Vocab, bio_to_spans,
                     build_vocab, repair_bio, spans_to_bio)
from .pairing import PairingConfig, PairingItem
from .tensor import Tensor


@dataclass
class TaggerConfig:
    hidden_size: int = 200
    num_layers: int = 2
    dropout: float = 0.3
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    epochs: int = 20
    embedding_dim: int = 128
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adamw"
    clip_norm: float = 5.0
    min_count: int = 1

    def validate(self):
        if min(self.hidden_size, self.num_layers, self.epochs, self.embedding_dim,
               self.batch_size, self.min_count) < 1:
            raise ValueError("size/count hyperparameters must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "TaggerConfig":
        return cls(**obj)


@dataclass
class Prediction:
    intent: str
    intent_logits: np.ndarray
    slot_tags: list[str]
    slot_logits: np.ndarray
    slots: list[SlotSpan]


class TaggerModel:
    """Parameters plus the vocab/label-space context they were trained in."""

    def __init__(self, vocab: Vocab, label_space: LabelSpace, config: TaggerConfig,
                 rng: np.random.Generator):
        self.vocab = vocab
        self.label_space = label_space
        self.config = config
        e, h = config.embedding_dim, config.hidden_size
        table = rng.uniform(-0.1, 0.1, size=(len(vocab), e)).astype(np.float32)
        table[vocab.pad] = 0.0  # padded positions are masked out anyway
        self.embedding = T.parameter(table, "embedding")
        self.encoder = T.init_bilstm(rng, e, h, config.num_layers, prefix="encoder")

        def head(d_in, d_out, name):
            a = np.sqrt(6.0 / (d_in + d_out))
            w = T.parameter(rng.uniform(-a, a, size=(d_in, d_out)).astype(np.float32), f"{name}.w")
            b = T.parameter(np.zeros(d_out, dtype=np.float32), f"{name}.b")
            return w, b

        self.intent_w, self.intent_b = head(2 * h, len(label_space.intents), "intent_head")
        self.slot_w, self.slot_b = head(2 * h, len(label_space.tag_set), "slot_head")

    def params(self) -> list[Tensor]:
        return ([self.embedding] + self.encoder.all()
                + [self.intent_w, self.intent_b, self.slot_w, self.slot_b])

    def snapshot(self) -> dict:
        return {p.name: p.data.copy() for p in self.params()}

    def restore(self, arrays: dict):
        for p in self.params():
            p.data = arrays[p.name].copy()

    def save(self, path):
        meta = {"tagger_config": self.config.to_json(),
                "label_space": self.label_space.to_json(),
                "vocab": self.vocab.to_json()}
        T.save_checkpoint(path, self.snapshot(), meta)
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TaggerModel":
        arrays, meta = T.load_checkpoint(path)
        config = TaggerConfig.from_json(meta["tagger_config"])
        model = cls(Vocab.from_json(meta["vocab"]), LabelSpace.from_json(meta["label_space"]),
                    config, np.random.default_rng(config.seed))
        model.restore(arrays)
        return model


@dataclass
class BatchForward:
    """Logits for one forwarded batch; token rows are laid out t-major."""

    intent_logits: Tensor       # [N, n_intents]
    token_logits: Tensor        # [N*Tmax, n_tags], row index = t*N + i
    lengths: list[int]
    n: int
    tmax: int

    def intent_row(self, i) -> Tensor:
        return T.narrow(self.intent_logits, 0, i, 1)

    def token_row(self, i, t) -> Tensor:
        return T.narrow(self.token_logits, 0, t * self.n + i, 1)

    def entity_logits(self, i, span: SlotSpan) -> Tensor:
        rows = [self.token_row(i, t) for t in range(span.start, span.end + 1)]
        return T.scale(T.add_n(rows), 1.0 / len(rows))

    def slot_matrix(self, i) -> np.ndarray:
        data = self.token_logits.data
        return np.stack([data[t * self.n + i] for t in range(self.lengths[i])])


def forward_batch(model: TaggerModel, utterances, training: bool = False,
                  rng: np.random.Generator | None = None) -> BatchForward:
    for utt in utterances:
        if not utt.tokens:
            raise ValueError(f"utterance {utt.id!r} has no tokens")
    n = len(utterances)
    lengths = [len(u.tokens) for u in utterances]
    tmax = max(lengths)
    ids = np.zeros((n, tmax), dtype=np.int64)
    mask = np.zeros((n, tmax))
    for i, utt in enumerate(utterances):
        ids[i, :lengths[i]] = model.vocab.encode(utt.tokens)
        mask[i, :lengths[i]] = 1.0
    xs = [T.gather_rows(model.embedding, ids[:, t]) for t in range(tmax)]
    outs, sent = T.bilstm_encode_batch(xs, mask, model.encoder,
                                       dropout_p=model.config.dropout if training else 0.0,
                                       rng=rng, training=training)
    intent_logits = T.affine(sent, model.intent_w, model.intent_b)
    token_states = T.concat(outs, axis=0)
    token_logits = T.affine(token_states, model.slot_w, model.slot_b)
    return BatchForward(intent_logits, token_logits, lengths, n, tmax)


def forward(model: TaggerModel, utterance: Utterance, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Single-utterance logits: ([n_intents], [T, n_tags])."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    fwd = forward_batch(model, [utterance], training=(mode == "train"), rng=rng)
    return fwd.intent_logits.data[0].copy(), fwd.slot_matrix(0)


def _decode(label_space: LabelSpace, intent_logits: np.ndarray,
            slot_logits: np.ndarray) -> Prediction:
    intent = label_space.intents[int(np.argmax(intent_logits))]
    raw = [label_space.tag_set[int(np.argmax(row))] for row in slot_logits]
    tags = repair_bio(raw)
    return Prediction(intent, intent_logits, tags, slot_logits, bio_to_spans(tags))


def predict(model: TaggerModel, utterance: Utterance) -> Prediction:
    intent_logits, slot_logits = forward(model, utterance, "eval")
    return _decode(model.label_space, intent_logits, slot_logits)


def predict_batch(model: TaggerModel, utterances, batch_size: int | None = None):
    batch_size = batch_size or model.config.batch_size
    out = []
    for lo in range(0, len(utterances), batch_size):
        chunk = utterances[lo:lo + batch_size]
        fwd = forward_batch(model, chunk, training=False)
        for i in range(len(chunk)):
            out.append(_decode(model.label_space, fwd.intent_logits.data[i].copy(),
                               fwd.slot_matrix(i)))
    return out


def exact_match(preds, golds) -> float:
    """Fraction of sentences whose intent and full slot-span set are both correct."""
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        return 0.0
    hits = 0
    for pred, gold in zip(preds, golds):
        pred_spans = frozenset((s.label, s.start, s.end) for s in pred.slots)
        if pred.intent == gold.intent and pred_spans == gold.span_set():
            hits += 1
    return hits / len(preds)


def vote_scores(logit_rows) -> np.ndarray:
    """Majority-vote scores: argmax counts plus a sub-vote softmax tie-break.

    The softmax of the summed logits lies in (0, 1), so it can only decide
    between labels with equal vote counts, exactly the stated tie rule.
    """
    summed = np.sum(logit_rows, axis=0)
    counts = np.zeros(summed.shape[0])
    for row in logit_rows:
        counts[int(np.argmax(row))] += 1.0
    ex = np.exp(summed - summed.max())
    return counts + ex / ex.sum()


def ensemble_predict(models, utterance: Utterance) -> Prediction:
    """Majority vote over members; ties broken by the larger summed logit."""
    if not models:
        raise ValueError("ensemble requires at least one model")
    space = models[0].label_space
    for m in models[1:]:
        if m.label_space != space:
            raise ValueError("ensemble members must share a label space")
    member_preds = [predict(m, utterance) for m in models]
    intent_scores = vote_scores([p.intent_logits for p in member_preds])
    n_tokens = len(utterance.tokens)
    slot_scores = np.stack([
        vote_scores([p.slot_logits[t] for p in member_preds]) for t in range(n_tokens)])
    return _decode(space, intent_scores, slot_scores)


def self_train_tag(model: TaggerModel, paraphrase: Utterance, original) -> Annotation:
    """Intent copied from the original's gold; slots from the model's own tags."""
    pred = predict(model, paraphrase)
    return Annotation(original.annotation.intent, tuple(pred.slots))


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpochStats:
    epoch: int
    clean_loss: float = 0.0
    augmented_loss: float = 0.0
    clean_pair_loss: float = 0.0
    adv_pair_loss: float = 0.0
    total_loss: float = 0.0
    dev_exact_match: float | None = None

    def to_json(self):
        return asdict(self)


def _task_loss(fwd: BatchForward, batch, label_space: LabelSpace, indices, norm: float):
    """Weighted intent CE + per-token slot CE averaged per sentence, over a subset.

    Rows outside the subset get weight 0 and contribute nothing, value or
    gradient, so clean and augmented terms can share one forward pass.
    """
    intent_targets = np.zeros(fwd.n, dtype=np.int64)
    intent_weights = np.zeros(fwd.n, dtype=np.float64)
    token_targets = np.zeros(fwd.n * fwd.tmax, dtype=np.int64)
    token_weights = np.zeros(fwd.n * fwd.tmax, dtype=np.float64)
    for i in indices:
        ex = batch[i]
        w = ex.weight / norm
        intent_targets[i] = label_space.intent_index[ex.annotation.intent]
        intent_weights[i] = w
        tags = spans_to_bio(ex.annotation, fwd.lengths[i])
        for t, tag in enumerate(tags):
            token_targets[t * fwd.n + i] = label_space.tag_index[tag]
            token_weights[t * fwd.n + i] = w / fwd.lengths[i]
    intent_loss = T.softmax_cross_entropy_rows(fwd.intent_logits, intent_targets, intent_weights)
    slot_loss = T.softmax_cross_entropy_rows(fwd.token_logits, token_targets, token_weights)
    return T.add(intent_loss, slot_loss)


def _pairing_items(fwd: BatchForward, batch, indices) -> dict:
    items = {}
    for i in indices:
        ex = batch[i]
        entities = [(s.label, fwd.entity_logits(i, s)) for s in ex.annotation.slots]
        items[i] = PairingItem(fwd.intent_row(i), entities)
    return items


def build_batch_loss(model: TaggerModel, batch_clean, batch_aug, para_links,
                     pairing: PairingConfig | None, pair_rng, augmented_task_loss: bool,
                     training: bool = True, rng=None):
    """Assemble the composite loss for one batch.

    para_links maps clean batch offsets to the offsets of their paraphrases
    within batch_clean + batch_aug. Returns (loss tensor, component dict).
    """
    space = model.label_space
    batch = batch_clean + batch_aug
    fwd = forward_batch(model, [ex.utterance for ex in batch], training=training, rng=rng)
    parts = {}
    clean_idx = list(range(len(batch_clean)))
    loss = _task_loss(fwd, batch, space, clean_idx, float(len(batch_clean)))
    parts["clean_loss"] = loss.item()
    if augmented_task_loss and batch_aug:
        aug_idx = list(range(len(batch_clean), len(batch)))
        aug_loss = _task_loss(fwd, batch, space, aug_idx, float(len(batch_aug)))
        parts["augmented_loss"] = aug_loss.item()
        loss = T.add(loss, aug_loss)
    if pairing is not None and pairing.lambda_sf > 0:
        groups = pairing_mod.group_by_annotation(batch_clean)
        items = _pairing_items(fwd, batch, clean_idx)
        cp = pairing_mod.clean_pair_loss([items[i] for i in clean_idx], groups,
                                         pairing, pair_rng)
        parts["clean_pair_loss"] = cp.item()
        loss = T.add(loss, cp)
    if pairing is not None and pairing.lambda_a > 0 and para_links:
        needed = sorted({i for ci, offs in para_links for i in [ci] + offs})
        items = _pairing_items(fwd, batch, needed)
        pair_sets = [(items[ci], [items[o] for o in offs]) for ci, offs in para_links]
        ap = pairing_mod.adv_pair_loss(pair_sets, pairing)
        parts["adv_pair_loss"] = ap.item()
        loss = T.add(loss, ap)
    return loss, parts


def train(clean, augmented, cfg: TaggerConfig, pairing: PairingConfig | None = None,
          dev=None, augmented_task_loss: bool = True):
    """Train a tagger; returns (model, per-epoch history).

    Augmented examples ride in the batch of the clean example they link
    to via original_id, contributing a weight-scaled task loss when
    augmented_task_loss is on and adversarial pairing terms when the
    pairing config has lambda_a > 0. Model selection keeps the epoch
    with the best dev exact match.
    """
    if not clean:
        raise ValueError("clean training set must be nonempty")
    cfg.validate()
    if pairing is not None:
        pairing.validate()
    augmented = list(augmented or [])
    rng = np.random.default_rng(cfg.seed)
    vocab = build_vocab(clean, cfg.min_count)
    space = LabelSpace([ex.annotation.intent for ex in clean],
                       [s.label for ex in clean for s in ex.annotation.slots])
    for ex in augmented:
        space.check(ex.annotation)
    model = TaggerModel(vocab, space, cfg, rng)
    state = T.OptimState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay,
                         algorithm=cfg.optimizer)
    params = model.params()

    clean_pairing_on = pairing is not None and pairing.lambda_sf > 0
    adv_pairing_on = pairing is not None and pairing.lambda_a > 0
    use_paraphrases = augmented and (augmented_task_loss or adv_pairing_on)

    aug_by_orig: dict = {}
    orphans = []
    if use_paraphrases:
        clean_ids = {ex.utterance.id for ex in clean}
        for ex in augmented:
            link = getattr(ex, "original_id", None)
            if link in clean_ids:
                aug_by_orig.setdefault(link, []).append(ex)
            else:
                orphans.append(ex)

    history = []
    best = (-1.0, None)
    dev_utts = [ex.utterance for ex in dev] if dev else []
    dev_golds = [ex.annotation for ex in dev] if dev else []
    pair_rng = np.random.default_rng(pairing.seed) if pairing is not None else None

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(clean))
        batches = [order[lo:lo + cfg.batch_size] for lo in range(0, len(clean), cfg.batch_size)]
        stats = EpochStats(epoch)
        for batch_no, chunk in enumerate(batches):
            batch_clean = [clean[i] for i in chunk]
            batch_aug = []
            para_links = []  # (clean offset in batch, [aug offsets in batch])
            if use_paraphrases:
                for ci, ex in enumerate(batch_clean):
                    linked = aug_by_orig.get(ex.utterance.id, [])
                    offsets = []
                    for aug in linked:
                        offsets.append(len(batch_clean) + len(batch_aug))
                        batch_aug.append(aug)
                    if offsets:
                        para_links.append((ci, offsets))
                for aug in orphans[batch_no::len(batches)]:
                    batch_aug.append(aug)
            loss, parts = build_batch_loss(model, batch_clean, batch_aug, para_links,
                                           pairing, pair_rng, augmented_task_loss,
                                           training=True, rng=rng)
            for name, value in parts.items():
                setattr(stats, name, getattr(stats, name) + value)
            stats.total_loss += loss.item()
            if not np.isfinite(loss.item()):
                raise T.TrainingError(f"non-finite loss at epoch {epoch} batch {batch_no}")

            T.zero_grads(params)
            loss.backward()
            T.clip_gradients(params, cfg.clip_norm)
            T.adam_update(params, state)

        n_batches = len(batches)
        for name in ("clean_loss", "augmented_loss", "clean_pair_loss",
                     "adv_pair_loss", "total_loss"):
            setattr(stats, name, getattr(stats, name) / n_batches)
        if dev_utts:
            preds = predict_batch(model, dev_utts)
            stats.dev_exact_match = exact_match(preds, dev_golds)
            # classic early stopping: ties keep the earliest best epoch
            if stats.dev_exact_match > best[0]:
                best = (stats.dev_exact_match, model.snapshot())
        history.append(stats)

    if best[1] is not None:
        model.restore(best[1])
    return model, history
