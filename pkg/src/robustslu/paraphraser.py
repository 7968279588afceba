"""Paraphrase beam generation.

Three sources produce ParaphraseSets under the same invariants (at most
k beams, never the lowercased original, lowercase-unique, order
preserved): an external back-translation adapter spoken to over a
line-delimited JSON child-process protocol, an in-repo noisy sequence
autoencoder decoded with beam search, and a deterministic rule-based
rewriter for hermetic tests.
"""

from __future__ import annotations

import json
import subprocess
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import Utterance, Vocab, normalize
from .rules import rule_variants
from .tensor import Tensor


@dataclass
class Beam:
    text: str
    score: float
    truncated: bool = False

    def to_json(self):
        return {"text": self.text, "score": self.score, "truncated": self.truncated}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["text"], float(obj["score"]), bool(obj.get("truncated", False)))


@dataclass
class ParaphraseSet:
    original_id: str
    source: str
    beams: list[Beam] = field(default_factory=list)

    def texts(self):
        return [b.text for b in self.beams]

    def to_json(self):
        return {"original_id": self.original_id, "source": self.source,
                "beams": [b.to_json() for b in self.beams]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["original_id"], obj["source"],
                   [Beam.from_json(b) for b in obj["beams"]])


def dedupe(beams: list[Beam], reference: set[str]) -> list[Beam]:
    """Drop beams whose lowercased form is in reference or already emitted."""
    seen = set(reference)
    out = []
    for beam in beams:
        key = normalize(beam.text)
        if key in seen:
            continue
        seen.add(key)
        out.append(beam)
    return out


def make_paraphrase_set(original_id: str, original_text: str, source: str,
                        beams: list[Beam], k: int) -> ParaphraseSet:
    """Apply the cap-then-dedupe rule and return an invariant-satisfying set."""
    capped = beams[:k]
    return ParaphraseSet(original_id, source, dedupe(capped, {normalize(original_text)}))


# ---------------------------------------------------------------------------
# Back-translation adapter protocol


@dataclass
class AdapterRequest:
    id: str
    text: str
    k: int

    def to_json(self):
        return {"id": self.id, "text": self.text, "k": self.k}


@dataclass
class AdapterResponse:
    id: str
    beams: list[str]


@dataclass
class AdapterFailure:
    id: str
    error: str

    def to_json(self):
        return {"id": self.id, "error": self.error}


class SubprocessAdapter:
    """Runs a child process speaking line-delimited JSON on stdin/stdout.

    One request object per line in, one response object per line out,
    matched by id. A nonzero exit, timeout, or malformed/missing lines
    surface as per-utterance failures rather than aborting the batch.
    """

    def __init__(self, command: list[str], name: str = "adapter", timeout: float = 120.0):
        self.command = list(command)
        self.name = name
        self.timeout = timeout

    def run(self, requests: list[AdapterRequest]) -> dict:
        payload = "".join(json.dumps(r.to_json()) + "\n" for r in requests)
        results: dict = {}
        try:
            proc = subprocess.run(self.command, input=payload, text=True,
                                  capture_output=True, timeout=self.timeout)
        except subprocess.TimeoutExpired:
            return {r.id: AdapterFailure(r.id, f"adapter timed out after {self.timeout}s")
                    for r in requests}
        except OSError as exc:
            return {r.id: AdapterFailure(r.id, f"adapter failed to start: {exc}")
                    for r in requests}
        for line in proc.stdout.splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                beams = obj["beams"]
                if not isinstance(beams, list) or not all(isinstance(b, str) for b in beams):
                    raise ValueError("beams must be a list of strings")
            except (ValueError, KeyError, TypeError):
                continue  # malformed line: the affected request times out below
            results[rid] = AdapterResponse(rid, beams)
        for r in requests:
            if not isinstance(results.get(r.id), AdapterResponse):
                reason = "no response from adapter"
                if proc.returncode != 0:
                    reason += f" (exit code {proc.returncode})"
                results[r.id] = AdapterFailure(r.id, reason)
        return results


class CacheAdapter:
    """Replays ParaphraseSets recorded in a cache file, keyed by utterance id."""

    def __init__(self, sets, name: str = "cache"):
        self.name = name
        self._by_id = {s.original_id: s for s in sets}

    def run(self, requests: list[AdapterRequest]) -> dict:
        out = {}
        for r in requests:
            pset = self._by_id.get(r.id)
            if pset is None:
                out[r.id] = AdapterFailure(r.id, "not present in cache")
            else:
                out[r.id] = AdapterResponse(r.id, [b.text for b in pset.beams[:r.k]])
        return out


def backtranslate(utterances, adapter, k: int):
    """Paraphrase a batch through an adapter; failures isolated per utterance.

    Returns (sets, failures): one ParaphraseSet per answered utterance
    (capped to the first k adapter beams, then deduped against the
    original), failure records for the rest.
    """
    requests = [AdapterRequest(u.id, u.text, k) for u in utterances]
    results = adapter.run(requests)
    sets, failures = [], []
    for utt in utterances:
        res = results.get(utt.id)
        if isinstance(res, AdapterResponse):
            beams = [Beam(text, -float(rank)) for rank, text in enumerate(res.beams)]
            sets.append(make_paraphrase_set(utt.id, utt.text, adapter.name, beams, k))
        else:
            failures.append(res if isinstance(res, AdapterFailure)
                            else AdapterFailure(utt.id, "no response from adapter"))
    return sets, failures


def write_paraphrase_cache(path, sets, mode: str = "w"):
    with open(path, mode, encoding="utf-8") as fh:
        for s in sets:
            fh.write(json.dumps(s.to_json()) + "\n")


def read_paraphrase_cache(path) -> list[ParaphraseSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ParaphraseSet.from_json(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Rule-based paraphraser (hermetic MT stand-in)


def rule_paraphrase(utterance: Utterance, rules, seed: int, k: int) -> ParaphraseSet:
    """Up to k distinct single-rule rewrites, deterministic given seed."""
    if not rules:
        raise ValueError("rule_paraphrase needs at least one rule")
    variants = rule_variants(rules, list(utterance.tokens), ())
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(variants)) if variants else []
    beams = [Beam(" ".join(variants[i][2]), 0.0) for i in order]
    pset = make_paraphrase_set(utterance.id, utterance.text, "rulebased", beams, k)
    for rank, beam in enumerate(pset.beams):
        beam.score = -float(rank)
    return pset


# ---------------------------------------------------------------------------
# Noisy sequence autoencoder


@dataclass
class AutoencoderConfig:
    hidden_size: int = 64
    embedding_dim: int = 32
    max_decode_len: int = 0      # 0 means 2 * input length + 5
    noise_sigma: float = 0.3
    beam_width: int = 5
    epochs: int = 30
    learning_rate: float = 0.01
    batch_size: int = 16
    seed: int = 0
    min_count: int = 1

    def validate(self):
        if min(self.hidden_size, self.embedding_dim, self.beam_width, self.epochs,
               self.batch_size) < 1:
            raise ValueError("autoencoder sizes must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_json(self):
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


class Seq2SeqModel:
    """Encoder-decoder LSTM without attention, shared embedding table."""

    def __init__(self, vocab: Vocab, config: AutoencoderConfig, rng: np.random.Generator):
        self.vocab = vocab
        self.config = config
        e, h = config.embedding_dim, config.hidden_size
        self.embedding = T.parameter(
            rng.uniform(-0.1, 0.1, size=(len(vocab), e)).astype(np.float32), "embedding")
        self.enc = T.init_lstm(rng, e, h, "enc")
        self.dec = T.init_lstm(rng, e, h, "dec")
        a = np.sqrt(6.0 / (h + len(vocab)))
        self.out_w = T.parameter(rng.uniform(-a, a, size=(h, len(vocab))).astype(np.float32),
                                 "out.w")
        self.out_b = T.parameter(np.zeros(len(vocab), dtype=np.float32), "out.b")

    def params(self):
        return [self.embedding] + self.enc.all() + self.dec.all() + [self.out_w, self.out_b]

    def snapshot(self):
        return {p.name: p.data.copy() for p in self.params()}

    def restore(self, arrays):
        for p in self.params():
            p.data = arrays[p.name].copy()

    def save(self, path):
        meta = {"autoencoder_config": self.config.to_json(), "vocab": self.vocab.to_json()}
        T.save_checkpoint(path, self.snapshot(), meta)

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        arrays, meta = T.load_checkpoint(path)
        config = AutoencoderConfig.from_json(meta["autoencoder_config"])
        model = cls(Vocab.from_json(meta["vocab"]), config, np.random.default_rng(config.seed))
        model.restore(arrays)
        return model

    # --- numpy-only cell math for decoding (no gradients needed) ---

    def _np_step(self, params, x_vec, h, c):
        hidden = self.config.hidden_size
        z = x_vec @ params.wx.data + h @ params.wh.data + params.b.data
        i = _np_sigmoid(z[:hidden])
        f = _np_sigmoid(z[hidden:2 * hidden])
        g = np.tanh(z[2 * hidden:3 * hidden])
        o = _np_sigmoid(z[3 * hidden:])
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new

    def encode_np(self, token_ids):
        h = np.zeros(self.config.hidden_size, dtype=np.float32)
        c = np.zeros_like(h)
        emb = self.embedding.data
        for tid in token_ids:
            h, c = self._np_step(self.enc, emb[tid], h, c)
        return h, c

    def decode_logits_np(self, h):
        return h @ self.out_w.data + self.out_b.data


def _np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def train_autoencoder(utterances, cfg: AutoencoderConfig):
    """Teacher-forced reconstruction training; returns (model, loss history)."""
    if not utterances:
        raise ValueError("autoencoder corpus must be nonempty")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    counts = Counter(tok for utt in utterances for tok in utt.tokens)
    kept = sorted((t for t, c in counts.items() if c >= cfg.min_count),
                  key=lambda t: (-counts[t], t))
    vocab = Vocab(kept)
    model = Seq2SeqModel(vocab, cfg, rng)
    state = T.OptimState(learning_rate=cfg.learning_rate)
    params = model.params()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(utterances))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [utterances[i] for i in order[lo:lo + cfg.batch_size]]
            loss = _reconstruction_loss(model, chunk)
            value = loss.item()
            if not np.isfinite(value):
                raise T.TrainingError(f"autoencoder diverged at epoch {epoch}")
            epoch_loss += value
            n_batches += 1
            T.zero_grads(params)
            loss.backward()
            T.clip_gradients(params, 5.0)
            T.adam_update(params, state)
        history.append({"epoch": epoch, "loss": epoch_loss / n_batches})
    return model, history


def _reconstruction_loss(model: Seq2SeqModel, utterances) -> Tensor:
    cfg = model.config
    vocab = model.vocab
    n = len(utterances)
    enc_ids = [vocab.encode(u.tokens) for u in utterances]
    dec_in = [[vocab.bos] + ids for ids in enc_ids]
    dec_tgt = [ids + [vocab.eos] for ids in enc_ids]
    tmax_enc = max(len(x) for x in enc_ids)
    tmax_dec = max(len(x) for x in dec_in)
    hidden = cfg.hidden_size
    dtype = model.embedding.data.dtype

    enc_pad = np.zeros((n, tmax_enc), dtype=np.int64)
    enc_mask = np.zeros((n, tmax_enc))
    for i, ids in enumerate(enc_ids):
        enc_pad[i, :len(ids)] = ids
        enc_mask[i, :len(ids)] = 1.0
    h = Tensor(np.zeros((n, hidden), dtype=dtype))
    c = Tensor(np.zeros((n, hidden), dtype=dtype))
    for t in range(tmax_enc):
        x = T.gather_rows(model.embedding, enc_pad[:, t])
        h_new, c_new = T.lstm_cell(x, h, c, model.enc, hidden)
        m = Tensor(enc_mask[:, t:t + 1].astype(dtype))
        h = T.add(h, T.mul(m, T.sub(h_new, h)))
        c = T.add(c, T.mul(m, T.sub(c_new, c)))

    dec_pad = np.zeros((n, tmax_dec), dtype=np.int64)
    tgt_pad = np.zeros((n, tmax_dec), dtype=np.int64)
    dec_mask = np.zeros((n, tmax_dec))
    for i, (ids, tgt) in enumerate(zip(dec_in, dec_tgt)):
        dec_pad[i, :len(ids)] = ids
        tgt_pad[i, :len(tgt)] = tgt
        dec_mask[i, :len(ids)] = 1.0
    states = []
    for t in range(tmax_dec):
        x = T.gather_rows(model.embedding, dec_pad[:, t])
        h_new, c_new = T.lstm_cell(x, h, c, model.dec, hidden)
        m = Tensor(dec_mask[:, t:t + 1].astype(dtype))
        h = T.add(h, T.mul(m, T.sub(h_new, h)))
        c = T.add(c, T.mul(m, T.sub(c_new, c)))
        states.append(h)
    logits = T.affine(T.concat(states, axis=0), model.out_w, model.out_b)
    targets = np.zeros(n * tmax_dec, dtype=np.int64)
    weights = np.zeros(n * tmax_dec, dtype=np.float64)
    for i, tgt in enumerate(dec_tgt):
        for t, tid in enumerate(tgt):
            targets[t * n + i] = tid
            weights[t * n + i] = 1.0 / (len(tgt) * n)
    return T.softmax_cross_entropy_rows(logits, targets, weights)


@dataclass
class _Hypothesis:
    tokens: list
    logp: float
    h: np.ndarray
    c: np.ndarray
    prev: int            # token id to feed next step
    done: bool = False
    truncated: bool = False

    def score(self):
        return self.logp / max(1, len(self.tokens))


def _log_softmax(x):
    m = x.max()
    z = np.log(np.exp(x - m).sum())
    return x - m - z


def beam_decode(model: Seq2SeqModel, h0, c0, k: int, max_len: int) -> list[_Hypothesis]:
    """Width-k beam search from a decoder initial state.

    Hypotheses finish on <eos>; ranking is by length-normalized log
    probability. Unfinished hypotheses at max_len are kept, truncated
    and flagged, only if fewer than k finished.
    """
    vocab = model.vocab
    emb = model.embedding.data
    live = [_Hypothesis([], 0.0, h0.copy(), c0.copy(), vocab.bos)]
    finished = []
    for _ in range(max_len):
        candidates = []
        for hyp in live:
            h, c = model._np_step(model.dec, emb[hyp.prev], hyp.h, hyp.c)
            logp = _log_softmax(model.decode_logits_np(h))
            top = np.argsort(-logp, kind="stable")[:k]
            for tid in top:
                candidates.append((hyp.logp + float(logp[tid]), int(tid), hyp, h, c))
        candidates.sort(key=lambda t: (-t[0], t[1]))
        live = []
        for logp, tid, parent, h, c in candidates:
            if len(live) >= k:
                break
            if tid == vocab.eos:
                finished.append(_Hypothesis(parent.tokens, logp, h, c, tid, done=True))
            else:
                live.append(_Hypothesis(parent.tokens + [tid], logp, h, c, tid))
        if not live or len(finished) >= k:
            break
    if len(finished) < k:
        for hyp in live:
            hyp.truncated = True
            finished.append(hyp)
    finished.sort(key=lambda hyp: -hyp.score())
    return finished[:k]


def greedy_decode(model: Seq2SeqModel, tokens, sigma: float = 0.0,
                  rng: np.random.Generator | None = None) -> list[str]:
    """Stepwise argmax decode; the reference point for beam width 1."""
    h, c = model.encode_np(model.vocab.encode(tokens))
    if sigma > 0:
        h = h + sigma * rng.standard_normal(h.shape).astype(h.dtype)
        c = c + sigma * rng.standard_normal(c.shape).astype(c.dtype)
    out = []
    max_len = model.config.max_decode_len or (2 * len(tokens) + 5)
    tok = model.vocab.bos
    for _ in range(max_len):
        h, c = model._np_step(model.dec, model.embedding.data[tok], h, c)
        tok = int(np.argmax(model.decode_logits_np(h)))
        if tok == model.vocab.eos:
            break
        out.append(tok)
    return model.vocab.decode(out)


def perturb_decode(model: Seq2SeqModel, utterance: Utterance, sigma: float, k: int,
                   seed: int = 0) -> ParaphraseSet:
    """Gaussian-perturb the encoder's final hidden and cell state, then beam search."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    h, c = model.encode_np(model.vocab.encode(utterance.tokens))
    if sigma > 0:
        h = h + sigma * rng.standard_normal(h.shape).astype(h.dtype)
        c = c + sigma * rng.standard_normal(c.shape).astype(c.dtype)
    max_len = model.config.max_decode_len or (2 * len(utterance.tokens) + 5)
    hyps = beam_decode(model, h, c, k, max_len)
    beams = [Beam(" ".join(model.vocab.decode(hyp.tokens)), hyp.score(), hyp.truncated)
             for hyp in hyps]
    return make_paraphrase_set(utterance.id, utterance.text, "seq2seq", beams, k)
