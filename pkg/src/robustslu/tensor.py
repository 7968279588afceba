"""Minimal reverse-mode autodiff over dense numpy arrays.

Covers exactly the operations the tagger and the sequence autoencoder
need: affine maps, (bi)LSTM encoding, softmax cross-entropy, MSE,
dropout, and an AdamW-style optimizer step. Training runs in float32;
grad_check temporarily promotes parameters to float64 so central
differences are meaningful at the stated tolerances.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """Shape mismatch between operands."""


class TrainingError(RuntimeError):
    """Non-finite values encountered during optimization."""


class CheckError(RuntimeError):
    """grad_check preconditions violated (e.g. non-deterministic loss)."""


class Tensor:
    """A dense array plus an optional gradient buffer.

    Intermediate tensors record their parents and a backward closure;
    calling .backward() on a scalar runs reverse-mode accumulation.
    """

    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, name=None, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise DimensionError(f"backward requires a scalar, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)


def tensor(data) -> Tensor:
    """A constant (no gradient) tensor."""
    return Tensor(data)


def parameter(data, name: str) -> Tensor:
    """A named leaf that receives gradients."""
    t = Tensor(np.array(data, copy=True), name=name, requires_grad=True)
    return t


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return Tensor(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * a.data.dtype.type(c)

    def backward(g):
        _accumulate(a, g * a.data.dtype.type(c))

    return Tensor(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(data, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = xW + b with exact gradients into x, W and b."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"affine shapes incompatible: x{x.data.shape} W{w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise DimensionError(f"affine bias shape {b.data.shape} does not match W{w.data.shape}")
    data = x.data @ w.data + b.data

    def backward(g):
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        _accumulate(b, g.sum(axis=0))

    return Tensor(data, (x, w, b), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return Tensor(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return Tensor(data, (a,), backward)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward(g):
        start = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accumulate(p, g[tuple(sl)])
            start += size

    return Tensor(data, tuple(parts), backward)


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + size)
    sl = tuple(sl)
    data = a.data[sl].copy()

    def backward(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.data)
        buf[sl] = g
        _accumulate(a, buf)

    return Tensor(data, (a,), backward)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Row lookup (embedding); backward scatter-adds into the table."""
    idx = np.asarray(idx, dtype=np.int64)
    data = table.data[idx]

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return Tensor(data, (table,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / a.data.dtype.type(1.0 - p)
    return mul(a, Tensor(keep))


def sum_(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return Tensor(data, (a,), backward)


def mean_(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.data.size)


def add_n(parts: list[Tensor]) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over components of squared differences."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = a.data.size
    data = np.asarray((diff * diff).sum() / n, dtype=a.data.dtype)

    def backward(g):
        coeff = g * 2.0 / n
        _accumulate(a, coeff * diff)
        _accumulate(b, -coeff * diff)

    return Tensor(data, (a, b), backward)


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], stable via max subtraction."""
    if logits.data.ndim != 1:
        raise DimensionError(f"expected 1-d logits, got shape {logits.data.shape}")
    k = logits.data.shape[0]
    if not 0 <= target < k:
        raise IndexError(f"target {target} out of range for {k} classes")
    x = logits.data
    m = x.max()
    ex = np.exp(x - m)
    z = ex.sum()
    probs = ex / z
    data = np.asarray(m + np.log(z) - x[target], dtype=x.dtype)

    def backward(g):
        grad = probs.copy()
        grad[target] -= 1.0
        _accumulate(logits, g * grad)

    return Tensor(data, (logits,), backward)


def softmax_cross_entropy_rows(logits: Tensor, targets, weights) -> Tensor:
    """Weighted sum of per-row cross-entropies over [N, k] logits."""
    if logits.data.ndim != 2:
        raise DimensionError(f"expected 2-d logits, got shape {logits.data.shape}")
    n, k = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=logits.data.dtype)
    if targets.shape != (n,) or weights.shape != (n,):
        raise DimensionError(
            f"targets/weights shapes {targets.shape}/{weights.shape} do not match {n} rows")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target out of range for {k} classes")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    ex = np.exp(x - m)
    z = ex.sum(axis=1, keepdims=True)
    probs = ex / z
    rows = np.arange(n)
    losses = (m[:, 0] + np.log(z[:, 0])) - x[rows, targets]
    data = np.asarray((losses * weights).sum(), dtype=x.dtype)

    def backward(g):
        grad = probs * weights[:, None]
        grad[rows, targets] -= weights
        _accumulate(logits, g * grad)

    return Tensor(data, (logits,), backward)


# ---------------------------------------------------------------------------
# LSTM encoder


@dataclass
class LSTMDirParams:
    wx: Tensor
    wh: Tensor
    b: Tensor

    def all(self):
        return [self.wx, self.wh, self.b]


@dataclass
class BiLSTMParams:
    """Per-layer forward/backward cell parameters."""

    layers: list[tuple[LSTMDirParams, LSTMDirParams]]
    hidden_size: int

    def all(self):
        out = []
        for fwd, bwd in self.layers:
            out.extend(fwd.all())
            out.extend(bwd.all())
        return out


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int, name: str) -> LSTMDirParams:
    def uniform(fan_in, fan_out, shape):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return (rng.uniform(-a, a, size=shape)).astype(np.float32)

    wx = parameter(uniform(d_in, 4 * hidden, (d_in, 4 * hidden)), f"{name}.wx")
    wh = parameter(uniform(hidden, 4 * hidden, (hidden, 4 * hidden)), f"{name}.wh")
    b = np.zeros(4 * hidden, dtype=np.float32)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias keeps early cell state alive
    return LSTMDirParams(wx, wh, parameter(b, f"{name}.b"))


def init_bilstm(rng: np.random.Generator, input_dim: int, hidden: int, layers: int,
                prefix: str = "bilstm") -> BiLSTMParams:
    out = []
    d_in = input_dim
    for layer in range(layers):
        fwd = init_lstm(rng, d_in, hidden, f"{prefix}.l{layer}.fwd")
        bwd = init_lstm(rng, d_in, hidden, f"{prefix}.l{layer}.bwd")
        out.append((fwd, bwd))
        d_in = 2 * hidden
    return BiLSTMParams(out, hidden)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LSTMDirParams, hidden: int):
    z = add(add(matmul(x, p.wx), matmul(h, p.wh)), p.b)
    i = sigmoid(narrow(z, 1, 0, hidden))
    f = sigmoid(narrow(z, 1, hidden, hidden))
    g = tanh(narrow(z, 1, 2 * hidden, hidden))
    o = sigmoid(narrow(z, 1, 3 * hidden, hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def _blend(old: Tensor, new: Tensor, mask_col: Tensor) -> Tensor:
    # masked timestep update: rows past a sequence's length keep their state
    return add(old, mul(mask_col, sub(new, old)))


def bilstm_encode_batch(xs: list[Tensor], mask: np.ndarray, params: BiLSTMParams,
                        dropout_p: float = 0.0, rng: np.random.Generator | None = None,
                        training: bool = False):
    """Encode a padded batch given as T tensors of shape [B, d_in].

    mask is a float [B, T] array with 1.0 at valid positions. Returns
    (per-timestep [B, 2H] outputs, [B, 2H] sentence features) where the
    sentence features concatenate the forward direction's last valid
    state and the backward direction's state after the first token.
    """
    if not xs:
        raise DimensionError("empty sequence")
    bsz, steps = mask.shape
    hidden = params.hidden_size
    dtype = xs[0].data.dtype
    mask_cols = [Tensor(mask[:, t:t + 1].astype(dtype)) for t in range(steps)]
    inputs = xs
    final_fwd = final_bwd = None
    outs = None
    for layer_idx, (fwd_p, bwd_p) in enumerate(params.layers):
        if layer_idx > 0 and dropout_p > 0.0:
            inputs = [dropout(x, dropout_p, rng, training) for x in inputs]
        zeros = Tensor(np.zeros((bsz, hidden), dtype=dtype))
        h, c = zeros, zeros
        fwd_states = []
        for t in range(steps):
            h_new, c_new = lstm_cell(inputs[t], h, c, fwd_p, hidden)
            h = _blend(h, h_new, mask_cols[t])
            c = _blend(c, c_new, mask_cols[t])
            fwd_states.append(h)
        final_fwd = h
        h, c = zeros, zeros
        bwd_states = [None] * steps
        for t in range(steps - 1, -1, -1):
            h_new, c_new = lstm_cell(inputs[t], h, c, bwd_p, hidden)
            h = _blend(h, h_new, mask_cols[t])
            c = _blend(c, c_new, mask_cols[t])
            bwd_states[t] = h
        final_bwd = h
        outs = [concat([fwd_states[t], bwd_states[t]], axis=1) for t in range(steps)]
        inputs = outs
    sent = concat([final_fwd, final_bwd], axis=1)
    return outs, sent


def bilstm_encode(emb: Tensor, params: BiLSTMParams, layers: int | None = None,
                  dropout_p: float = 0.0, rng: np.random.Generator | None = None,
                  training: bool = False) -> Tensor:
    """Single-sequence encoding: [T, d] -> [T, 2H]."""
    if emb.data.ndim != 2 or emb.data.shape[0] < 1:
        raise DimensionError(f"expected nonempty [T, d] input, got shape {emb.data.shape}")
    if layers is not None and layers != len(params.layers):
        raise DimensionError(f"params carry {len(params.layers)} layers, requested {layers}")
    steps = emb.data.shape[0]
    xs = [narrow(emb, 0, t, 1) for t in range(steps)]
    mask = np.ones((1, steps), dtype=np.float64)
    outs, _ = bilstm_encode_batch(xs, mask, params, dropout_p, rng, training)
    return concat(outs, axis=0)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class OptimState:
    """Adaptive-moment (decoupled weight decay) or plain SGD state."""

    learning_rate: float
    weight_decay: float = 0.0
    algorithm: str = "adamw"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def zero_grads(params: list[Tensor]):
    for p in params:
        p.grad = None


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm


def adam_update(params: list[Tensor], state: OptimState):
    """One optimizer step: p -= lr*(m_hat/(sqrt(v_hat)+eps)) + lr*wd*p."""
    state.step_count += 1
    t = state.step_count
    for idx, p in enumerate(params):
        key = p.name if p.name is not None else f"param{idx}"
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {key!r}")
        if state.algorithm == "sgd":
            p.data -= (state.learning_rate * g).astype(p.data.dtype)
        else:
            m = state.first_moment.setdefault(key, np.zeros_like(p.data))
            v = state.second_moment.setdefault(key, np.zeros_like(p.data))
            m += (1.0 - state.beta1) * (g - m)
            v += (1.0 - state.beta2) * (g * g - v)
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
        if state.weight_decay > 0.0:
            p.data -= (state.learning_rate * state.weight_decay) * p.data


# ---------------------------------------------------------------------------
# Verification oracle


def grad_check(f, params: list[Tensor], eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic scalar function of params (dropout off).
    Parameters are promoted to float64 for the duration so the numeric
    differences are not swamped by float32 rounding.
    """
    saved = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
    try:
        zero_grads(params)
        out = f()
        base = float(out.data)
        out.backward()
        analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
        if float(f().data) != base:
            raise CheckError("loss function is not deterministic; disable dropout/sampling")
        worst = 0.0
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f().data)
                flat[i] = orig - eps
                lo = float(f().data)
                flat[i] = orig
                num = (hi - lo) / (2.0 * eps)
                denom = max(abs(ana_flat[i]), abs(num), 1e-8)
                worst = max(worst, abs(ana_flat[i] - num) / denom)
        return worst
    finally:
        for p, old in zip(params, saved):
            p.data = old


# ---------------------------------------------------------------------------
# Checkpoint container


def save_checkpoint(path, arrays: dict, config: dict):
    """Write named float arrays plus their producing config to an .npz."""
    manifest = {name: list(a.shape) for name, a in arrays.items()}
    meta = {"version": CHECKPOINT_VERSION, "config": config, "shapes": manifest}
    payload = {name: np.asarray(a) for name, a in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Load a checkpoint, validating every array against the shape manifest."""
    with np.load(path) as npz:
        if "__meta__" not in npz:
            raise ValueError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for name, shape in meta["shapes"].items():
            if name not in npz:
                raise ValueError(f"{path}: missing array {name!r}")
            arr = npz[name]
            if list(arr.shape) != shape:
                raise DimensionError(
                    f"{path}: array {name!r} has shape {list(arr.shape)}, manifest says {shape}")
            arrays[name] = arr
        extra = set(npz.files) - set(meta["shapes"]) - {"__meta__"}
        if extra:
            raise ValueError(f"{path}: arrays not in manifest: {sorted(extra)}")
    return arrays, meta["config"]
