"""Decoder-only transformer recognizer with a unified vision-language mask.

The sequence fed to the decoder is ``[V_1 .. V_m, [SEP], L_1 .. L_k]``: ``m``
projected image patches, the delimiter, then language tokens. The prefix
``V_1 .. [SEP]`` has length ``v_n = m + 1``. Logits at position ``v_n - 1``
(the [SEP] slot) predict ``L_1``; the last language position predicts [EOS].

Everything is plain numpy with hand-written backward passes. Shapes below use
B = batch, N = sequence length, H = heads, D = model width.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import Vocab, pad_batch

MASK_KINDS = ("uvlm", "causal", "visual")
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class InvalidPrefix(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class SequenceTooLong(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------
# masks


def visual_mask(n: int) -> np.ndarray:
    """All-ones bidirectional mask."""
    if n < 1:
        raise InvalidPrefix(f"mask size must be >= 1, got {n}")
    return np.ones((n, n), dtype=bool)


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular mask: query i sees key j iff j <= i."""
    if n < 1:
        raise InvalidPrefix(f"mask size must be >= 1, got {n}")
    return np.tril(np.ones((n, n), dtype=bool))


def unified_mask(v_n: int, total: int) -> np.ndarray:
    """Prefix-LM mask over ``v_n`` bidirectional prefix tokens and a causal tail.

    Prefix queries (index < v_n) see exactly the prefix keys; tail queries see
    the prefix plus every tail key up to and including themselves.
    """
    if not 1 <= v_n <= total:
        raise InvalidPrefix(f"need 1 <= v_n <= total, got v_n={v_n}, total={total}")
    m = causal_mask(total)
    m[:v_n, :v_n] = True
    return m


def build_mask(kind: str, v_n: int, total: int) -> np.ndarray:
    if kind == "uvlm":
        return unified_mask(v_n, total)
    if kind == "causal":
        return causal_mask(total)
    if kind == "visual":
        return visual_mask(total)
    raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")


# --------------------------------------------------------------------------
# attention


def _softmax(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Row softmax; pass ``out=x`` to work in place."""
    out = np.subtract(x, x.max(axis=-1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def _mask_bias(mask: np.ndarray, dtype) -> np.ndarray:
    return np.where(mask, 0.0, -np.inf).astype(dtype)


def attention_weights(q, k, mask, d: int) -> np.ndarray:
    """softmax(q kᵀ / sqrt(d)) over unmasked keys; masked weights are exactly 0."""
    scores = (q @ np.swapaxes(k, -1, -2)) / math.sqrt(d)
    return _softmax(scores + _mask_bias(np.asarray(mask, dtype=bool), scores.dtype))


def masked_attention(q, k, v, mask, d: int | None = None) -> np.ndarray:
    """Scaled dot-product attention with a binary mask applied as a -inf bias.

    ``q``: (..., Nq, dk), ``k``: (..., Nk, dk), ``v``: (..., Nk, dv),
    ``mask``: broadcastable to (..., Nq, Nk). ``d`` defaults to ``dk``.
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    mask = np.asarray(mask, dtype=bool)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"q {q.shape}, k {k.shape}, v {v.shape} are inconsistent")
    if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
        raise ShapeMismatch(f"mask {mask.shape} does not match ({q.shape[-2]}, {k.shape[-2]})")
    return attention_weights(q, k, mask, d or q.shape[-1]) @ v


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    patch_dim: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_len: int = 320

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    # no key bias: it shifts every score in a row equally and softmax ignores it
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "patch.w": (cfg.patch_dim, d),
        "patch.b": (d,),
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "w1": (d, f), p + "b1": (f,),
            p + "w2": (f, d), p + "b2": (d,),
        })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "head.w": (d, cfg.vocab_size),
                   "head.b": (cfg.vocab_size,)})
    return shapes


@dataclass
class Params:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    def copy(self) -> "Params":
        return Params(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Params":
        return Params(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        elif name in ("tok_emb", "pos_emb"):
            t = rng.normal(0.0, 0.1, size=shape)
        else:
            t = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        tensors[name] = t.astype(dtype)
    return Params(cfg, tensors)


# --------------------------------------------------------------------------
# layer primitives (forward returns a cache consumed by the matching backward)


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _ln_bwd(dy, cache):
    xhat, rstd, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    gh = dy * g
    dx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                 - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _split(x, h):
    b, n, d = x.shape
    return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _sum0(x):
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def _matT(a, b):
    """Sum over all leading axes of aᵀ b for (..., i) x (..., j) -> (i, j)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


# --------------------------------------------------------------------------
# forward / backward


def _check_inputs(params: Params, patches, tokens):
    patches = np.asarray(patches, dtype=params.dtype)
    tokens = np.asarray(tokens, dtype=np.int64)
    single = patches.ndim == 2
    if single:
        patches, tokens = patches[None], tokens[None]
    if patches.shape[0] != tokens.shape[0]:
        raise ShapeMismatch("patches and tokens disagree on batch size")
    if patches.shape[-1] != params.config.patch_dim:
        raise ShapeMismatch(f"patch dim {patches.shape[-1]} != {params.config.patch_dim}")
    n = patches.shape[1] + tokens.shape[1]
    if n > params.config.max_len:
        raise SequenceTooLong(f"sequence length {n} exceeds max_len {params.config.max_len}")
    return patches, tokens, single


def _embed(params: Params, patches, tokens, start: int = 0):
    t = params.tensors
    parts = []
    if patches is not None and patches.shape[1]:
        parts.append(patches @ t["patch.w"] + t["patch.b"])
    if tokens is not None and tokens.shape[1]:
        parts.append(t["tok_emb"][tokens])
    x = np.concatenate(parts, axis=1)
    return x + t["pos_emb"][start:start + x.shape[1]]


def _forward_train(params: Params, patches, tokens, mask):
    cfg = params.config
    t = params.tensors
    x = _embed(params, patches, tokens)
    n = x.shape[1]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != (n, n):
        raise ShapeMismatch(f"mask {mask.shape} does not match sequence length {n}")
    bias = _mask_bias(mask, x.dtype)
    scale = 1.0 / math.sqrt(cfg.d_head)
    caches = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h, ln1 = _ln_fwd(x, t[p + "ln1.g"], t[p + "ln1.b"])
        q = _split(h @ t[p + "wq"] + t[p + "bq"], cfg.n_heads)
        k = _split(h @ t[p + "wk"], cfg.n_heads)
        v = _split(h @ t[p + "wv"] + t[p + "bv"], cfg.n_heads)
        a = q @ k.transpose(0, 1, 3, 2)
        a *= scale
        a += bias
        _softmax(a, out=a)
        o = _merge(a @ v)
        x = x + o @ t[p + "wo"] + t[p + "bo"]
        h2, ln2 = _ln_fwd(x, t[p + "ln2.g"], t[p + "ln2.b"])
        z = h2 @ t[p + "w1"] + t[p + "b1"]
        u, th = _gelu(z)
        x = x + u @ t[p + "w2"] + t[p + "b2"]
        caches.append((h, ln1, q, k, v, a, o, h2, ln2, z, u, th))
    hf, lnf = _ln_fwd(x, t["ln_f.g"], t["ln_f.b"])
    logits = hf @ t["head.w"] + t["head.b"]
    return logits, (caches, hf, lnf)


def forward(params: Params, patches, tokens, mask) -> np.ndarray:
    """Logits over the vocabulary at every sequence position.

    ``patches``: (m, P) or (B, m, P); ``tokens``: (L,) or (B, L) starting with
    [SEP]; ``mask``: (m+L, m+L) boolean. Returns (m+L, V) or (B, m+L, V).
    """
    patches, tokens, single = _check_inputs(params, patches, tokens)
    logits, _ = _forward_train(params, patches, tokens, mask)
    return logits[0] if single else logits


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _loss_weights(targets, v_n):
    targets = np.asarray(targets)
    w = targets >= 0
    w[..., :max(v_n - 1, 0)] = False
    return w


def lm_loss(logits, targets, v_n: int) -> float:
    """Mean next-token negative log-likelihood over language positions.

    ``targets[..., i]`` is the token position ``i`` must predict; negative
    entries (padding) are skipped, and so is every position before the
    [SEP] slot ``v_n - 1`` whatever its target.
    """
    logits = np.asarray(logits)
    w = _loss_weights(targets, v_n)
    count = w.sum()
    if count == 0:
        return 0.0
    lp = _log_softmax(logits)
    tgt = np.where(w, targets, 0)
    picked = np.take_along_axis(lp, tgt[..., None], axis=-1)[..., 0]
    return float(-(picked * w).sum() / count)


@dataclass
class Batch:
    """Teacher-forcing batch. ``tokens`` starts with [SEP]; ``targets`` spans
    the whole sequence with -1 where no prediction is scored."""

    patches: np.ndarray
    tokens: np.ndarray
    targets: np.ndarray

    @property
    def v_n(self) -> int:
        return self.patches.shape[1] + 1

    def __len__(self) -> int:
        return self.patches.shape[0]


def make_batch(patches: Sequence[np.ndarray], texts_ids: Sequence[Sequence[int]],
               vocab: Vocab) -> Batch:
    """Stack samples sharing a patch count; language is right-padded."""
    patches = np.stack([np.asarray(p) for p in patches])
    m = patches.shape[1]
    inputs = pad_batch([[vocab.sep_id] + list(ids) for ids in texts_ids], vocab.pad_id)
    outs = pad_batch([list(ids) + [vocab.eos_id] for ids in texts_ids], -1)
    targets = np.full((len(texts_ids), m + inputs.shape[1]), -1, dtype=np.int64)
    targets[:, m:] = outs
    return Batch(patches, inputs, targets)


def loss_and_grad(params: Params, batch: Batch, mask_kind: str = "uvlm"):
    """Loss and exact gradients (dict aligned with ``params.tensors``)."""
    cfg = params.config
    t = params.tensors
    patches, tokens, _ = _check_inputs(params, batch.patches, batch.tokens)
    m = patches.shape[1]
    n = m + tokens.shape[1]
    v_n = m + 1
    mask = build_mask(mask_kind, v_n, n)
    logits, (caches, hf, lnf) = _forward_train(params, patches, tokens, mask)

    w = _loss_weights(batch.targets, v_n)
    count = max(int(w.sum()), 1)
    lp = _log_softmax(logits)
    tgt = np.where(w, batch.targets, 0)
    loss = float(-(np.take_along_axis(lp, tgt[..., None], axis=-1)[..., 0] * w).sum() / count)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    grads = {k: np.zeros_like(v) for k, v in t.items()}
    dlogits = np.exp(lp)
    np.put_along_axis(dlogits, tgt[..., None],
                      np.take_along_axis(dlogits, tgt[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (w / count).astype(dlogits.dtype)[..., None]

    grads["head.w"] = _matT(hf, dlogits)
    grads["head.b"] = _sum0(dlogits)
    dx, grads["ln_f.g"], grads["ln_f.b"] = _ln_bwd(dlogits @ t["head.w"].T, lnf)

    scale = 1.0 / math.sqrt(cfg.d_head)
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        h, ln1, q, k, v, a, o, h2, ln2, z, u, th = caches[i]
        # feed-forward branch
        grads[p + "w2"] = _matT(u, dx)
        grads[p + "b2"] = _sum0(dx)
        dz = (dx @ t[p + "w2"].T) * _gelu_grad(z, th)
        grads[p + "w1"] = _matT(h2, dz)
        grads[p + "b1"] = _sum0(dz)
        dh2, grads[p + "ln2.g"], grads[p + "ln2.b"] = _ln_bwd(dz @ t[p + "w1"].T, ln2)
        dx = dx + dh2
        # attention branch
        grads[p + "wo"] = _matT(o, dx)
        grads[p + "bo"] = _sum0(dx)
        do = _split(dx @ t[p + "wo"].T, cfg.n_heads)
        ds = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds -= np.einsum("bhij,bhij->bhi", ds, a)[..., None]
        ds *= a
        ds *= scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dq, dk, dv = _merge(dq), _merge(dk), _merge(dv)
        dh = np.zeros_like(h)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            grads[p + "w" + name] = _matT(h, dproj)
            if name != "k":
                grads[p + "b" + name] = _sum0(dproj)
            dh += dproj @ t[p + "w" + name].T
        dh1, grads[p + "ln1.g"], grads[p + "ln1.b"] = _ln_bwd(dh, ln1)
        dx = dx + dh1

    grads["pos_emb"][:n] = dx.sum(axis=0)
    dvis, dtok = dx[:, :m], dx[:, m:]
    grads["patch.w"] = _matT(patches, dvis)
    grads["patch.b"] = _sum0(dvis)
    np.add.at(grads["tok_emb"], tokens.reshape(-1), dtok.reshape(-1, dtok.shape[-1]))
    return loss, grads


def backward(params: Params, batch: Batch, mask_kind: str = "uvlm") -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch, mask_kind)[1]


# --------------------------------------------------------------------------
# training


@dataclass
class OptimConfig:
    """AdamW hyperparameters and the mini-batch loop settings."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    batch_size: int = 16
    steps: int = 1000
    eval_every: int = 10
    stop_accuracy: float | None = None
    warmup_steps: int = 0
    schedule: str = "constant"

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``: linear warmup, then constant or cosine to 0."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        if self.schedule == "cosine":
            span = max(self.steps - self.warmup_steps, 1)
            frac = min((step - self.warmup_steps) / span, 1.0)
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))
        if self.schedule != "constant":
            raise ValueError(f"unknown schedule {self.schedule!r}")
        return self.lr


class AdamW:
    def __init__(self, params: Params, cfg: OptimConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: Params, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        if c.clip_norm:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > c.clip_norm:
                grads = {k: g * (c.clip_norm / norm) for k, g in grads.items()}
        lr = c.lr_at(self.t)
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, p in params.tensors.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            p -= (lr * (update + c.weight_decay * p)).astype(p.dtype)


@dataclass
class CurvePoint:
    step: int
    loss: float
    accuracy: float | None = None


@dataclass
class TrainResult:
    params: Params
    curve: list[CurvePoint] = field(default_factory=list)

    def steps_to(self, accuracy: float) -> int | None:
        for pt in self.curve:
            if pt.accuracy is not None and pt.accuracy >= accuracy:
                return pt.step
        return None


def _subset(batch: Batch, idx) -> Batch:
    tokens = batch.tokens[idx]
    width = int((tokens != 0).sum(axis=1).max())
    m = batch.patches.shape[1]
    return Batch(batch.patches[idx], tokens[:, :width], batch.targets[idx, :m + width])


def sequence_accuracy(params: Params, data: Batch, mask_kind: str = "uvlm",
                      chunk: int = 32) -> float:
    """Fraction of samples whose teacher-forced argmax reproduces every target.

    With greedy decoding this is exactly the exact-match rate: a sequence is
    decoded correctly iff each step's argmax equals the reference token.
    """
    correct = 0
    for start in range(0, len(data), chunk):
        sub = _subset(data, np.arange(start, min(start + chunk, len(data))))
        n = sub.patches.shape[1] + sub.tokens.shape[1]
        logits = forward(params, sub.patches, sub.tokens, build_mask(mask_kind, sub.v_n, n))
        ok = (logits.argmax(axis=-1) == sub.targets) | (sub.targets < 0)
        correct += int(ok.all(axis=1).sum())
    return correct / len(data)


def train(params: Params, data: Batch, optim: OptimConfig, seed: int = 0,
          mask_kind: str = "uvlm", callback=None) -> TrainResult:
    """Mini-batch AdamW on ``data``; the input ``params`` are not modified.

    Accuracy is evaluated on the full ``data`` every ``eval_every`` steps and at
    the last step; training stops early once ``stop_accuracy`` is reached.
    """
    params = params.copy()
    rng = np.random.default_rng(seed)
    opt = AdamW(params, optim)
    result = TrainResult(params)
    bs = min(optim.batch_size, len(data))
    for step in range(1, optim.steps + 1):
        idx = np.sort(rng.choice(len(data), size=bs, replace=False))
        loss, grads = loss_and_grad(params, _subset(data, idx), mask_kind)
        opt.step(params, grads)
        acc = None
        if step % optim.eval_every == 0 or step == optim.steps:
            acc = sequence_accuracy(params, data, mask_kind)
        pt = CurvePoint(step, loss, acc)
        result.curve.append(pt)
        if callback is not None:
            callback(pt)
        if acc is not None and optim.stop_accuracy is not None and acc >= optim.stop_accuracy:
            break
    return result


# --------------------------------------------------------------------------
# incremental decoding


class _KVCache:
    def __init__(self, n_layers: int):
        self.k: list[np.ndarray | None] = [None] * n_layers
        self.v: list[np.ndarray | None] = [None] * n_layers
        self.length = 0

    def select(self, idx) -> "_KVCache":
        out = _KVCache(len(self.k))
        out.k = [k[idx] for k in self.k]
        out.v = [v[idx] for v in self.v]
        out.length = self.length
        return out


def _forward_chunk(params: Params, x: np.ndarray, cache: _KVCache, mask_rows: np.ndarray):
    """Run new positions ``x`` (B, n, D) against cached keys; returns last-layer logits."""
    cfg = params.config
    t = params.tensors
    bias = _mask_bias(mask_rows, x.dtype)
    scale = 1.0 / math.sqrt(cfg.d_head)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h, _ = _ln_fwd(x, t[p + "ln1.g"], t[p + "ln1.b"])
        q = _split(h @ t[p + "wq"] + t[p + "bq"], cfg.n_heads)
        k = _split(h @ t[p + "wk"], cfg.n_heads)
        v = _split(h @ t[p + "wv"] + t[p + "bv"], cfg.n_heads)
        if cache.k[i] is not None:
            k = np.concatenate([cache.k[i], k], axis=2)
            v = np.concatenate([cache.v[i], v], axis=2)
        cache.k[i], cache.v[i] = k, v
        a = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale + bias)
        x = x + _merge(a @ v) @ t[p + "wo"] + t[p + "bo"]
        h2, _ = _ln_fwd(x, t[p + "ln2.g"], t[p + "ln2.b"])
        x = x + _gelu(h2 @ t[p + "w1"] + t[p + "b1"])[0] @ t[p + "w2"] + t[p + "b2"]
    cache.length += x.shape[1]
    hf, _ = _ln_fwd(x, t["ln_f.g"], t["ln_f.b"])
    return hf @ t["head.w"] + t["head.b"]


class IncrementalDecoder:
    """Token-by-token decoding with cached keys/values.

    Valid for masks whose earlier rows never see later columns (both the
    unified and the causal mask qualify), so cached states never go stale.
    """

    def __init__(self, params: Params, patches: np.ndarray, mask_kind: str = "uvlm",
                 max_new_tokens: int | None = None):
        self.params = params
        self.mask_kind = mask_kind
        patches = np.asarray(patches, dtype=params.dtype)
        self.m = patches.shape[0]
        room = params.config.max_len - self.m - 1
        self.max_new = room if max_new_tokens is None else min(max_new_tokens, room)
        if self.max_new < 0:
            raise SequenceTooLong("visual prefix alone exceeds max_len")
        self.v_n = self.m + 1
        self.mask = build_mask(mask_kind, self.v_n, self.v_n + self.max_new)
        x = _embed(params, patches[None], np.array([[Vocab.sep_id]]))
        self.cache = _KVCache(params.config.n_layers)
        logits = _forward_chunk(params, x, self.cache, self.mask[:self.v_n, :self.v_n])
        self.first_logits = logits[0, -1]

    def step(self, cache: _KVCache, tokens: np.ndarray) -> np.ndarray:
        """Feed one token per beam; returns (beams, V) logits for the next position."""
        pos = cache.length
        x = self.params.tensors["tok_emb"][tokens][:, None, :] + self.params.tensors["pos_emb"][pos]
        logits = _forward_chunk(self.params, x, cache, self.mask[pos:pos + 1, :pos + 1])
        return logits[:, -1]


@dataclass
class DecodeConfig:
    beam_width: int = 4
    max_new_tokens: int = 63
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass
class DecodeResult:
    text: str
    ids: list[int]
    log_prob: float
    score: float


def _normalized(log_prob: float, length: int, alpha: float) -> float:
    return log_prob / (max(length, 1) ** alpha) if alpha else log_prob


def greedy_decode(params: Params, patches, vocab: Vocab, max_new_tokens: int = 63,
                  mask_kind: str = "uvlm", use_cache: bool = True) -> DecodeResult:
    """Argmax decoding; ``use_cache=False`` re-runs the full sequence every step."""
    patches = np.asarray(patches, dtype=params.dtype)
    m = patches.shape[0]
    if use_cache:
        dec = IncrementalDecoder(params, patches, mask_kind, max_new_tokens)
        logits, limit = dec.first_logits, dec.max_new
    else:
        limit = min(max_new_tokens, params.config.max_len - m - 1)
    ids: list[int] = []
    total = 0.0
    while True:
        if not use_cache:
            toks = np.array([vocab.sep_id] + ids)
            logits = forward(params, patches, toks, build_mask(mask_kind, m + 1, m + len(toks)))[-1]
        if len(ids) == limit:
            break
        lp = _log_softmax(np.asarray(logits, dtype=np.float64))
        nxt = int(lp.argmax())
        total += float(lp[nxt])
        if nxt == vocab.eos_id:
            break
        ids.append(nxt)
        if use_cache:
            logits = dec.step(dec.cache, np.array([nxt]))[0]
    return DecodeResult(vocab.decode(ids), ids, total, total)


def decode(params: Params, patches, vocab: Vocab, cfg: DecodeConfig | None = None,
           mask_kind: str = "uvlm") -> DecodeResult:
    """Beam search after [SEP]; beams end at [EOS] or after ``max_new_tokens``.

    At each step the ``beam_width`` best (beam, token) extensions survive;
    extensions ending in [EOS] move to the finished pool. The result is the
    finished hypothesis with the best length-normalized log-probability
    (``log_prob / len ** length_penalty``, [EOS] counted in ``len``).
    """
    cfg = cfg or DecodeConfig()
    dec = IncrementalDecoder(params, patches, mask_kind, cfg.max_new_tokens)
    k = cfg.beam_width
    eos = vocab.eos_id

    seqs: list[list[int]] = [[]]
    scores = np.zeros(1)
    cache = dec.cache
    logits = dec.first_logits[None]
    finished: list[tuple[float, float, list[int]]] = []
    for step in range(dec.max_new + 1):
        lp = _log_softmax(logits.astype(np.float64))
        if step == dec.max_new:
            # out of room: only [EOS] may follow; unfinished beams end here
            for s, seq in zip(scores, seqs):
                finished.append((_normalized(s, len(seq), cfg.length_penalty), s, seq))
            break
        cand = (scores[:, None] + lp).ravel()
        order = np.argsort(-cand, kind="stable")[:k]
        keep_rows, keep_tok, keep_scores = [], [], []
        for flat in order:
            row, tok = divmod(int(flat), lp.shape[1])
            s = float(cand[flat])
            if tok == eos:
                seq = seqs[row]
                finished.append((_normalized(s, len(seq) + 1, cfg.length_penalty), s, seq))
            else:
                keep_rows.append(row)
                keep_tok.append(tok)
                keep_scores.append(s)
        if not keep_rows:
            break
        seqs = [seqs[r] + [t] for r, t in zip(keep_rows, keep_tok)]
        scores = np.array(keep_scores)
        cache = cache.select(np.array(keep_rows))
        logits = dec.step(cache, np.array(keep_tok))
    best = max(finished, key=lambda f: f[0])
    return DecodeResult(vocab.decode(best[2]), best[2], best[1], best[0])


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = b"BSPTCKPT"


def save_checkpoint(path, params: Params, vocab: Vocab, extra: dict | None = None) -> None:
    """One file: magic, u64 manifest length, JSON manifest, little-endian payload."""
    tensors = []
    payload = bytearray()
    dtype = np.dtype(params.dtype).newbyteorder("<")
    for name, arr in params.tensors.items():
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str,
                        "offset": len(payload), "nbytes": len(raw)})
        payload += raw
    manifest = {"format": 1, "config": asdict(params.config), "vocab": vocab.symbols,
                "tensors": tensors, "extra": extra or {}}
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<Q", len(header)) + header + bytes(payload))


def load_checkpoint(path) -> tuple[Params, Vocab, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16:16 + hlen].decode("utf-8"))
        cfg = ModelConfig(**manifest["config"])
        vocab = Vocab(manifest["vocab"][3:])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad manifest ({exc})") from None
    payload = blob[16 + hlen:]
    expected = param_shapes(cfg)
    try:
        tensors = _read_tensors(path, manifest["tensors"], payload, expected)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: bad tensor table ({exc})") from None
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"{path}: vocab size {len(vocab)} != {cfg.vocab_size}")
    return Params(cfg, {n: tensors[n] for n in expected}), vocab, manifest.get("extra", {})


def _read_tensors(path, table, payload: bytes, expected) -> dict[str, np.ndarray]:
    tensors = {}
    for entry in table:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {shape}, "
                                  f"expected {expected.get(name)}")
        off, nb = entry["offset"], entry["nbytes"]
        if off + nb > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {name}")
        arr = np.frombuffer(payload[off:off + nb], dtype=np.dtype(entry["dtype"]))
        if arr.size != math.prod(shape):
            raise CheckpointError(f"{path}: tensor {name} size mismatch")
        tensors[name] = arr.reshape(shape).astype(np.dtype(entry["dtype"]).newbyteorder("="))
    return tensors


def iter_tensor_names(cfg: ModelConfig) -> Iterable[str]:
    return iter(param_shapes(cfg))
