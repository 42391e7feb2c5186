"""Decoder-only transformer whose per-block feedforward sublayer is configurable.

FFN variants by linear-layer count:

* 3 -- linear(d, 4d), gelu, linear(4d, 4d), gelu, linear(4d, d), dropout
* 2 -- linear(d, m*d), gelu, linear(m*d, d), dropout (the standard block)
* 1 -- linear(d, d), dropout, gelu
* 0 -- dropout, gelu

Blocks are pre-norm: ``y = x + MHA(LN1(x))``, ``out = y + FFN(LN2(y))``.
"""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from ffnlab import autograd as ag
from ffnlab.autograd import Tensor
from ffnlab.rng import stream

LN_EPS = 1e-5
EMBED_STD = 0.02


@dataclass(frozen=True)
class FfnVariant:
    layer_count: int
    width_multiple: int = 4

    def __post_init__(self):
        if self.layer_count not in (0, 1, 2, 3):
            raise ValueError(f"layer_count must be 0..3, got {self.layer_count}")
        if self.width_multiple < 1:
            raise ValueError(f"width_multiple must be >= 1, got {self.width_multiple}")
        if self.layer_count != 2 and self.width_multiple != 4:
            raise ValueError("only two-layer FFNs take a width multiple other than 4")

    def layer_shapes(self, d: int) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of each linear layer in order."""
        if self.layer_count == 3:
            return [(d, 4 * d), (4 * d, 4 * d), (4 * d, d)]
        if self.layer_count == 2:
            h = self.width_multiple * d
            return [(d, h), (h, d)]
        if self.layer_count == 1:
            return [(d, d)]
        return []

    @property
    def label(self) -> str:
        if self.layer_count == 2 and self.width_multiple != 4:
            return f"2L{self.width_multiple}d"
        return f"{self.layer_count}L"


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int
    d_model: int
    variant: FfnVariant = field(default_factory=lambda: FfnVariant(2))
    n_heads: int = 16
    vocab_size: int = 10000
    seq_len: int = 256
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ValueError(f"n_blocks must be >= 0, got {self.n_blocks}")
        if self.d_model < 1 or self.n_heads < 1:
            raise ValueError("d_model and n_heads must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Every parameter tensor as ``(name, shape, init)`` in canonical order.

    ``init`` is one of ``xavier``, ``normal``, ``zeros``, ``ones``. This is the
    single source of truth for what ``init_model`` allocates.
    """
    d, v, L = config.d_model, config.vocab_size, config.seq_len
    out: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (v, d), "normal"),
        ("pos_emb", (L, d), "normal"),
    ]
    for i in range(config.n_blocks):
        p = f"blocks.{i}"
        out += [(f"{p}.ln1.gain", (d,), "ones"), (f"{p}.ln1.bias", (d,), "zeros")]
        for w in ("q", "k", "v", "o"):
            out += [(f"{p}.attn.w{w}", (d, d), "xavier"), (f"{p}.attn.b{w}", (d,), "zeros")]
        out += [(f"{p}.ln2.gain", (d,), "ones"), (f"{p}.ln2.bias", (d,), "zeros")]
        for j, (fi, fo) in enumerate(config.variant.layer_shapes(d)):
            out += [(f"{p}.ffn.{j}.w", (fi, fo), "xavier"), (f"{p}.ffn.{j}.b", (fo,), "zeros")]
    out += [
        ("ln_f.gain", (d,), "ones"),
        ("ln_f.bias", (d,), "zeros"),
        ("head.w", (d, v), "xavier"),
        ("head.b", (v,), "zeros"),
    ]
    return out


@dataclass
class BlockWeights:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn: list[tuple[Tensor, Tensor]]


@dataclass
class ModelWeights:
    """All parameters of one model. Embedding and output head are separate storage."""

    config: ModelConfig
    params: dict[str, Tensor]
    blocks: list[BlockWeights] = field(init=False)

    def __post_init__(self):
        p = self.params
        self.blocks = []
        for i in range(self.config.n_blocks):
            b = f"blocks.{i}"
            n_ffn = len(self.config.variant.layer_shapes(self.config.d_model))
            self.blocks.append(BlockWeights(
                p[f"{b}.ln1.gain"], p[f"{b}.ln1.bias"],
                p[f"{b}.attn.wq"], p[f"{b}.attn.bq"],
                p[f"{b}.attn.wk"], p[f"{b}.attn.bk"],
                p[f"{b}.attn.wv"], p[f"{b}.attn.bv"],
                p[f"{b}.attn.wo"], p[f"{b}.attn.bo"],
                p[f"{b}.ln2.gain"], p[f"{b}.ln2.bias"],
                [(p[f"{b}.ffn.{j}.w"], p[f"{b}.ffn.{j}.b"]) for j in range(n_ffn)],
            ))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray],
                    requires_grad: bool = True) -> ModelWeights:
        params = {}
        for name, shape, _ in parameter_layout(config):
            arr = arrays[name]
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            params[name] = Tensor(arr, requires_grad=requires_grad, dtype=arr.dtype)
        return cls(config, params)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> ModelWeights:
    """Xavier-uniform matrices, N(0, 0.02^2) embeddings, zero biases, unit gains."""
    rng = stream(seed, "init")
    arrays = {}
    for name, shape, kind in parameter_layout(config):
        if kind == "xavier":
            a = xavier_bound(*shape)
            arr = rng.uniform(-a, a, size=shape).astype(dtype)
            np.clip(arr, -dtype(a), dtype(a), out=arr)
        elif kind == "normal":
            arr = rng.normal(0.0, EMBED_STD, size=shape).astype(dtype)
        elif kind == "ones":
            arr = np.ones(shape, dtype=dtype)
        else:
            arr = np.zeros(shape, dtype=dtype)
        arrays[name] = arr
    return ModelWeights.from_arrays(config, arrays)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


def ffn_forward(variant: FfnVariant, x: Tensor, layers: list[tuple[Tensor, Tensor]],
                train: bool, dropout_p: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
    """Feedforward sublayer (without residual) for one of the four variants."""
    d = x.shape[-1]
    expected = variant.layer_shapes(d)
    if [tuple(w.shape) for w, _ in layers] != expected:
        raise ValueError(f"FFN weights {[w.shape for w, _ in layers]} do not match {expected}")
    n = variant.layer_count
    if n >= 2:
        h = x
        for i, (w, b) in enumerate(layers):
            h = linear(h, w, b)
            if i < n - 1:
                h = ag.gelu(h)
        return ag.dropout(h, dropout_p, train, rng)
    if n == 1:
        x = linear(x, *layers[0])
    return ag.gelu(ag.dropout(x, dropout_p, train, rng))


def attention(x: Tensor, bw: BlockWeights, n_heads: int) -> Tensor:
    """Causal multi-head scaled dot-product attention with output projection."""
    b, t, d = x.shape
    dh = d // n_heads

    def heads(w, bias):
        return ag.transpose(ag.reshape(linear(x, w, bias), (b, t, n_heads, dh)), (0, 2, 1, 3))

    q = heads(bw.wq, bw.bq)
    k = heads(bw.wk, bw.bk)
    v = heads(bw.wv, bw.bv)
    scores = ag.scale(ag.matmul(q, ag.swap_last(k)), 1.0 / math.sqrt(dh))
    probs = ag.softmax_rows(ag.causal_mask(scores))
    ctx = ag.matmul(probs, v)
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return linear(ctx, bw.wo, bw.bo)


def block_forward(x: Tensor, bw: BlockWeights, config: ModelConfig, train: bool,
                  rng: np.random.Generator | None = None) -> Tensor:
    """One pre-norm block on ``x`` of shape (T, d) or (B, T, d)."""
    squeeze = x.data.ndim == 2
    if squeeze:
        x = ag.reshape(x, (1, *x.shape))
    if x.shape[-1] != config.d_model:
        raise ValueError(f"input width {x.shape[-1]} != d_model {config.d_model}")
    if x.shape[1] > config.seq_len:
        raise ValueError(f"sequence length {x.shape[1]} exceeds seq_len {config.seq_len}")
    y = ag.add(x, attention(ag.layer_norm(x, bw.ln1_gain, bw.ln1_bias, LN_EPS), bw, config.n_heads))
    h = ag.layer_norm(y, bw.ln2_gain, bw.ln2_bias, LN_EPS)
    out = ag.add(y, ffn_forward(config.variant, h, bw.ffn, train, config.dropout_p, rng))
    if squeeze:
        out = ag.reshape(out, out.shape[1:])
    return out


def model_forward(tokens, weights: ModelWeights, config: ModelConfig | None = None,
                  train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits of shape (T, V) for a (T,) id sequence, or (B, T, V) for (B, T)."""
    config = config or weights.config
    ids = np.asarray(tokens, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ValueError(f"tokens must be 1-D or 2-D, got shape {ids.shape}")
    t = ids.shape[1]
    if t > config.seq_len:
        raise ValueError(f"sequence length {t} exceeds seq_len {config.seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise IndexError(f"token id out of range [0, {config.vocab_size})")
    p = weights.params
    x = ag.add(ag.embedding(p["tok_emb"], ids), ag.embedding(p["pos_emb"], np.arange(t)))
    x = ag.dropout(x, config.dropout_p, train, rng)
    for bw in weights.blocks:
        x = block_forward(x, bw, config, train, rng)
    x = ag.layer_norm(x, p["ln_f.gain"], p["ln_f.bias"], LN_EPS)
    logits = linear(x, p["head.w"], p["head.b"])
    if squeeze:
        logits = ag.reshape(logits, logits.shape[1:])
    return logits
