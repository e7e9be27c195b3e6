"""Desk-scale model zoo: an MLP classifier and a small encoder transformer.

Both models are pure functions of ``(spec, params, batch)``. Parameters are
Glorot-uniform from a counter-based stream keyed by ``init_seed`` and the
parameter name; biases and layer-norm shifts start at zero, layer-norm gains
at one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng
from . import tensor as T
from .errors import ConfigError, RangeError
from .tensor import ParamVector, Tensor

LAYER_NORM_EPS = 1e-6


def glorot_uniform(shape: tuple[int, int], seed: int, name: str) -> np.ndarray:
    fan_in, fan_out = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.stream(seed, 0, f"init/{name}").uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError("MlpSpec.layer_sizes needs at least an input and an output width")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"MlpSpec.layer_sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def num_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


def _mlp_names(i: int) -> tuple[str, str]:
    return f"dense{i:02d}.w", f"dense{i:02d}.b"


def mlp_init(spec: MlpSpec) -> ParamVector:
    entries = {}
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        wn, bn = _mlp_names(i)
        entries[wn] = glorot_uniform((sizes[i], sizes[i + 1]), spec.init_seed, wn)
        entries[bn] = np.zeros(sizes[i + 1])
    return ParamVector(entries)


def mlp_logits(spec: MlpSpec, p: Mapping[str, Tensor], x) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise T.ShapeError("mlp input", x.shape, (None, spec.layer_sizes[0]))
    act = T.relu if spec.activation == "relu" else T.tanh
    h = T.Tensor(x)
    last = len(spec.layer_sizes) - 2
    for i in range(last + 1):
        wn, bn = _mlp_names(i)
        h = T.add(T.matmul(h, p[wn]), p[bn])
        if i < last:
            h = act(h)
    return h


def mlp_graph(spec: MlpSpec):
    """Graph function ``(p, batch) -> mean cross-entropy`` for this spec."""

    def fn(p, batch):
        labels = np.asarray(batch.y, dtype=np.int64)
        k = spec.layer_sizes[-1]
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            bad = int(labels[(labels < 0) | (labels >= k)][0])
            raise RangeError("label", bad, k)
        return T.cross_entropy(mlp_logits(spec, p, batch.x), labels)

    return fn


def mlp_loss(spec: MlpSpec, params: ParamVector, batch) -> float:
    return T.forward(mlp_graph(spec), batch, params)


def mlp_predict(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    return mlp_logits(spec, T.leaves(params), x).data


# ---------------------------------------------------------------------------
# transformer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformerSpec:
    """Pre-norm encoder with a classifier on the final position.

    ``num_layers`` defaults to one block; associative-recall tasks need two.
    """

    vocab_size: int
    model_dim: int
    num_heads: int
    ff_dim: int
    max_seq_len: int
    init_seed: int = 0
    num_layers: int = 1

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if self.num_heads < 1 or self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.ff_dim < 1 or self.num_layers < 1:
            raise ConfigError("ff_dim and num_layers must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def num_params(self) -> int:
        v, d, f = self.vocab_size, self.model_dim, self.ff_dim
        per_block = 4 * d * d + 2 * d * f + f + d + 4 * d
        return v * d + self.num_layers * per_block + 2 * d + d * v + v


def sinusoidal_positions(seq_len: int, dim: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def transformer_init(spec: TransformerSpec) -> ParamVector:
    d, f, v, s = spec.model_dim, spec.ff_dim, spec.vocab_size, spec.init_seed
    e = {"embed": glorot_uniform((v, d), s, "embed")}
    for i in range(spec.num_layers):
        pre = f"block{i:02d}."
        for n in ("wq", "wk", "wv", "wo"):
            e[pre + "attn." + n] = glorot_uniform((d, d), s, pre + "attn." + n)
        e[pre + "ff.w1"] = glorot_uniform((d, f), s, pre + "ff.w1")
        e[pre + "ff.b1"] = np.zeros(f)
        e[pre + "ff.w2"] = glorot_uniform((f, d), s, pre + "ff.w2")
        e[pre + "ff.b2"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            e[pre + ln + ".g"] = np.ones(d)
            e[pre + ln + ".b"] = np.zeros(d)
    e["ln_f.g"] = np.ones(d)
    e["ln_f.b"] = np.zeros(d)
    e["head.w"] = glorot_uniform((d, v), s, "head.w")
    e["head.b"] = np.zeros(v)
    return ParamVector(e)


def _split_heads(x: Tensor, n: int, t: int, h: int, hd: int) -> Tensor:
    return T.transpose(T.reshape(x, (n, t, h, hd)), (0, 2, 1, 3))


def _attention(spec, p, pre, x, attn_out):
    n, t, d = x.shape
    h, hd = spec.num_heads, spec.head_dim
    q = _split_heads(T.matmul(x, p[pre + "attn.wq"]), n, t, h, hd)
    k = _split_heads(T.matmul(x, p[pre + "attn.wk"]), n, t, h, hd)
    v = _split_heads(T.matmul(x, p[pre + "attn.wv"]), n, t, h, hd)
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    probs = T.softmax(scores)
    if attn_out is not None:
        attn_out.append(probs.data)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (n, t, d))
    return T.matmul(ctx, p[pre + "attn.wo"])


def check_tokens(spec: TransformerSpec, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise T.ShapeError("transformer input", tokens.shape, (None, spec.max_seq_len))
    if tokens.shape[1] > spec.max_seq_len:
        raise ConfigError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {spec.max_seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= spec.vocab_size):
        bad = int(tokens[(tokens < 0) | (tokens >= spec.vocab_size)][0])
        raise RangeError("token id", bad, spec.vocab_size)
    return tokens


def transformer_logits(spec: TransformerSpec, p, tokens, attn_out: list | None = None) -> Tensor:
    """Logits over the vocabulary at the last position, shape (n, vocab)."""
    tokens = check_tokens(spec, tokens)
    n, t = tokens.shape
    x = T.add(T.embedding(p["embed"], tokens), T.Tensor(sinusoidal_positions(t, spec.model_dim)))
    for i in range(spec.num_layers):
        pre = f"block{i:02d}."
        hnorm = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"], LAYER_NORM_EPS)
        x = T.add(x, _attention(spec, p, pre, hnorm, attn_out))
        hnorm = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"], LAYER_NORM_EPS)
        ff = T.relu(T.add(T.matmul(hnorm, p[pre + "ff.w1"]), p[pre + "ff.b1"]))
        x = T.add(x, T.add(T.matmul(ff, p[pre + "ff.w2"]), p[pre + "ff.b2"]))
    x = T.layer_norm(x, p["ln_f.g"], p["ln_f.b"], LAYER_NORM_EPS)
    last = T.take(x, t - 1, axis=1)
    return T.add(T.matmul(last, p["head.w"]), p["head.b"])


def transformer_graph(spec: TransformerSpec):
    def fn(p, batch):
        labels = np.asarray(batch.y, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= spec.vocab_size):
            bad = int(labels[(labels < 0) | (labels >= spec.vocab_size)][0])
            raise RangeError("label", bad, spec.vocab_size)
        return T.cross_entropy(transformer_logits(spec, p, batch.x), labels)

    return fn


def transformer_loss(spec: TransformerSpec, params: ParamVector, batch) -> float:
    return T.forward(transformer_graph(spec), batch, params)


def transformer_predict(spec: TransformerSpec, params: ParamVector, tokens) -> np.ndarray:
    return transformer_logits(spec, T.leaves(params), tokens).data


def attention_probs(spec: TransformerSpec, params: ParamVector, tokens) -> list[np.ndarray]:
    """Attention probabilities per layer, each (n, heads, t, t)."""
    out: list[np.ndarray] = []
    transformer_logits(spec, T.leaves(params), tokens, attn_out=out)
    return out


# ---------------------------------------------------------------------------
# dispatch on spec type
# ---------------------------------------------------------------------------


def init_params(spec) -> ParamVector:
    return mlp_init(spec) if isinstance(spec, MlpSpec) else transformer_init(spec)


def loss_graph(spec):
    return mlp_graph(spec) if isinstance(spec, MlpSpec) else transformer_graph(spec)


def predict(spec, params: ParamVector, x) -> np.ndarray:
    if isinstance(spec, MlpSpec):
        return mlp_predict(spec, params, x)
    return transformer_predict(spec, params, x)
