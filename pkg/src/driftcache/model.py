"""Toy bidirectional transformer (no causal mask): embedding + learned positions,
pre-norm blocks of multi-head attention and gated-SiLU FFN, RMSNorm, LM head.

Weights are random by design; the model exists to exercise the cache machinery
and the numeric bound checks, not to generate text.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict

import numpy as np

from .linalg import matmul_f32


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 256
    n_layers: int = 8
    n_heads: int = 4
    d_ff: int = 1024
    max_seq: int = 512
    mask_token_id: int = 255
    rms_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.mask_token_id < self.vocab_size:
            raise ValueError("mask_token_id must be a valid vocab index")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class LayerWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    norm_attn_gain: np.ndarray
    norm_ffn_gain: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    token_embedding: np.ndarray
    pos_embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm_gain: np.ndarray
    lm_head: np.ndarray

    def named_tensors(self):
        """Yield (name, array) in the canonical serialization order."""
        yield "token_embedding", self.token_embedding
        yield "pos_embedding", self.pos_embedding
        for i, lw in enumerate(self.layers):
            for attr in ("w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down",
                         "norm_attn_gain", "norm_ffn_gain"):
                yield f"layers.{i}.{attr}", getattr(lw, attr)
        yield "final_norm_gain", self.final_norm_gain
        yield "lm_head", self.lm_head


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape for every named tensor of a model with this config."""
    d, dff = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "token_embedding": (config.vocab_size, d),
        "pos_embedding": (config.max_seq, d),
        "final_norm_gain": (d,),
        "lm_head": (d, config.vocab_size),
    }
    for i in range(config.n_layers):
        shapes[f"layers.{i}.w_q"] = (d, d)
        shapes[f"layers.{i}.w_k"] = (d, d)
        shapes[f"layers.{i}.w_v"] = (d, d)
        shapes[f"layers.{i}.w_o"] = (d, d)
        shapes[f"layers.{i}.w_gate"] = (d, dff)
        shapes[f"layers.{i}.w_up"] = (d, dff)
        shapes[f"layers.{i}.w_down"] = (dff, d)
        shapes[f"layers.{i}.norm_attn_gain"] = (d,)
        shapes[f"layers.{i}.norm_ffn_gain"] = (d,)
    return shapes


def init_weights(config: ModelConfig) -> ModelWeights:
    """Seeded Gaussian init: projection tensors at std 1/sqrt(d_model), embeddings
    at std 1, norm gains at 1. Bitwise deterministic per seed."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d = config.d_model
    std = 1.0 / np.sqrt(d)

    def draw(shape, scale):
        return rng.normal(0.0, scale, size=shape).astype(np.float32)

    token_embedding = draw((config.vocab_size, d), 1.0)
    pos_embedding = draw((config.max_seq, d), std)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            w_q=draw((d, d), std),
            w_k=draw((d, d), std),
            w_v=draw((d, d), std),
            w_o=draw((d, d), std),
            w_gate=draw((d, config.d_ff), std),
            w_up=draw((d, config.d_ff), std),
            w_down=draw((config.d_ff, d), std),
            norm_attn_gain=np.ones(d, dtype=np.float32),
            norm_ffn_gain=np.ones(d, dtype=np.float32),
        ))
    final_norm_gain = np.ones(d, dtype=np.float32)
    lm_head = draw((d, config.vocab_size), std)
    return ModelWeights(config, token_embedding, pos_embedding, layers,
                        final_norm_gain, lm_head)


def rmsnorm(x, gain, eps: float) -> np.ndarray:
    """Scale rows to unit RMS (plus eps), then apply the elementwise gain."""
    x64 = np.asarray(x, dtype=np.float64)
    ms = np.mean(x64 * x64, axis=-1, keepdims=True)
    out = x64 / np.sqrt(ms + eps) * np.asarray(gain, dtype=np.float64)
    return out.astype(np.float32)


def silu(x) -> np.ndarray:
    x64 = np.asarray(x, dtype=np.float64)
    return (x64 / (1.0 + np.exp(-x64))).astype(np.float32)


@dataclass
class LayerActivations:
    """Per-layer tensors captured on a dense forward pass.

    attn_input is the post-RMSNorm attention input (the tensor the Q/K/V
    projections consume); layer_input is the raw residual-stream input.
    attn_output is after the output projection, before the residual add;
    ffn_output is the FFN branch before the residual add.
    """

    layer_input: np.ndarray | None = None
    attn_input: np.ndarray | None = None
    q: np.ndarray | None = None
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    attn_weights: np.ndarray | None = None  # (n_heads, N, N), rows sum to 1
    attn_output: np.ndarray | None = None
    ffn_input: np.ndarray | None = None
    ffn_output: np.ndarray | None = None
    layer_output: np.ndarray | None = None


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def attention_mix(q_rows: np.ndarray, k_all: np.ndarray, v_all: np.ndarray,
                  n_heads: int) -> tuple[np.ndarray, np.ndarray]:
    """Softmax attention of the given query rows against the full key/value set.

    Returns (context rows (nq, d) after head concat, weights (n_heads, nq, nk)).
    Softmax subtracts the row max for stability; rows sum to 1.
    """
    nq, d = q_rows.shape
    hd = d // n_heads
    qh = split_heads(q_rows, n_heads).astype(np.float64)
    kh = split_heads(k_all, n_heads).astype(np.float64)
    vh = split_heads(v_all, n_heads).astype(np.float64)

    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(hd)
    scores -= scores.max(axis=-1, keepdims=True)
    expo = np.exp(scores)
    weights = expo / expo.sum(axis=-1, keepdims=True)
    ctx = weights @ vh  # (h, nq, hd)
    ctx = ctx.transpose(1, 0, 2).reshape(nq, d)
    return ctx.astype(np.float32), weights.astype(np.float32)


def attention_full(h: np.ndarray, lw: LayerWeights, config: ModelConfig) -> LayerActivations:
    """Dense bidirectional multi-head attention over all rows (no mask)."""
    acts = LayerActivations(layer_input=h)
    x = rmsnorm(h, lw.norm_attn_gain, config.rms_eps)
    acts.attn_input = x
    acts.q = matmul_f32(x, lw.w_q)
    acts.k = matmul_f32(x, lw.w_k)
    acts.v = matmul_f32(x, lw.w_v)
    ctx, weights = attention_mix(acts.q, acts.k, acts.v, config.n_heads)
    acts.attn_weights = weights
    acts.attn_output = matmul_f32(ctx, lw.w_o)
    return acts


def ffn_apply(h2: np.ndarray, lw: LayerWeights, config: ModelConfig) -> np.ndarray:
    """Gated-SiLU FFN branch, including its RMSNorm. Caller adds the residual."""
    x = rmsnorm(h2, lw.norm_ffn_gain, config.rms_eps)
    gate = matmul_f32(x, lw.w_gate)
    up = matmul_f32(x, lw.w_up)
    return matmul_f32(silu(gate) * up, lw.w_down)


def layer_forward(h: np.ndarray, lw: LayerWeights,
                  config: ModelConfig) -> tuple[np.ndarray, LayerActivations]:
    acts = attention_full(h, lw, config)
    h2 = h + acts.attn_output
    acts.ffn_input = h2
    acts.ffn_output = ffn_apply(h2, lw, config)
    acts.layer_output = h2 + acts.ffn_output
    return acts.layer_output, acts


def embed(weights: ModelWeights, tokens: np.ndarray) -> np.ndarray:
    config = weights.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise ValueError("tokens must be a 1-D index sequence")
    if tokens.size > config.max_seq:
        raise ValueError(f"sequence length {tokens.size} exceeds max_seq {config.max_seq}")
    if np.any(tokens < 0) or np.any(tokens >= config.vocab_size):
        raise ValueError("token id out of range")
    return weights.token_embedding[tokens] + weights.pos_embedding[: tokens.size]


def lm_logits(weights: ModelWeights, h: np.ndarray) -> np.ndarray:
    final = rmsnorm(h, weights.final_norm_gain, weights.config.rms_eps)
    return matmul_f32(final, weights.lm_head)


def forward_full(weights: ModelWeights, tokens,
                 collect_activations: bool = False
                 ) -> tuple[np.ndarray, list[LayerActivations] | None]:
    """Dense forward pass over the whole sequence; optionally keeps every
    layer's activations for profiling and bound checks."""
    h = embed(weights, tokens)
    acts_list: list[LayerActivations] | None = [] if collect_activations else None
    for lw in weights.layers:
        h, acts = layer_forward(h, lw, weights.config)
        if acts_list is not None:
            acts_list.append(acts)
    logits = lm_logits(weights, h)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    return logits, acts_list
