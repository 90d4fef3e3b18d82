"""A small deterministic full-attention encoder over marker sequences.

Pre-norm residual stack, single head, tanh feed-forward, float64 throughout.
Forward and reverse-mode backward are written by hand so finite-difference
checks can pin the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import MarkerSequence
from .errors import ConfigError, ContractError

_LN_EPS = 1e-8


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 32
    layers: int = 1
    ffn_mult: int = 2
    max_len: int = 512
    seed: int = 0
    marker_attention_bias: bool = False  # additive logit bonus toward marker keys

    def __post_init__(self):
        if self.hidden_dim < 4 or self.hidden_dim % 2 != 0:
            raise ConfigError("hidden_dim must be even and >= 4")
        if self.layers < 0 or self.ffn_mult < 1 or self.max_len < 1:
            raise ConfigError("layers >= 0, ffn_mult >= 1, max_len >= 1 required")


@dataclass
class LayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # d x (ffn_mult*d)
    w2: np.ndarray  # (ffn_mult*d) x d


@dataclass
class EncoderParams:
    config: EncoderConfig
    embed: np.ndarray  # vocab x d, trained
    pos: np.ndarray  # max_len x d, fixed sinusoidal
    layers: list[LayerParams] = field(default_factory=list)

    def to_flat(self, prefix: str = "enc") -> dict[str, np.ndarray]:
        out = {f"{prefix}.embed": self.embed}
        for i, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo", "w1", "w2"):
                out[f"{prefix}.layer{i}.{name}"] = getattr(lp, name)
        return out

    def load_flat(self, flat: dict[str, np.ndarray], prefix: str = "enc") -> None:
        self.embed = flat[f"{prefix}.embed"]
        for i, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo", "w1", "w2"):
                setattr(lp, name, flat[f"{prefix}.layer{i}.{name}"])


@dataclass
class MarkerReps:
    """d-vectors gathered at the question marker and every sentence marker."""

    q: np.ndarray
    s: np.ndarray  # M x d

    def zeros_like(self) -> "MarkerReps":
        return MarkerReps(q=np.zeros_like(self.q), s=np.zeros_like(self.s))


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / d)
    table = np.zeros((max_len, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def init_params(cfg: EncoderConfig, vocab_size: int) -> EncoderParams:
    """Gaussian init with standard deviation 1/sqrt(d), deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.hidden_dim
    scale = 1.0 / np.sqrt(d)
    layers = []
    for _ in range(cfg.layers):
        layers.append(
            LayerParams(
                wq=rng.normal(0.0, scale, (d, d)),
                wk=rng.normal(0.0, scale, (d, d)),
                wv=rng.normal(0.0, scale, (d, d)),
                wo=rng.normal(0.0, scale, (d, d)),
                w1=rng.normal(0.0, scale, (d, cfg.ffn_mult * d)),
                w2=rng.normal(0.0, scale, (cfg.ffn_mult * d, d)),
            )
        )
    return EncoderParams(
        config=cfg,
        embed=rng.normal(0.0, scale, (vocab_size, d)),
        pos=sinusoidal_table(cfg.max_len, d),
        layers=layers,
    )


def _layernorm(x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    return xc * inv, (xc, inv)


def _layernorm_backward(dy: np.ndarray, cache) -> np.ndarray:
    xc, inv = cache
    xhat = xc * inv
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dyx = (dy * xhat).mean(axis=-1, keepdims=True)
    return inv * (dy - mean_dy - xhat * mean_dyx)


def _forward(seq: MarkerSequence, p: EncoderParams):
    cfg = p.config
    tokens = np.asarray(seq.tokens, dtype=np.int64)
    if tokens.size > cfg.max_len:
        raise ContractError(
            f"sequence length {tokens.size} exceeds max_len {cfg.max_len}"
        )
    d = cfg.hidden_dim
    x = p.embed[tokens] + p.pos[: tokens.size]
    bias = None
    if cfg.marker_attention_bias:
        bias = np.zeros(tokens.size)
        bias[seq.question_marker_pos] = 1.0
        bias[seq.sentence_marker_pos] = 1.0

    caches = []
    for lp in p.layers:
        a, ln1 = _layernorm(x)
        q = a @ lp.wq
        k = a @ lp.wk
        v = a @ lp.wv
        logits = (q @ k.T) / np.sqrt(d)
        if bias is not None:
            logits = logits + bias[None, :]
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctxv = attn @ v
        x_attn = x + ctxv @ lp.wo

        b, ln2 = _layernorm(x_attn)
        h = np.tanh(b @ lp.w1)
        x_out = x_attn + h @ lp.w2
        caches.append((a, ln1, q, k, v, attn, ctxv, b, ln2, h))
        x = x_out
    return x, tokens, caches


def encode(seq: MarkerSequence, p: EncoderParams) -> MarkerReps:
    """Contextual d-vectors at the question marker and each sentence marker."""
    x, _, _ = _forward(seq, p)
    return MarkerReps(
        q=x[seq.question_marker_pos].copy(),
        s=x[seq.sentence_marker_pos].copy(),
    )


def encode_backward(
    seq: MarkerSequence, p: EncoderParams, upstream: MarkerReps
) -> dict[str, np.ndarray]:
    """Gradient of the gathered marker outputs contracted with ``upstream``.

    Returns a flat dict matching EncoderParams.to_flat(); the fixed positional
    table receives no gradient.
    """
    x, tokens, caches = _forward(seq, p)
    d = p.config.hidden_dim
    if upstream.q.shape != (d,) or upstream.s.shape != (len(seq.sentence_marker_pos), d):
        raise ContractError("upstream cotangent shape does not match the forward pass")

    dx = np.zeros_like(x)
    dx[seq.question_marker_pos] += upstream.q
    np.add.at(dx, seq.sentence_marker_pos, upstream.s)

    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(p.layers))):
        lp = p.layers[i]
        a, ln1, q, k, v, attn, ctxv, b, ln2, h = caches[i]

        # feed-forward block: x_out = x_attn + tanh(b W1) W2
        dh = dx @ lp.w2.T
        grads[f"enc.layer{i}.w2"] = h.T @ dx
        dpre = dh * (1.0 - h * h)
        grads[f"enc.layer{i}.w1"] = b.T @ dpre
        db = dpre @ lp.w1.T
        dx_attn = dx + _layernorm_backward(db, ln2)

        # attention block: x_attn = x + (attn @ v) Wo
        dctxv = dx_attn @ lp.wo.T
        grads[f"enc.layer{i}.wo"] = ctxv.T @ dx_attn
        dattn = dctxv @ v.T
        dv = attn.T @ dctxv
        dlogits = attn * (dattn - (attn * dattn).sum(axis=-1, keepdims=True))
        dq = (dlogits @ k) / np.sqrt(d)
        dk = (dlogits.T @ q) / np.sqrt(d)
        grads[f"enc.layer{i}.wq"] = a.T @ dq
        grads[f"enc.layer{i}.wk"] = a.T @ dk
        grads[f"enc.layer{i}.wv"] = a.T @ dv
        da = dq @ lp.wq.T + dk @ lp.wk.T + dv @ lp.wv.T
        dx = dx_attn + _layernorm_backward(da, ln1)

    dembed = np.zeros_like(p.embed)
    np.add.at(dembed, tokens, dx)
    grads["enc.embed"] = dembed
    return grads


def attention_rows(seq: MarkerSequence, p: EncoderParams) -> list[np.ndarray]:
    """Per-layer attention probability matrices; diagnostic hook for tests."""
    _, _, caches = _forward(seq, p)
    return [c[5] for c in caches]
