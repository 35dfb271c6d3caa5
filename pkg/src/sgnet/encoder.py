"""Transformer encoder with a syntax-guided attention layer on top.

All functions accept a single sequence (``n`` positions) or a padded batch
(``B x n``). Attention matrices are recorded as plain arrays shaped
``(B, heads, n, n)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor
from .rng import substream

MASK_MODES = ("additive", "literal-multiply")

Params = dict[str, Parameter]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    d_k: int = 16
    d_q: int = 16
    d_v: int = 16
    alpha: float = 0.5
    mask_mode: str = "additive"
    vocab_size: int = 64
    max_len: int = 64
    n_types: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d_k != self.d_q:
            raise ValueError(f"d_k ({self.d_k}) must equal d_q ({self.d_q})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.n_layers < 0 or min(self.n_heads, self.d_model, self.d_ff, self.d_k, self.d_v) < 1:
            raise ValueError("model dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EncoderOutput:
    H: Tensor
    H_prime: Tensor | None
    H_bar: Tensor
    attn_vanilla: list[np.ndarray]
    attn_sg: np.ndarray | None


def _uniform(rng, shape, d_in):
    bound = 1.0 / math.sqrt(d_in)
    return rng.uniform(-bound, bound, size=shape)


def _attention_shapes(prefix: str, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    hk, hv = cfg.n_heads * cfg.d_k, cfg.n_heads * cfg.d_v
    return {f"{prefix}.wq": (cfg.d_model, hk), f"{prefix}.wk": (cfg.d_model, hk), f"{prefix}.wv": (cfg.d_model, hv)}


def layer_shapes(cfg: ModelConfig, layer: int) -> dict[str, tuple[int, ...]]:
    p = f"layer{layer}"
    shapes = _attention_shapes(p, cfg)
    shapes.update({
        f"{p}.wo": (cfg.n_heads * cfg.d_v, cfg.d_model),
        f"{p}.ln1.gain": (cfg.d_model,), f"{p}.ln1.bias": (cfg.d_model,),
        f"{p}.ff1.w": (cfg.d_model, cfg.d_ff), f"{p}.ff1.b": (cfg.d_ff,),
        f"{p}.ff2.w": (cfg.d_ff, cfg.d_model), f"{p}.ff2.b": (cfg.d_model,),
        f"{p}.ln2.gain": (cfg.d_model,), f"{p}.ln2.bias": (cfg.d_model,),
    })
    return shapes


def sg_layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = _attention_shapes("sg", cfg)
    shapes.update({
        "sg.ff1.w": (cfg.n_heads * cfg.d_v, cfg.d_ff), "sg.ff1.b": (cfg.d_ff,),
        "sg.ff2.w": (cfg.d_ff, cfg.d_model), "sg.ff2.b": (cfg.d_model,),
        "sg.ln.gain": (cfg.d_model,), "sg.ln.bias": (cfg.d_model,),
    })
    return shapes


def embedding_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {
        "emb.token": (cfg.vocab_size, cfg.d_model),
        "emb.position": (cfg.max_len, cfg.d_model),
        "emb.type": (cfg.n_types, cfg.d_model),
    }


def init_from_shapes(shapes: dict[str, tuple[int, ...]], seed: int) -> Params:
    """Seeded init, one substream per parameter name.

    Weights are uniform in +-1/sqrt(fan_in); embedding tables count as
    one-hot inputs (fan_in 1); layer-norm gains start at 1, biases at 0.
    """
    params = {}
    for name, shape in shapes.items():
        rng = substream(seed, "init", name)
        if name.endswith(".gain"):
            value = np.ones(shape)
        elif name.endswith(".bias") or name.endswith(".b"):
            value = np.zeros(shape)
        elif name.startswith("emb."):
            value = _uniform(rng, shape, 1)
        else:
            value = _uniform(rng, shape, shape[0])
        params[name] = Parameter(value, name)
    return params


def init_params(cfg: ModelConfig, with_sg: bool = True) -> Params:
    shapes = embedding_shapes(cfg)
    for layer in range(cfg.n_layers):
        shapes.update(layer_shapes(cfg, layer))
    if with_sg:
        shapes.update(sg_layer_shapes(cfg))
    return init_from_shapes(shapes, cfg.seed)


def count_params(params: Params) -> int:
    return sum(p.data.size for p in params.values())


def embed(token_ids, cfg: ModelConfig, params: Params, type_ids=None) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    n = ids.shape[-1]
    if n > cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(f"token id out of range 0..{cfg.vocab_size - 1}")
    types = np.zeros_like(ids) if type_ids is None else np.asarray(type_ids, dtype=np.int64)
    out = nx.embedding(params["emb.token"], ids) + nx.embedding(params["emb.position"], np.arange(n))
    return out + nx.embedding(params["emb.type"], types)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, width = x.shape
    x = nx.reshape(x, (*lead, n, n_heads, width // n_heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return nx.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dv = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return nx.reshape(nx.transpose(x, axes), (*lead, n, h * dv))


def multi_head(query_in: Tensor, kv_in: Tensor, params: Params, prefix: str, cfg: ModelConfig,
               mask=None, mode: str = "additive") -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention for every head; returns concatenated heads.

    ``mask`` is boolean ``(n_q, n_k)`` or ``(B, n_q, n_k)``; true marks an
    allowed query-key pair. ``literal-multiply`` scales the logits by the
    mask instead of excluding positions.
    """
    q = _split_heads(query_in @ params[f"{prefix}.wq"], cfg.n_heads)
    k = _split_heads(kv_in @ params[f"{prefix}.wk"], cfg.n_heads)
    v = _split_heads(kv_in @ params[f"{prefix}.wv"], cfg.n_heads)
    scores = nx.mul(q @ k.T, 1.0 / math.sqrt(cfg.d_k))
    if mask is None:
        attn = nx.softmax_rows(scores)
    else:
        m = np.asarray(mask, dtype=bool)
        m = m[..., None, :, :]  # broadcast over heads
        if mode == "additive":
            attn = nx.masked_softmax_rows(scores, m)
        elif mode == "literal-multiply":
            attn = nx.softmax_rows(nx.mul(scores, m.astype(np.float64)))
        else:
            raise ValueError(f"unknown mask mode {mode!r}")
    return _merge_heads(attn @ v), attn.data


def _check_width(x: Tensor, cfg: ModelConfig):
    if x.shape[-1] != cfg.d_model:
        raise ValueError(f"expected width {cfg.d_model}, got {x.shape[-1]}")


def transformer_layer(x: Tensor, params: Params, layer: int, cfg: ModelConfig, mask=None) -> tuple[Tensor, np.ndarray]:
    _check_width(x, cfg)
    p = f"layer{layer}"
    mixed, attn = multi_head(x, x, params, p, cfg, mask)
    h = nx.layer_norm(x + mixed @ params[f"{p}.wo"], params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
    ff = nx.gelu(h @ params[f"{p}.ff1.w"] + params[f"{p}.ff1.b"]) @ params[f"{p}.ff2.w"] + params[f"{p}.ff2.b"]
    out = nx.layer_norm(h + ff, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    return out, attn


def sg_attention_layer(H: Tensor, mask, params: Params, cfg: ModelConfig) -> tuple[Tensor, np.ndarray]:
    """Syntax-guided self-attention over the SDOI mask, FFN, residual layer norm."""
    _check_width(H, cfg)
    m = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if m.shape[-2:] != (H.shape[-2], H.shape[-2]):
        raise ValueError(f"mask shape {m.shape} does not match sequence length {H.shape[-2]}")
    if not m.any(axis=-1).all():
        raise ValueError("SDOI mask has an empty row")
    heads, attn = multi_head(H, H, params, "sg", cfg, m, cfg.mask_mode)
    ff = nx.gelu(heads @ params["sg.ff1.w"] + params["sg.ff1.b"]) @ params["sg.ff2.w"] + params["sg.ff2.b"]
    return nx.layer_norm(ff + H, params["sg.ln.gain"], params["sg.ln.bias"]), attn


def dual_aggregate(H: Tensor, H_prime: Tensor, alpha: float) -> Tensor:
    if H.shape != H_prime.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {H_prime.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if alpha == 1.0:
        return H
    if alpha == 0.0:
        return H_prime
    return nx.mul(H, alpha) + nx.mul(H_prime, 1.0 - alpha)


def vanilla_encode(token_ids, cfg: ModelConfig, params: Params, pad_mask=None, type_ids=None) -> tuple[Tensor, list[np.ndarray]]:
    """Embedding plus the vanilla stack; ``pad_mask`` marks real positions."""
    x = embed(token_ids, cfg, params, type_ids)
    key_mask = None
    if pad_mask is not None:
        pm = np.asarray(pad_mask, dtype=bool)
        key_mask = np.broadcast_to(pm[..., None, :], pm.shape + pm.shape[-1:])
    attns = []
    for layer in range(cfg.n_layers):
        x, attn = transformer_layer(x, params, layer, cfg, key_mask)
        attns.append(attn)
    return x, attns


def encode(token_ids, sdoi_mask, cfg: ModelConfig, params: Params, pad_mask=None, type_ids=None) -> EncoderOutput:
    """Vanilla stack, syntax-guided layer on its output, then dual aggregation.

    Without SG parameters (a vanilla baseline) the SG layer is skipped and
    ``H_bar`` is ``H``.
    """
    H, attns = vanilla_encode(token_ids, cfg, params, pad_mask, type_ids)
    if "sg.wq" not in params:
        return EncoderOutput(H, None, H, attns, None)
    mask = np.asarray(getattr(sdoi_mask, "bits", sdoi_mask), dtype=bool)
    H_prime, attn_sg = sg_attention_layer(H, mask, params, cfg)
    return EncoderOutput(H, H_prime, dual_aggregate(H, H_prime, cfg.alpha), attns, attn_sg)
