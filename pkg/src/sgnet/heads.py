"""Task heads on top of the aggregated encoder output.

Positions are 0-based; position 0 is the pooled / null slot, so answer
spans satisfy ``1 <= k <= l < n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .encoder import ModelConfig, Params, init_from_shapes, multi_head
from .numerics import Tensor


@dataclass(frozen=True)
class SpanScores:
    s: np.ndarray
    e: np.ndarray
    score_has: float
    score_null: float
    score_diff: float
    best_span: tuple[int, int]
    score_ext: float = 0.0
    score_final: float | None = None


@dataclass(frozen=True)
class FusionWeights:
    beta1: float = 1.0
    beta2: float = 1.0
    delta: float = 0.0


def head_shapes(cfg: ModelConfig, task: str, n_classes: int = 3) -> dict[str, tuple[int, ...]]:
    d = cfg.d_model
    if task == "span":
        return {"span.w": (d, 2), "span.b": (2,), "verifier.w": (d, 2), "verifier.b": (2,)}
    if task == "classify":
        return {"cls.w": (d, n_classes), "cls.b": (n_classes,)}
    if task == "head-predict":
        return {"pointer.wq": (d, d), "pointer.wk": (d, d)}
    if task == "generate":
        return {
            "xattn.wq": (d, cfg.n_heads * cfg.d_k), "xattn.wk": (d, cfg.n_heads * cfg.d_k),
            "xattn.wv": (d, cfg.n_heads * cfg.d_v), "xattn.wo": (cfg.n_heads * cfg.d_v, d),
            "xattn.ff1.w": (d, cfg.d_ff), "xattn.ff1.b": (cfg.d_ff,),
            "xattn.ff2.w": (cfg.d_ff, d), "xattn.ff2.b": (d,),
            "gen.lw": (d, d), "gen.l0": (d, cfg.vocab_size),
        }
    raise ValueError(f"unknown task {task!r}")


def init_head(cfg: ModelConfig, task: str, n_classes: int = 3) -> Params:
    return init_from_shapes(head_shapes(cfg, task, n_classes), cfg.seed)


def span_logits(H_bar: Tensor, params: Params, key_mask=None) -> Tensor:
    """Start/end logits, shape ``(..., 2, n)``; padded positions pushed to -1e9."""
    if H_bar.shape[-2] < 2:
        raise ValueError("span scoring needs at least 2 positions")
    logits = (H_bar @ params["span.w"] + params["span.b"]).T
    if key_mask is not None:
        logits = logits + np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e9)[..., None, :]
    return logits


def span_probs(H_bar: Tensor, params: Params) -> tuple[Tensor, Tensor]:
    probs = nx.softmax_rows(span_logits(H_bar, params))
    return probs[..., 0, :], probs[..., 1, :]


def span_loss(H_bar: Tensor, params: Params, starts, ends, key_mask=None) -> Tensor:
    """Cross-entropy of gold start and end positions, summed over the two ends."""
    logits = span_logits(H_bar, params, key_mask)
    targets = np.stack([np.asarray(starts), np.asarray(ends)], axis=-1)
    return nx.mul(nx.cross_entropy(logits, targets), 2.0)


def span_scores(s: Sequence[float], e: Sequence[float]) -> SpanScores:
    """Best in-passage span and the null score.

    Pairs are ranked by ``s[k] + e[l]`` over ``1 <= k <= l``; row-major
    argmax gives the lowest start, then the lowest end, among ties.
    """
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    n = len(s)
    if n < 2 or len(e) != n:
        raise ValueError("span scoring needs two equal-length vectors of length >= 2")
    totals = s[1:, None] + e[None, 1:]
    totals[np.tril_indices(n - 1, -1)] = -np.inf
    flat = int(np.argmax(totals))
    k, l = divmod(flat, n - 1)
    best = totals[k, l]
    best_span = (k + 1, l + 1)
    null = s[0] + e[0]
    return SpanScores(s, e, float(best), float(null), float(best - null), best_span)


def verifier_logits(H_bar: Tensor, params: Params) -> Tensor:
    """(logit_ans, logit_na) from the pooled first position."""
    return (H_bar[..., :1, :] @ params["verifier.w"] + params["verifier.b"])[..., 0, :]


def score_ext(logits) -> float:
    logits = np.asarray(getattr(logits, "data", logits))
    return float(logits[..., 1] - logits[..., 0])


def fuse(scores: SpanScores, ext: float, fusion: FusionWeights) -> SpanScores:
    final = fusion.beta1 * scores.score_diff + fusion.beta2 * ext
    return SpanScores(scores.s, scores.e, scores.score_has, scores.score_null, scores.score_diff,
                      scores.best_span, ext, final)


def answerability_decision(scores: SpanScores, fusion: FusionWeights) -> tuple[int, int] | None:
    final = fusion.beta1 * scores.score_diff + fusion.beta2 * scores.score_ext
    return scores.best_span if final > fusion.delta else None


def best_threshold(finals: Sequence[float], span_correct: Sequence[bool], answerable: Sequence[bool]) -> tuple[float, float]:
    """Accuracy-maximizing threshold over a dev set.

    An example counts as correct when it predicts null and is unanswerable,
    or predicts a span (``final > delta``) and the span is correct. The
    candidates are -inf and every distinct final score; ties go to the
    smallest threshold. Returns ``(delta, accuracy)``.
    """
    finals = np.asarray(finals, dtype=np.float64)
    span_ok = np.asarray(span_correct, dtype=bool) & np.asarray(answerable, dtype=bool)
    null_ok = ~np.asarray(answerable, dtype=bool)
    n = len(finals)
    if n == 0:
        return 0.0, 0.0
    order = np.argsort(finals, kind="stable")
    sorted_f = finals[order]
    # with delta = sorted_f[i], examples order[:j] (finals <= delta) are null
    null_prefix = np.concatenate([[0], np.cumsum(null_ok[order])])
    span_suffix = np.concatenate([np.cumsum(span_ok[order][::-1])[::-1], [0]])
    best_delta, best_correct = -math.inf, int(span_suffix[0])
    i = 0
    while i < n:
        j = i
        while j < n and sorted_f[j] == sorted_f[i]:
            j += 1
        correct = int(null_prefix[j] + span_suffix[j])
        if correct > best_correct:
            best_delta, best_correct = float(sorted_f[i]), correct
        i = j
    return best_delta, best_correct / n


def classify_logits(H_bar: Tensor, params: Params) -> Tensor:
    return (H_bar[..., :1, :] @ params["cls.w"] + params["cls.b"])[..., 0, :]


def classify(H_bar: Tensor, params: Params) -> np.ndarray:
    """Class probabilities from the pooled first position."""
    return nx.softmax_rows(classify_logits(H_bar, params)).data


def predict_choice(choice_scores: Sequence[float]) -> int:
    return int(np.argmax(choice_scores))


def pointer_logits(H_bar: Tensor, params: Params, key_mask=None) -> Tensor:
    """Per-token pointer over positions, shape ``(..., n, n)``.

    ``key_mask`` (true for real positions) pushes padded columns to a large
    negative logit.
    """
    d = H_bar.shape[-1]
    logits = nx.mul((H_bar @ params["pointer.wq"]) @ (H_bar @ params["pointer.wk"]).T, 1.0 / math.sqrt(d))
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        logits = logits + np.where(km, 0.0, -1e9)[..., None, :]
    return logits


def cross_attention_step(H_tgt: Tensor, H_bar: Tensor, params: Params, cfg: ModelConfig) -> tuple[Tensor, np.ndarray]:
    """Next-token distribution from target states attending over the encoder.

    Queries come from ``H_tgt``, keys and values from ``H_bar``. Returns the
    vocabulary distribution for the last target position and the
    cross-attention matrices.
    """
    if H_tgt.shape[-1] != H_bar.shape[-1] or H_tgt.shape[-1] != cfg.d_model:
        raise ValueError(f"width mismatch {H_tgt.shape} vs {H_bar.shape}")
    mixed, attn = multi_head(H_tgt, H_bar, params, "xattn", cfg)
    mixed = mixed @ params["xattn.wo"]
    c = nx.gelu(mixed @ params["xattn.ff1.w"] + params["xattn.ff1.b"]) @ params["xattn.ff2.w"] + params["xattn.ff2.b"]
    o = c + H_tgt
    logits = (nx.gelu(o[..., -1:, :] @ params["gen.lw"]) @ params["gen.l0"])[..., 0, :]
    return nx.softmax_rows(logits), attn


def prediction_record(example_id, scores: SpanScores, span) -> str:
    return json.dumps({
        "id": example_id,
        "score_has": scores.score_has,
        "score_null": scores.score_null,
        "score_diff": scores.score_diff,
        "score_ext": scores.score_ext,
        "score_final": scores.score_final,
        "span": list(span) if span is not None else None,
    })
