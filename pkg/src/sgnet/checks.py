"""Finite-difference gradient checks for every op class and the toy model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import heads as hd
from . import numerics as nx
from .encoder import ModelConfig, encode, init_from_shapes, init_params, layer_shapes, transformer_layer
from .numerics import Parameter, grad_check
from .rng import substream
from .synthetic import example_mask, random_tree, structural_ids

OP_THRESHOLD = 1e-5
MODEL_THRESHOLD = 1e-4


def _param(rng, shape, name, scale=1.0):
    return Parameter(rng.normal(scale=scale, size=shape), name)


def _weights(rng, shape):
    # fixed random projection turns a tensor output into a scalar loss
    return rng.normal(size=shape)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], nx.Tensor], list[Parameter]]]:
    """One randomly drawn check per differentiable op."""
    cases = {}
    a, b = _param(rng, (7, 5), "a"), _param(rng, (5, 3), "b")
    w = _weights(rng, (7, 3))
    cases["matmul"] = (lambda: nx.tsum(nx.mul(a @ b, w)), [a, b])

    u, v = _param(rng, (3, 4), "u"), _param(rng, (4,), "v")
    wu = _weights(rng, (3, 4))
    cases["add"] = (lambda: nx.tsum(nx.mul(nx.add(u, v), wu)), [u, v])
    cases["sub"] = (lambda: nx.tsum(nx.mul(nx.sub(u, v), wu)), [u, v])
    cases["mul"] = (lambda: nx.tsum(nx.mul(nx.mul(u, v), wu)), [u, v])
    cases["mean"] = (lambda: nx.mean(nx.mul(nx.mul(u, u), wu)), [u])

    t = _param(rng, (2, 3, 4), "t")
    wt = _weights(rng, (4, 2, 3))
    cases["transpose"] = (lambda: nx.tsum(nx.mul(nx.transpose(t, (2, 0, 1)), wt)), [t])
    cases["swap_last"] = (lambda: nx.tsum(nx.mul(nx.swap_last(t), wt.reshape(2, 4, 3))), [t])
    cases["reshape"] = (lambda: nx.tsum(nx.mul(nx.reshape(t, (6, 4)), wt.reshape(6, 4))), [t])
    # repeated indices exercise gradient accumulation
    wg = _weights(rng, (2, 3, 4))
    cases["getitem"] = (lambda: nx.tsum(nx.mul(nx.getitem(t, (slice(None), [0, 2, 0])), wg)), [t])
    wc = _weights(rng, (3, 8))
    cases["concat"] = (lambda: nx.tsum(nx.mul(nx.concat([u, nx.mul(u, u)], axis=-1), wc)), [u])

    xs = _param(rng, (3, 5), "xs")
    ws = _weights(rng, (3, 5))
    cases["log_softmax"] = (lambda: nx.tsum(nx.mul(nx.log_softmax(xs), ws)), [xs])

    x = _param(rng, (4, 6), "x")
    w2 = _weights(rng, (4, 6))
    cases["softmax_rows"] = (lambda: nx.tsum(nx.mul(nx.softmax_rows(x), w2)), [x])

    xm = _param(rng, (4, 6), "xm")
    mask = rng.random((4, 6)) < 0.6
    mask[np.arange(4), rng.integers(6, size=4)] = True
    cases["masked_softmax_rows"] = (lambda: nx.tsum(nx.mul(nx.masked_softmax_rows(xm, mask), w2)), [xm])

    xl = _param(rng, (3, 8), "xl")
    gain, bias = _param(rng, (8,), "gain"), _param(rng, (8,), "bias")
    w3 = _weights(rng, (3, 8))
    cases["layer_norm"] = (lambda: nx.tsum(nx.mul(nx.layer_norm(xl, gain, bias), w3)), [xl, gain, bias])

    xg = _param(rng, (10,), "xg", scale=2.0)
    w4 = _weights(rng, (10,))
    cases["gelu"] = (lambda: nx.tsum(nx.mul(nx.gelu(xg), w4)), [xg])

    logits = _param(rng, (5, 4), "logits")
    targets = rng.integers(4, size=5)
    cases["cross_entropy"] = (lambda: nx.cross_entropy(logits, targets), [logits])

    table = _param(rng, (6, 3), "table")
    ids = rng.integers(6, size=(2, 4))
    w5 = _weights(rng, (2, 4, 3))
    cases["embedding"] = (lambda: nx.tsum(nx.mul(nx.embedding(table, ids), w5)), [table])
    return cases


def _toy_input(cfg: ModelConfig, rng, n_words: int = 5):
    tree = random_tree(rng, n_words)
    return structural_ids(tree, cfg.vocab_size), example_mask(tree).bits, tree


def model_case(cfg: ModelConfig, seed: int, task: str = "head-predict"):
    """Full SG-Net plus pointer head on one synthetic sentence."""
    rng = substream(seed, "gradcheck", "model")
    params = init_params(cfg)
    params.update(hd.init_head(cfg, task))
    ids, mask, tree = _toy_input(cfg, rng)
    targets = np.array([-1] + tree.heads)
    # perturb zero-initialized biases so every parameter sits at a generic point
    for p in params.values():
        p.data += rng.normal(scale=0.05, size=p.shape)

    def f():
        out = encode(ids, mask, cfg, params)
        return nx.cross_entropy(hd.pointer_logits(out.H_bar, params), targets)

    return f, list(params.values())


def run_suite(seed: int = 0, depth: str = "all", cfg: ModelConfig | None = None, points: int = 10,
              max_coords: int | None = None) -> dict[str, float]:
    """Max relative error per component.

    ``depth`` selects ``ops`` (every op at ``points`` random draws),
    ``layer`` (one transformer layer), ``model`` (full toy SG-Net) or ``all``.
    """
    cfg = cfg or ModelConfig(seed=seed)
    report: dict[str, float] = {}
    if depth in ("ops", "all"):
        for k in range(points):
            rng = substream(seed, "gradcheck", "ops", str(k))
            for name, (f, params) in op_cases(rng).items():
                report[name] = max(report.get(name, 0.0), grad_check(f, params))
    if depth in ("layer", "all"):
        rng = substream(seed, "gradcheck", "layer")
        params = init_from_shapes(layer_shapes(cfg, 0), seed)
        for p in params.values():
            p.data += rng.normal(scale=0.05, size=p.shape)
        xp = Parameter(rng.normal(size=(5, cfg.d_model)), "input")
        w = rng.normal(size=(5, cfg.d_model))
        f = lambda: nx.tsum(nx.mul(transformer_layer(xp, params, 0, cfg)[0], w))  # noqa: E731
        report["transformer_layer"] = grad_check(f, list(params.values()) + [xp], max_coords=max_coords)
    if depth in ("model", "all"):
        f, params = model_case(cfg, seed)
        report["sgnet_model"] = grad_check(f, params, max_coords=max_coords)
    return report


def thresholds(report: dict[str, float]) -> dict[str, float]:
    return {k: (MODEL_THRESHOLD if k == "sgnet_model" else OP_THRESHOLD) for k in report}
