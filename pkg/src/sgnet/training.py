"""Toy training, evaluation and the parser-degradation sweep."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable

import numpy as np

from . import heads as hd
from . import numerics as nx
from .encoder import ModelConfig, Params, encode, init_params
from .sdoi import degrade_tree
from .synthetic import Batch, SyntheticExample, collate, example_mask, gen_synthetic


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "head-predict"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    min_words: int = 2
    max_words: int = 12
    n_eval: int = 256
    eval_every: int = 500
    degrade: float = 0.0
    syntax: bool = True
    levels: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    n_seeds: int = 5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


def split_config(flat: dict) -> tuple[ModelConfig, RunConfig]:
    """Split a flat key-value mapping into model and run settings."""
    model_keys = {f.name: f.type for f in fields(ModelConfig)}
    run_keys = {f.name for f in fields(RunConfig)}
    unknown = set(flat) - set(model_keys) - run_keys
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    run = RunConfig(**{k: v for k, v in flat.items() if k in run_keys})
    model = ModelConfig(**{k: v for k, v in flat.items() if k in model_keys and k != "seed"}, seed=run.seed)
    return model, run


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def build_model(model_cfg: ModelConfig, task: str, syntax: bool = True) -> Params:
    params = init_params(model_cfg, with_sg=syntax)
    params.update(hd.init_head(model_cfg, task))
    return params


def _example_seed(seed: int, stream: str, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(stream.encode()), *keys]).generate_state(1)[0])


def make_batch(examples: list[SyntheticExample], task: str, degrade: float, seed: int, stream: str, key: int) -> Batch:
    masks = []
    for i, ex in enumerate(examples):
        tree = ex.tree
        if degrade > 0.0:
            tree = degrade_tree(tree, degrade, _example_seed(seed, "degrade:" + stream, key, i))
        masks.append(example_mask(tree))
    return collate(examples, masks, task)


def forward(params: Params, cfg: ModelConfig, batch: Batch, task: str):
    out = encode(batch.ids, batch.sdoi, cfg, params, pad_mask=batch.pad_mask)
    Hb = out.H_bar
    if task == "head-predict":
        logits = hd.pointer_logits(Hb, params, batch.pad_mask)
        return nx.cross_entropy(logits, batch.targets), logits.data, out
    if task == "span":
        loss = hd.span_loss(Hb, params, batch.targets[:, 0], batch.targets[:, 1], batch.pad_mask)
        vlogits = hd.verifier_logits(Hb, params)
        loss = loss + nx.cross_entropy(vlogits, batch.targets[:, 2])
        return loss, (hd.span_logits(Hb, params, batch.pad_mask).data, vlogits.data), out
    if task == "classify":
        logits = hd.classify_logits(Hb, params)
        return nx.cross_entropy(logits, batch.targets), logits.data, out
    raise ValueError(f"unknown task {task!r}")


def _masked_softmax_np(x: np.ndarray, keep: np.ndarray) -> np.ndarray:
    x = np.where(keep, x, -np.inf)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def count_correct(task: str, outputs, batch: Batch, fusion: hd.FusionWeights | None = None) -> tuple[int, int]:
    if task == "head-predict":
        keep = batch.targets >= 0
        pred = outputs.argmax(axis=-1)
        return int((pred == batch.targets)[keep].sum()), int(keep.sum())
    if task == "classify":
        return int((outputs.argmax(axis=-1) == batch.targets).sum()), len(batch.targets)
    fusion = fusion or hd.FusionWeights()
    span_logits, vlogits = outputs
    correct = 0
    for b in range(len(batch.targets)):
        keep = batch.pad_mask[b]
        n = int(keep.sum())
        probs = _masked_softmax_np(span_logits[b][:, :n], keep[None, :n])
        scores = hd.fuse(hd.span_scores(probs[0], probs[1]), hd.score_ext(vlogits[b]), fusion)
        pred = hd.answerability_decision(scores, fusion)
        start, end, na = batch.targets[b]
        correct += int(pred is None) if na else int(pred == (start, end))
    return correct, len(batch.targets)


def evaluate(params: Params, cfg: ModelConfig, run: RunConfig, eval_set: list[SyntheticExample] | None = None) -> float:
    if eval_set is None:
        eval_set = gen_synthetic(run.task, run.n_eval, (run.min_words, run.max_words), run.seed,
                                 cfg.max_len, cfg.vocab_size, stream="eval")
    right = total = 0
    for start in range(0, len(eval_set), 64):
        chunk = eval_set[start:start + 64]
        batch = make_batch(chunk, run.task, run.degrade, run.seed, "eval", start)
        _, outputs, _ = forward(params, cfg, batch, run.task)
        r, t = count_correct(run.task, outputs, batch)
        right += r
        total += t
    return right / total


def train(model_cfg: ModelConfig, run: RunConfig, log: Callable[[str], None] | None = None,
          params: Params | None = None) -> tuple[Params, list[dict]]:
    """Train with Adam on a fresh synthetic batch per step.

    Every step's loss and each periodic evaluation go to ``log`` as a JSON
    line. Raises DivergenceError on a non-finite loss.
    """
    if params is None:
        params = build_model(model_cfg, run.task, run.syntax)
    opt = Adam(params, lr=run.lr)
    eval_set = gen_synthetic(run.task, run.n_eval, (run.min_words, run.max_words), run.seed,
                             model_cfg.max_len, model_cfg.vocab_size, stream="eval")
    records: list[dict] = []

    def emit(rec: dict):
        records.append(rec)
        if log is not None:
            log(json.dumps(rec, sort_keys=True))

    for step in range(run.steps):
        examples = gen_synthetic(run.task, run.batch_size, (run.min_words, run.max_words), run.seed,
                                 model_cfg.max_len, model_cfg.vocab_size, stream=f"data:{step}")
        batch = make_batch(examples, run.task, run.degrade, run.seed, "train", step)
        opt.zero_grad()
        loss, _, _ = forward(params, model_cfg, batch, run.task)
        if not math.isfinite(loss.item()):
            raise DivergenceError(f"non-finite loss {loss.item()} at step {step}")
        loss.backward()
        opt.step()
        emit({"step": step, "loss": loss.item()})
        if run.eval_every and (step + 1) % run.eval_every == 0:
            emit({"step": step, "eval_accuracy": evaluate(params, model_cfg, run, eval_set)})
    if not records or "eval_accuracy" not in records[-1]:
        emit({"step": run.steps - 1, "eval_accuracy": evaluate(params, model_cfg, run, eval_set)})
    return params, records


def final_accuracy(records: list[dict]) -> float:
    return next(r["eval_accuracy"] for r in reversed(records) if "eval_accuracy" in r)


def degrade_sweep(model_cfg: ModelConfig, run: RunConfig, seeds: list[int] | None = None,
                  log: Callable[[str], None] | None = None) -> list[dict]:
    """Train and evaluate at each degradation level; one row per level."""
    seeds = seeds if seeds is not None else [run.seed + k for k in range(run.n_seeds)]
    rows = []
    for level in run.levels:
        if not 0.0 <= level <= 1.0:
            raise ValueError(f"degradation level {level} outside [0, 1]")
        accs = []
        for s in seeds:
            r = replace(run, seed=s, degrade=float(level))
            _, records = train(replace(model_cfg, seed=s), r)
            accs.append(final_accuracy(records))
            if log is not None:
                log(json.dumps({"level": level, "seed": s, "accuracy": accs[-1]}, sort_keys=True))
        rows.append({"level": level, "median_accuracy": float(np.median(accs)), "seeds": seeds, "accuracies": accs})
    return rows
