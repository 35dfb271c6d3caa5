"""Command-line entry point: ``sgnet <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import checks
from .encoder import ModelConfig, encode
from .numerics import Parameter, load_checkpoint, save_checkpoint
from .sdoi import SubwordAlignment, block_diagonal_merge, build_sdoi_mask, project_to_subwords
from .synthetic import example_mask, gen_synthetic, split_subwords, structural_ids
from .training import DivergenceError, RunConfig, degrade_sweep, evaluate, split_config, train
from .trees import ConlluError, TreeError, read_trees


class UsageError(Exception):
    pass


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = parse_value(value)
    return out


def resolve_config(args) -> tuple[ModelConfig, RunConfig]:
    flat = read_config(args.config) if args.config else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip().replace("-", "_")] = parse_value(value)
    for key in ("task", "steps"):
        if getattr(args, key, None) is not None:
            flat[key] = getattr(args, key)
    if args.seed is not None:
        flat["seed"] = args.seed
    if "seed" not in flat:
        raise UsageError("a seed is required (--seed or seed = ... in --config)")
    if isinstance(flat.get("levels"), (int, float)):
        flat["levels"] = (flat["levels"],)
    try:
        return split_config(flat)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _save_model(path: Path, params, model_cfg: ModelConfig, run: RunConfig) -> None:
    save_checkpoint(path, {k: p.data for k, p in params.items()},
                    {"model": model_cfg.to_dict(), "run": run.to_dict()})


def _load_model(path: str):
    arrays, meta = load_checkpoint(path)
    model_cfg = ModelConfig.from_dict(meta["model"])
    run_meta = dict(meta["run"])
    run_meta["levels"] = tuple(run_meta.get("levels", ()))
    run = RunConfig(**run_meta)
    params = {k: Parameter(v, k) for k, v in arrays.items()}
    return params, model_cfg, run


def sentence_mask(tree, lead: bool, trail: bool, subword_mode: str = "none"):
    """Mask for one sentence with an optional leading [CLS] and trailing [SEP]."""
    n = len(tree.tokens)
    specials = ({0} if lead else set()) | ({n + int(lead)} if trail else set())
    mask = build_sdoi_mask(tree, specials)
    if subword_mode == "none":
        return mask
    counts = [1] * lead + [len(split_subwords(f)) for f in tree.forms] + [1] * trail
    return project_to_subwords(mask, SubwordAlignment.from_counts(counts), subword_mode)


def cmd_mask(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input {src} not found")
    out = _out_dir(args)
    trees = read_trees(src)
    lead = args.special_tokens in ("cls", "cls-sep")
    trail = args.special_tokens == "cls-sep"
    if args.merge:
        # [CLS] s1 [SEP] s2 [SEP] ...: the [CLS] only precedes the first sentence
        if not trees:
            raise UsageError(f"{src}: no sentences to merge")
        merged = block_diagonal_merge([sentence_mask(t, lead and k == 0, trail, args.subword_mode)
                                       for k, t in enumerate(trees)])
        _write(out / "passage.json", merged.to_json() + "\n")
        (out / "passage.rle").write_bytes(merged.to_rle())
        return 0
    for k, tree in enumerate(trees):
        mask = sentence_mask(tree, lead, trail, args.subword_mode)
        _write(out / f"mask_{k:04d}.json", mask.to_json() + "\n")
        (out / f"mask_{k:04d}.rle").write_bytes(mask.to_rle())
    return 0


def cmd_train(args) -> int:
    model_cfg, run = resolve_config(args)
    out = _out_dir(args)
    lines: list[str] = []
    try:
        params, records = train(model_cfg, run, log=lines.append)
    except DivergenceError as exc:
        _write(out / "metrics.jsonl", "".join(line + "\n" for line in lines))
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _write(out / "metrics.jsonl", "".join(line + "\n" for line in lines))
    _save_model(out / "checkpoint.ckpt", params, model_cfg, run)
    _write(out / "config.json", json.dumps({"model": model_cfg.to_dict(), "run": run.to_dict()}, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval(args) -> int:
    params, model_cfg, run = _load_model(args.checkpoint)
    if args.n_eval is not None:
        run = replace(run, n_eval=args.n_eval)
    if args.degrade is not None:
        run = replace(run, degrade=args.degrade)
    result = {"task": run.task, "seed": run.seed, "degrade": run.degrade, "n_eval": run.n_eval,
              "accuracy": evaluate(params, model_cfg, run)}
    text = json.dumps(result, sort_keys=True)
    if args.out:
        _write(_out_dir(args) / "eval.json", text + "\n")
    print(text)
    return 0


def _dump_input(args, model_cfg: ModelConfig, run: RunConfig):
    if args.input:
        trees = read_trees(args.input)
        if not 0 <= args.sentence < len(trees):
            raise UsageError(f"--sentence {args.sentence} out of range 0..{len(trees) - 1}")
        tree = trees[args.sentence]
        return tree, ["[CLS]"] + tree.forms
    examples = gen_synthetic(run.task, args.example + 1, (run.min_words, run.max_words), run.seed,
                             model_cfg.max_len, model_cfg.vocab_size, stream="eval")
    tree = examples[args.example].tree
    return tree, ["[CLS]"] + tree.forms


def cmd_dump_attn(args) -> int:
    params, model_cfg, run = _load_model(args.checkpoint)
    tree, tokens = _dump_input(args, model_cfg, run)
    layer = model_cfg.n_layers - 1 if args.layer is None else args.layer
    if not 0 <= layer < model_cfg.n_layers:
        raise UsageError(f"--layer {layer} out of range 0..{model_cfg.n_layers - 1}")
    if not 0 <= args.head < model_cfg.n_heads:
        raise UsageError(f"--head {args.head} out of range 0..{model_cfg.n_heads - 1}")
    mask = example_mask(tree)
    result = encode(structural_ids(tree, model_cfg.vocab_size), mask, model_cfg, params)
    dump = {"vanilla": {"tokens": tokens, "layer": layer, "head": args.head,
                        "matrix": result.attn_vanilla[layer][args.head].tolist()}}
    if result.attn_sg is not None:
        dump["sg"] = {"tokens": tokens, "layer": model_cfg.n_layers, "head": args.head,
                      "matrix": result.attn_sg[args.head].tolist()}
    dump["mask"] = mask.bits.astype(int).tolist()
    _write(_out_dir(args) / "attention.json", json.dumps(dump, sort_keys=True) + "\n")
    return 0


def cmd_degrade_sweep(args) -> int:
    model_cfg, run = resolve_config(args)
    if args.levels is not None:
        run = replace(run, levels=tuple(float(x) for x in args.levels.split(",")))
    if args.n_seeds is not None:
        run = replace(run, n_seeds=args.n_seeds)
    if any(not 0.0 <= lv <= 1.0 for lv in run.levels):
        raise UsageError(f"levels must lie in [0, 1]: {run.levels}")
    out = _out_dir(args)
    lines: list[str] = []
    rows = degrade_sweep(model_cfg, run, log=lines.append)
    _write(out / "sweep.jsonl", "".join(line + "\n" for line in lines))
    _write(out / "sweep.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for row in rows:
        print(f"{row['level']:.2f}\t{row['median_accuracy']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    model_cfg, run = resolve_config(args)
    report = checks.run_suite(run.seed, args.depth, model_cfg, points=args.points)
    limits = checks.thresholds(report)
    ok = all(report[k] < limits[k] for k in report)
    text = json.dumps({"errors": report, "thresholds": limits, "pass": ok}, indent=2, sort_keys=True)
    if args.out:
        _write(_out_dir(args) / "gradcheck.json", text + "\n")
    for k in sorted(report):
        print(f"{k:24s} {report[k]:.3e}  {'ok' if report[k] < limits[k] else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed for every random substream")
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(prog="sgnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common], help="build SDOI masks from a treebank file")
    p.add_argument("input", help=".conllu file, or index/form/head lines for other extensions")
    p.add_argument("--special-tokens", choices=("none", "cls", "cls-sep"), default="cls-sep")
    p.add_argument("--subword-mode", choices=("none", "shared", "first-child"), default="none")
    p.add_argument("--merge", action="store_true", help="one block-diagonal mask for the whole passage")
    p.set_defaults(func=cmd_mask, needs_out=True)

    for name, func in (("train", cmd_train), ("degrade-sweep", cmd_degrade_sweep)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--task", choices=("head-predict", "span", "classify"), default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        if name == "degrade-sweep":
            p.add_argument("--levels", default=None, help="comma-separated degradation levels")
            p.add_argument("--n-seeds", type=int, default=None)
        p.set_defaults(func=func, needs_out=True)

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("--n-eval", type=int, default=None)
    p.add_argument("--degrade", type=float, default=None)
    p.set_defaults(func=cmd_eval, needs_out=False)

    p = sub.add_parser("dump-attn", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("--input", default=None, help="treebank file; default is a synthetic eval example")
    p.add_argument("--sentence", type=int, default=0)
    p.add_argument("--example", type=int, default=0)
    p.add_argument("--layer", type=int, default=None, help="vanilla layer (default: last)")
    p.add_argument("--head", type=int, default=0)
    p.set_defaults(func=cmd_dump_attn, needs_out=True)

    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--depth", choices=("ops", "layer", "model", "all"), default="all")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gradcheck, needs_out=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.needs_out and not args.out:
            raise UsageError("--out is required")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConlluError, TreeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
