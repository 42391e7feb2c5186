"""Command-line entry point: ``ffnlab <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ffnlab import config as cfgmod
from ffnlab import tokenizer as tk
from ffnlab.budget import match_depth, match_width, param_count
from ffnlab.config import ConfigError, RunConfig
from ffnlab.data import read_documents
from ffnlab.evaluation import compare, evaluate, read_summary, write_eval
from ffnlab.experiment import (apply_overrides, default_output_root, execute_run, packed_split,
                               run_matrix)
from ffnlab.model import FfnVariant
from ffnlab.plotting import plot_runs
from ffnlab.presets import PRESETS
from ffnlab.trainer import load_checkpoint, read_run_csv

PLAN_COLUMNS = ["layers", "width_multiple", "blocks", "d_model", "params", "deviation",
                "mha_per_block", "ffn_per_block", "norms_per_block", "embeddings"]


def _base_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "preset", None):
        cfg = replace(cfg, model=PRESETS[args.preset], run=replace(cfg.run, name=args.preset))
    for flag, key in (("train", "data.train"), ("test", "data.test")):
        paths = getattr(args, flag, None)
        if paths:
            overrides.append(f"{key}={','.join(paths)}")
    for flag, key in (("seed", "run.seed"), ("log_stride", "run.log_stride"),
                      ("checkpoint_stride", "run.checkpoint_stride"),
                      ("max_steps", "run.max_steps")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    return apply_overrides(cfg, overrides)


def cmd_plan(args) -> int:
    variant = FfnVariant(args.layers, args.width_multiple)
    if args.target is not None:
        target = args.target
    else:
        target = param_count(PRESETS[args.reference]).total
    if args.blocks is not None:
        res = match_width(variant, args.blocks, target, args.tolerance, args.head_div)
    else:
        res = match_depth(variant, args.d_model, target, args.tolerance)
    rows = []
    for c in res.candidates:
        b = param_count(c.config)
        rows.append([variant.layer_count, variant.width_multiple, c.config.n_blocks,
                     c.config.d_model, c.total, f"{c.deviation:+.4f}", b.per_block_mha,
                     b.per_block_ffn, b.per_block_norms,
                     b.embeddings_in + b.positional + b.head + b.final_norm])
    print(f"target={target} tolerance={args.tolerance} candidates={len(rows)}")
    if not rows:
        print("no configuration within tolerance")
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(PLAN_COLUMNS)
    w.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(PLAN_COLUMNS)
            cw.writerows(rows)
    return 0 if rows else 1


def cmd_tokenize(args) -> int:
    if args.action == "train":
        tok = tk.train_tokenizer(read_documents(args.corpus), args.vocab)
        tk.save(tok, args.out)
        print(f"vocab={tok.vocab_size} merges={len(tok.merges)} -> {args.out}")
        return 0
    tok = tk.load(args.tokenizer)
    text = args.text if args.text is not None else Path(args.input).read_text(encoding="utf-8")
    print(" ".join(map(str, tk.encode(tok, text))))
    return 0


def cmd_train(args) -> int:
    cfg = _base_config(args)
    out = Path(args.output) if args.output else default_output_root() / cfg.run.name
    row = execute_run(cfg, out, resume=args.resume)
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    tok = tk.load(args.tokenizer)
    cfg = RunConfig(model=state.config)
    cfg.data.test = list(args.test)
    out = Path(args.output)
    ds = packed_split(cfg, tok, "test", out)
    report = evaluate(state.weights, state.config, ds, args.batch_size, args.mode)
    write_eval(report, out)
    print(report.summary_line())
    return 0


def cmd_compare(args) -> int:
    ma, sa, _ = read_summary(args.a)
    mb, sb, _ = read_summary(args.b)
    r = compare((ma, sa), (mb, sb))
    verdict = "significant" if r.significant else "not significant"
    print(f"diff={r.difference!r} pooled_se={r.pooled_se!r} z={r.z:.4f} {verdict} at 5%")
    return 0


def cmd_run_matrix(args) -> int:
    base = _base_config(args)
    out = Path(args.output) if args.output else default_output_root()
    # --set must also apply after each preset replaces the model section
    path = run_matrix(base, args.presets, out, overrides=args.set, dry_run=args.dry_run,
                      jobs=args.jobs)
    print(path.read_text(), end="")
    return 0


def cmd_plot(args) -> int:
    names = args.names or [Path(p).parent.name or Path(p).stem for p in args.runs]
    if len(names) != len(args.runs):
        raise SystemExit("--names must match the number of run files")
    runs = {n: read_run_csv(p) for n, p in zip(names, args.runs)}
    paths = plot_runs(runs, args.out)
    for p in paths.values():
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ffnlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="parameter-budget matched configurations")
    sp.add_argument("--layers", type=int, required=True, choices=[0, 1, 2, 3])
    sp.add_argument("--width-multiple", type=int, default=4)
    fixed = sp.add_mutually_exclusive_group(required=True)
    fixed.add_argument("--blocks", type=int, help="fix depth, search d_model")
    fixed.add_argument("--d-model", type=int, help="fix width, search depth")
    sp.add_argument("--target", type=int, help="parameter budget (overrides --reference)")
    sp.add_argument("--reference", default="baseline", choices=sorted(PRESETS))
    sp.add_argument("--tolerance", type=float, default=0.03)
    sp.add_argument("--head-div", type=int, default=16)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("tokenize", help="train or apply the BPE tokenizer")
    tsub = sp.add_subparsers(dest="action", required=True)
    t = tsub.add_parser("train")
    t.add_argument("--corpus", nargs="+", required=True)
    t.add_argument("--vocab", type=int, default=tk.MAX_VOCAB)
    t.add_argument("--out", required=True)
    t = tsub.add_parser("encode")
    t.add_argument("--tokenizer", required=True)
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--input")
    sp.set_defaults(func=cmd_tokenize)

    def run_flags(sp):
        sp.add_argument("--config")
        sp.add_argument("--train", nargs="+")
        sp.add_argument("--test", nargs="+")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--log-stride", type=int)
        sp.add_argument("--checkpoint-stride", type=int)
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        sp.add_argument("--output")

    sp = sub.add_parser("train", help="train (and evaluate) one configuration")
    run_flags(sp)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a test corpus")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--test", nargs="+", required=True)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--mode", choices=["sequence", "token"], default="sequence")
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="z-test between two eval summaries")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("run-matrix", help="run shipped presets and write results.csv")
    run_flags(sp)
    sp.add_argument("--presets", nargs="+", default=["layers"],
                    help="preset names, or the groups layers / widths / all")
    sp.add_argument("--dry-run", action="store_true", help="validate and count only")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_run_matrix)

    sp = sub.add_parser("plot", help="log-scale loss curves from run.csv files")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("--names", nargs="+")
    sp.add_argument("--out", required=True, help="output prefix (writes .png, .csv, .json)")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
