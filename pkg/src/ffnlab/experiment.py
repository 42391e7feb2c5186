"""End-to-end runs (tokenize, pack, train, evaluate) and the preset matrix."""

from __future__ import annotations

import configparser
import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ffnlab import config as cfgmod
from ffnlab import tokenizer as tk
from ffnlab.budget import param_count
from ffnlab.config import ConfigError, RunConfig
from ffnlab.data import (PackedDataset, encode_documents, load_packed, pack_corpus, read_documents,
                         save_packed)
from ffnlab.evaluation import evaluate, write_eval
from ffnlab.presets import PRESETS, check_presets, resolve
from ffnlab.trainer import (load_checkpoint, save_checkpoint, train_run, write_run_csv,
                            write_run_meta)

log = logging.getLogger(__name__)

OUTPUT_ENV = "FFNLAB_OUTPUT_ROOT"
RESULT_COLUMNS = ["name", "layers", "blocks", "d_model", "params", "loss_mean", "loss_se",
                  "wall_clock_s"]


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "ffnlab-out"))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` assignments, revalidating the result."""
    if not overrides:
        return cfg
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(cfgmod.dumps(cfg))
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if not cp.has_section(section) or not cp.has_option(section, option):
            raise ConfigError(f"unknown key {key.strip()}")
        cp.set(section, option, value.strip())
    lines = []
    for s in cp.sections():
        lines.append(f"[{s}]")
        lines += [f"{k} = {v}" for k, v in cp[s].items()]
    return cfgmod.loads("\n".join(lines) + "\n")


def obtain_tokenizer(cfg: RunConfig, out_dir: Path) -> tk.TokenizerModel:
    if cfg.data.tokenizer and Path(cfg.data.tokenizer).exists():
        return tk.load(cfg.data.tokenizer)
    path = Path(cfg.data.tokenizer) if cfg.data.tokenizer else out_dir / "tokenizer.bpe"
    if path.exists():
        return tk.load(path)
    if not cfg.data.train:
        raise ConfigError("no training corpus given (data.train)")
    vocab = min(cfg.model.vocab_size, tk.MAX_VOCAB)
    tok = tk.train_tokenizer(read_documents(cfg.data.train), vocab)
    path.parent.mkdir(parents=True, exist_ok=True)
    tk.save(tok, path)
    log.info("trained tokenizer with %d entries -> %s", tok.vocab_size, path)
    return tok


def packed_split(cfg: RunConfig, tok: tk.TokenizerModel, split: str,
                 cache_dir: Path) -> PackedDataset:
    paths = cfg.data.train if split == "train" else cfg.data.test
    cache = cache_dir / f"{split}-{tok.digest()[:12]}-{cfg.model.seq_len}.pack"
    if cache.exists():
        return load_packed(cache, split)
    ds = pack_corpus(encode_documents(tok, read_documents(paths)), cfg.model.seq_len, split,
                     vocab_size=cfg.model.vocab_size)
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_packed(ds, cache)
    return ds


def execute_run(cfg: RunConfig, out_dir: str | Path, resume: str | Path | None = None) -> dict:
    """Train one configuration and evaluate it; returns its ``results.csv`` row."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / "run.ini")
    tok = obtain_tokenizer(cfg, out)
    if tok.vocab_size > cfg.model.vocab_size:
        raise ConfigError(f"tokenizer has {tok.vocab_size} entries > model vocab "
                          f"{cfg.model.vocab_size}")
    cache_dir = Path(cfg.data.cache_dir) if cfg.data.cache_dir else out
    train_ds = packed_split(cfg, tok, "train", cache_dir)
    dtype = np.float64 if cfg.run.dtype == "float64" else np.float32
    ckpt = out / "checkpoint.ckpt"
    state = load_checkpoint(resume, tok.digest()) if resume else None
    result = train_run(
        cfg.model, cfg.schedule, train_ds, cfg.run.seed,
        batch_size=cfg.data.batch_size, dtype=dtype, state=state,
        max_steps=cfg.run.max_steps or None, checkpoint_path=ckpt,
        checkpoint_stride=cfg.run.checkpoint_stride, tokenizer_hash=tok.digest(),
    )
    save_checkpoint(result.state, ckpt, tok.digest())
    write_run_csv(result.record, out / "run.csv", cfg.run.log_stride)
    write_run_meta(result.record, out / "run.meta")

    row = {
        "name": cfg.run.name,
        "layers": cfg.model.variant.layer_count,
        "blocks": cfg.model.n_blocks,
        "d_model": cfg.model.d_model,
        "params": param_count(cfg.model).total,
        "loss_mean": "",
        "loss_se": "",
        "wall_clock_s": f"{result.record.meta['wall_clock_s']:.3f}",
    }
    if cfg.data.test:
        test_ds = packed_split(cfg, tok, "test", cache_dir)
        report = evaluate(result.weights, cfg.model, test_ds, cfg.data.batch_size,
                          cfg.run.eval_mode)
        write_eval(report, out)
        row["loss_mean"] = repr(report.mean)
        row["loss_se"] = repr(report.se)
    return row


def matrix_configs(base: RunConfig, names: list[str],
                   overrides: list[str] | None = None) -> list[RunConfig]:
    check_presets()
    cfgs = []
    for name in resolve(names):
        cfg = replace(base, model=PRESETS[name], run=replace(base.run, name=name))
        cfgs.append(apply_overrides(cfg, overrides or []))
    return cfgs


def _execute_isolated(args):
    cfg, out_dir = args
    return execute_run(cfg, out_dir)


def run_matrix(base: RunConfig, names: list[str], out_root: str | Path,
               overrides: list[str] | None = None, dry_run: bool = False,
               jobs: int = 1) -> Path:
    """Run each preset in its own directory and collect ``results.csv``.

    Presets share one tokenizer and packed cache per dataset. ``dry_run``
    validates every configuration and writes parameter counts only.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    cfgs = matrix_configs(base, names, overrides)
    rows: list[dict] = []
    if dry_run:
        for cfg in cfgs:
            rows.append({"name": cfg.run.name, "layers": cfg.model.variant.layer_count,
                         "blocks": cfg.model.n_blocks, "d_model": cfg.model.d_model,
                         "params": param_count(cfg.model).total, "loss_mean": "",
                         "loss_se": "", "wall_clock_s": ""})
    else:
        shared_tok = out_root / "tokenizer.bpe"
        cache = out_root / "cache"
        # train the shared tokenizer once, up front
        obtain_tokenizer(replace(cfgs[0], data=replace(cfgs[0].data, tokenizer=str(shared_tok))),
                         out_root)
        cfgs = [replace(c, data=replace(c.data, tokenizer=str(shared_tok), cache_dir=str(cache)))
                for c in cfgs]
        tok = tk.load(shared_tok)
        for c in cfgs:  # fill shared caches before any worker reads them
            packed_split(c, tok, "train", cache)
            if c.data.test:
                packed_split(c, tok, "test", cache)
        work = [(c, out_root / c.run.name) for c in cfgs]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                rows = list(ex.map(_execute_isolated, work))
        else:
            rows = [_execute_isolated(w) for w in work]
    path = out_root / "results.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return path
