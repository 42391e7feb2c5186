"""Single-epoch training loop, run records and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
import time
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ffnlab import autograd as ag
from ffnlab.budget import enumerate_count
from ffnlab.config import config_digest, model_from_dict, model_to_dict
from ffnlab.data import PackedDataset, batches, num_batches
from ffnlab.model import ModelConfig, ModelWeights, init_model, model_forward
from ffnlab.optim import (AdamWState, NonFiniteGradientError, TrainSchedule, adamw_step,
                          lr_at_step)
from ffnlab.rng import get_state, set_state, stream

log = logging.getLogger(__name__)

CKPT_MAGIC = b"FFNLAB"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class StepLog:
    step: int
    tokens: int
    loss: float
    lr: float
    ms: float


@dataclass
class RunRecord:
    steps: list[StepLog] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def losses(self) -> list[float]:
        return [s.loss for s in self.steps]


@dataclass
class TrainState:
    config: ModelConfig
    weights: ModelWeights
    opt: AdamWState
    seed: int
    dropout_rng: np.random.Generator
    step: int = 0
    tokens: int = 0


@dataclass
class TrainResult:
    weights: ModelWeights
    record: RunRecord
    state: TrainState


def init_state(config: ModelConfig, seed: int, dtype=np.float32) -> TrainState:
    return TrainState(config, init_model(config, seed, dtype), AdamWState(), seed,
                      stream(seed, "dropout"))


def train_run(config: ModelConfig, schedule: TrainSchedule, dataset: PackedDataset, seed: int,
              *, batch_size: int = 16, dtype=np.float32, state: TrainState | None = None,
              max_steps: int | None = None, checkpoint_path: str | Path | None = None,
              checkpoint_stride: int = 0, tokenizer_hash: str | None = None,
              on_step: Callable[[StepLog], None] | None = None) -> TrainResult:
    """One epoch over the seeded shuffle of ``dataset``.

    Passing a ``state`` (e.g. from :func:`load_checkpoint`) resumes after
    ``state.step`` batches. ``max_steps`` stops early without changing the
    learning-rate curve, which is always laid out over the full epoch.
    """
    if dataset.seq_len > config.seq_len:
        raise ValueError(f"dataset seq_len {dataset.seq_len} > model seq_len {config.seq_len}")
    if len(dataset) and int(dataset.rows.max()) >= config.vocab_size:
        raise ValueError("dataset contains ids outside the model vocabulary")
    total = num_batches(len(dataset), batch_size)
    if total == 0:
        raise ValueError("empty training set")
    if schedule.total_steps is None:
        schedule = replace(schedule, total_steps=total)
    if schedule.warmup_steps > schedule.total_steps:
        log.warning("warmup_steps=%d exceeds the %d-step epoch; clamping warmup to the epoch",
                    schedule.warmup_steps, schedule.total_steps)
        schedule = replace(schedule, warmup_steps=schedule.total_steps)
    schedule.validate()
    if state is None:
        state = init_state(config, seed, dtype)
    weights = state.weights
    params = dict(weights.named_parameters())

    record = RunRecord(meta={
        "config": model_to_dict(config),
        "config_digest": config_digest(config),
        "seed": seed,
        "params": enumerate_count(weights),
        "batch_size": batch_size,
        "total_steps": schedule.total_steps,
        "resumed_from_step": state.step,
        "start": datetime.now(timezone.utc).isoformat(),
    })
    t_start = time.perf_counter()
    for rows in batches(dataset, batch_size, shuffle_seed=seed, start=state.step):
        step = state.step + 1
        if max_steps is not None and step > max_steps:
            break
        t0 = time.perf_counter()
        logits = model_forward(rows[:, :-1], weights, config, train=True, rng=state.dropout_rng)
        loss = ag.cross_entropy_mean(logits, rows[:, 1:])
        loss_value = float(loss.data)
        try:
            if not math.isfinite(loss_value):
                raise NonFiniteGradientError(
                    f"non-finite loss at step {step} (vanishing/exploding gradient)")
            weights.zero_grad()
            ag.backward(loss)
            lr = lr_at_step(schedule, step)
            adamw_step(params, {n: t.grad for n, t in params.items()}, state.opt, lr, schedule)
        except NonFiniteGradientError:
            # parameters are untouched by the rejected step, so this state resumes cleanly
            if checkpoint_path is not None:
                save_checkpoint(state, checkpoint_path, tokenizer_hash)
            log.error("aborting at step %d: non-finite loss or gradient", step)
            raise
        del loss, logits
        state.step = step
        state.tokens += rows.shape[0] * dataset.seq_len
        entry = StepLog(step, state.tokens, loss_value, lr, 1000.0 * (time.perf_counter() - t0))
        record.steps.append(entry)
        if on_step is not None:
            on_step(entry)
        if checkpoint_path is not None and checkpoint_stride and step % checkpoint_stride == 0:
            save_checkpoint(state, checkpoint_path, tokenizer_hash)
    weights.zero_grad()
    record.meta.update(
        end=datetime.now(timezone.utc).isoformat(),
        wall_clock_s=time.perf_counter() - t_start,
        steps=len(record.steps),
        final_step=state.step,
        tokens=state.tokens,
    )
    return TrainResult(weights, record, state)


def write_run_csv(record: RunRecord, path: str | Path, stride: int = 1) -> None:
    """Every ``stride``-th step plus the final one."""
    last = len(record.steps) - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "tokens", "loss", "lr", "ms"])
        for i, s in enumerate(record.steps):
            if i % stride == 0 or i == last:
                w.writerow([s.step, s.tokens, repr(s.loss), repr(s.lr), f"{s.ms:.3f}"])


def read_run_csv(path: str | Path) -> list[StepLog]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"step", "tokens", "loss"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: not a run CSV (need step, tokens, loss columns)")
        for r in reader:
            try:
                rows.append(StepLog(int(r["step"]), int(r["tokens"]), float(r["loss"]),
                                    float(r.get("lr") or "nan"), float(r.get("ms") or "nan")))
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}: malformed row {r}") from e
    return rows


def write_run_meta(record: RunRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record.meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _rng_to_json(state: dict) -> dict:
    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, np.ndarray):
            return {"__array__": x.tolist(), "dtype": str(x.dtype)}
        if isinstance(x, np.integer):
            return int(x)
        return x

    return conv(state)


def _rng_from_json(state: dict) -> dict:
    def conv(x):
        if isinstance(x, dict):
            if "__array__" in x:
                return np.array(x["__array__"], dtype=x["dtype"])
            return {k: conv(v) for k, v in x.items()}
        return x

    return conv(state)


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    code = _DTYPE_CODES[arr.dtype]
    nb = name.encode()
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<BB", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def save_checkpoint(state: TrainState, path: str | Path, tokenizer_hash: str | None = None) -> None:
    """Header (magic, version, JSON metadata) followed by raw little-endian tensor records."""
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in state.weights.named_parameters():
        tensors.append((f"param/{name}", t.data))
    for name in state.opt.m:
        tensors.append((f"adam_m/{name}", state.opt.m[name]))
        tensors.append((f"adam_v/{name}", state.opt.v[name]))
    header = {
        "config": model_to_dict(state.config),
        "config_digest": config_digest(state.config),
        "param_count": enumerate_count(state.weights),
        "tokenizer_hash": tokenizer_hash,
        "seed": state.seed,
        "step": state.step,
        "tokens": state.tokens,
        "opt_step": state.opt.step,
        "rng": {"dropout": _rng_to_json(get_state(state.dropout_rng))},
        "n_tensors": len(tensors),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for name, arr in tensors:
            _write_tensor(fh, name, arr)
    tmp.replace(path)


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(len(CKPT_MAGIC) + 6)
        r = _Reader(raw, path)
        _check_magic(r, path)
        (hlen,) = r.unpack("<I")
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise ValueError(f"{path}: truncated checkpoint")
    return json.loads(blob)


def _check_magic(r: _Reader, path) -> None:
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<H")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")


def load_checkpoint(path: str | Path, tokenizer_hash: str | None = None) -> TrainState:
    r = _Reader(Path(path).read_bytes(), path)
    _check_magic(r, path)
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: corrupt checkpoint header") from e
    if tokenizer_hash is not None and header.get("tokenizer_hash") not in (None, tokenizer_hash):
        raise ValueError(f"{path}: checkpoint was trained with a different tokenizer")
    config = model_from_dict(header["config"])
    if config_digest(config) != header["config_digest"]:
        raise ValueError(f"{path}: config digest mismatch")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(header["n_tensors"]):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q")
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        arrays[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if r.pos != len(r.raw):
        raise ValueError(f"{path}: trailing bytes after tensor records")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    try:
        weights = ModelWeights.from_arrays(config, params)
    except KeyError as e:
        raise ValueError(f"{path}: missing parameter {e}") from e
    if enumerate_count(weights) != header["param_count"]:
        raise ValueError(f"{path}: parameter count mismatch")
    opt = AdamWState(step=header["opt_step"])
    for k, v in arrays.items():
        if k.startswith("adam_m/"):
            opt.m[k[len("adam_m/"):]] = v
        elif k.startswith("adam_v/"):
            opt.v[k[len("adam_v/"):]] = v
    rng = stream(header["seed"], "dropout")
    set_state(rng, _rng_from_json(header["rng"]["dropout"]))
    return TrainState(config, weights, opt, header["seed"], rng, header["step"], header["tokens"])
