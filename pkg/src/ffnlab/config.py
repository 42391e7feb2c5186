"""Run configuration files.

Grammar: INI-style sections ``[model]``, ``[schedule]``, ``[data]``, ``[run]``
holding ``key = value`` lines. ``#`` starts a comment, at line start or
after whitespace. Unknown sections or keys are errors. Lists (corpus paths)
are comma separated. Every key is optional and falls back to the baseline
setting.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ffnlab.model import FfnVariant, ModelConfig
from ffnlab.optim import TrainSchedule


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    tokenizer: str = ""
    cache_dir: str = ""
    batch_size: int = 16


@dataclass
class RunSection:
    name: str = "run"
    seed: int = 0
    output_dir: str = ""
    log_stride: int = 1
    checkpoint_stride: int = 0
    max_steps: int = 0
    dtype: str = "float32"
    eval_mode: str = "sequence"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(n_blocks=24, d_model=1024))
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        self.schedule.validate()
        if self.data.batch_size < 1:
            raise ConfigError("data.batch_size must be >= 1")
        if self.run.dtype not in ("float32", "float64"):
            raise ConfigError("run.dtype must be float32 or float64")
        if self.run.eval_mode not in ("sequence", "token"):
            raise ConfigError("run.eval_mode must be sequence or token")
        if self.run.log_stride < 1 or self.run.checkpoint_stride < 0 or self.run.max_steps < 0:
            raise ConfigError("run strides must be >= 1 (log) / >= 0 (checkpoint, max_steps)")


MODEL_KEYS = ("layers", "width_multiple", "n_blocks", "d_model", "n_heads",
              "vocab_size", "seq_len", "dropout")


def model_to_dict(cfg: ModelConfig) -> dict:
    return {
        "layers": cfg.variant.layer_count,
        "width_multiple": cfg.variant.width_multiple,
        "n_blocks": cfg.n_blocks,
        "d_model": cfg.d_model,
        "n_heads": cfg.n_heads,
        "vocab_size": cfg.vocab_size,
        "seq_len": cfg.seq_len,
        "dropout": cfg.dropout_p,
    }


def model_from_dict(d: dict) -> ModelConfig:
    unknown = set(d) - set(MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    base = model_to_dict(ModelConfig(n_blocks=24, d_model=1024))
    base.update(d)
    try:
        return ModelConfig(
            n_blocks=int(base["n_blocks"]),
            d_model=int(base["d_model"]),
            variant=FfnVariant(int(base["layers"]), int(base["width_multiple"])),
            n_heads=int(base["n_heads"]),
            vocab_size=int(base["vocab_size"]),
            seq_len=int(base["seq_len"]),
            dropout_p=float(base["dropout"]),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def config_digest(cfg: ModelConfig) -> str:
    blob = json.dumps(model_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, list):
        return ", ".join(v)
    if v is None:
        return "auto"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "optint":
            return None if raw in ("", "auto") else int(raw)
        if kind is list:
            return [p.strip() for p in raw.split(",") if p.strip()]
        return raw
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from e


def _section_kinds(obj_cls) -> dict[str, object]:
    kinds = {}
    for f in fields(obj_cls):
        t = str(f.type)
        if t.startswith("list"):
            kinds[f.name] = list
        elif "None" in t and "int" in t:
            kinds[f.name] = "optint"
        elif t == "int":
            kinds[f.name] = int
        elif t == "float":
            kinds[f.name] = float
        else:
            kinds[f.name] = str
    return kinds


def loads(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    allowed = {"model", "schedule", "data", "run"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")

    cfg = RunConfig()
    if cp.has_section("model"):
        cfg.model = model_from_dict({k: _coerce(str, v, k) for k, v in cp["model"].items()})

    for name, cls in (("schedule", TrainSchedule), ("data", DataSection), ("run", RunSection)):
        if not cp.has_section(name):
            continue
        kinds = _section_kinds(cls)
        values = {}
        for k, v in cp[name].items():
            if k not in kinds:
                raise ConfigError(f"unknown key {name}.{k}")
            values[k] = _coerce(kinds[k], v, f"{name}.{k}")
        setattr(cfg, name, cls(**values))
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def dumps(cfg: RunConfig) -> str:
    out = ["[model]"]
    out += [f"{k} = {_fmt(v)}" for k, v in model_to_dict(cfg.model).items()]
    for name in ("schedule", "data", "run"):
        out += ["", f"[{name}]"]
        out += [f"{k} = {_fmt(v)}" for k, v in asdict(getattr(cfg, name)).items()]
    return "\n".join(out) + "\n"


def load(path: str | Path) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
