"""Test-set loss with batch-level standard errors, and two-sample significance."""

from __future__ import annotations

import csv
import math
import re
import statistics
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ffnlab import autograd as ag
from ffnlab.data import PackedDataset, batches
from ffnlab.model import ModelConfig, ModelWeights, model_forward

Z_CRIT_5PCT = 1.959963984540054  # two-sided 5% normal quantile


@dataclass(frozen=True)
class EvalReport:
    batch_means: tuple[float, ...]
    mean: float
    se: float

    @property
    def num_batches(self) -> int:
        return len(self.batch_means)

    def summary_line(self) -> str:
        return f"mean={self.mean!r} se={self.se!r} n={self.num_batches}"


def report_from_batches(batch_means, ddof: int = 1) -> EvalReport:
    """Mean and standard error (stddev / sqrt(k)) across per-batch mean losses.

    ``ddof=1`` is the sample stddev; ``ddof=0`` the population form. A single
    batch has no spread estimate, so its SE is reported as 0 with a warning.
    """
    x = [float(v) for v in batch_means]
    if not x:
        raise ValueError("no batches to summarize")
    mean = statistics.fmean(x)
    if len(x) == 1:
        warnings.warn("single evaluation batch: standard error reported as 0", stacklevel=2)
        return EvalReport(tuple(x), mean, 0.0)
    # rescale deviations so nearly equal batch means cannot underflow to zero spread
    dev = [v - mean for v in x]
    top = max(abs(v) for v in dev)
    if top == 0.0:
        sd = 0.0
    else:
        unit = [v / top for v in dev]
        sd = top * (statistics.stdev(unit) if ddof == 1 else statistics.pstdev(unit))
    return EvalReport(tuple(x), mean, sd / math.sqrt(len(x)))


def evaluate(weights: ModelWeights, config: ModelConfig, dataset: PackedDataset,
             batch_size: int = 16, mode: str = "sequence") -> EvalReport:
    """Eval-mode mean cross-entropy.

    ``mode="sequence"`` averages each sequence's positions first, then the
    sequences in a batch; ``mode="token"`` pools every position in the batch.
    With equal-length packed sequences the two agree.
    """
    if mode not in ("sequence", "token"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(dataset) == 0:
        raise ValueError("empty test set")
    means = []
    with ag.no_grad():
        for rows in batches(dataset, batch_size, shuffle_seed=None):
            logits = model_forward(rows[:, :-1], weights, config, train=False)
            losses = ag.token_losses(logits.data.astype(np.float64), rows[:, 1:])
            if mode == "sequence":
                means.append(float(losses.mean(axis=1).mean()))
            else:
                means.append(float(losses.mean()))
    return report_from_batches(means)


@dataclass(frozen=True)
class ComparisonResult:
    difference: float
    pooled_se: float
    z: float
    significant: bool


def compare(a: EvalReport | tuple[float, float], b: EvalReport | tuple[float, float],
            alpha_z: float = Z_CRIT_5PCT) -> ComparisonResult:
    """Two-sided z-test on the difference of two independent means."""
    ma, sa = (a.mean, a.se) if isinstance(a, EvalReport) else a
    mb, sb = (b.mean, b.se) if isinstance(b, EvalReport) else b
    diff = ma - mb
    pooled = math.sqrt(sa * sa + sb * sb)
    if pooled == 0.0:
        if diff == 0.0:
            return ComparisonResult(0.0, 0.0, 0.0, False)
        raise ValueError("cannot test a nonzero difference with zero standard errors")
    z = diff / pooled
    return ComparisonResult(diff, pooled, z, abs(z) > alpha_z)


def write_eval(report: EvalReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch_index", "batch_mean"])
        for i, m in enumerate(report.batch_means):
            w.writerow([i, repr(m)])
    summary = out / "eval.summary"
    summary.write_text(report.summary_line() + "\n")
    return summary


_SUMMARY = re.compile(r"mean=(\S+)\s+se=(\S+)\s+n=(\d+)")


def read_summary(path: str | Path) -> tuple[float, float, int]:
    text = Path(path).read_text()
    m = _SUMMARY.search(text)
    if not m:
        raise ValueError(f"{path}: no 'mean=<x> se=<y> n=<k>' line")
    return float(m.group(1)), float(m.group(2)), int(m.group(3))
