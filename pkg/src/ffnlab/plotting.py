"""Training-curve figures, written next to the data that produced them."""

from __future__ import annotations

import csv
import json
from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ffnlab.trainer import StepLog  # noqa: E402


def plot_runs(runs: Mapping[str, Sequence[StepLog]], prefix: str | Path,
              title: str = "Training loss") -> dict[str, Path]:
    """Loss vs tokens on a log loss axis, one line per run.

    Writes ``<prefix>.png``, the merged long-format ``<prefix>.csv`` and a
    ``<prefix>.json`` description (axis scales, series, first points) so the
    figure can be checked without reading pixels.
    """
    if not runs:
        raise ValueError("need at least one run")
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {k: prefix.with_suffix(f".{k}") for k in ("png", "csv", "json")}

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, steps in runs.items():
        ax.plot([s.tokens for s in steps], [s.loss for s in steps], label=name, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("tokens")
    ax.set_ylabel("training loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)

    desc = {
        "xscale": ax.get_xscale(),
        "yscale": ax.get_yscale(),
        "yticks": [float(t) for t in ax.get_yticks()],
        "legend": [t.get_text() for t in ax.get_legend().get_texts()],
        "series": [
            {"name": name, "points": len(steps),
             "first": [steps[0].tokens, steps[0].loss] if steps else None}
            for name, steps in runs.items()
        ],
    }
    plt.close(fig)

    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "step", "tokens", "loss", "lr"])
        for name, steps in runs.items():
            for s in steps:
                w.writerow([name, s.step, s.tokens, repr(s.loss), repr(s.lr)])
    paths["json"].write_text(json.dumps(desc, indent=2) + "\n")
    return paths
