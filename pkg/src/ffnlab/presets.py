"""Shipped configuration matrix with the published sizes and losses.

Two groups: ``layers`` varies the FFN layer count at matched budgets,
``widths`` varies two-layer FFN width and depth. ``baseline`` is in both.
"""

from __future__ import annotations

from dataclasses import dataclass

from ffnlab.budget import param_count
from ffnlab.model import FfnVariant, ModelConfig


@dataclass(frozen=True)
class PublishedRow:
    group: str
    preset: str
    layers: int
    width_multiple: int
    n_blocks: int
    d_model: int
    params_m: int
    booksum: tuple[float, float]
    wikitext: tuple[float, float]

    @property
    def config(self) -> ModelConfig:
        return ModelConfig(n_blocks=self.n_blocks, d_model=self.d_model,
                           variant=FfnVariant(self.layers, self.width_multiple))


# (mean loss, standard error) as published
PUBLISHED_ROWS: tuple[PublishedRow, ...] = (
    PublishedRow("layers", "3L-24-1024", 3, 4, 24, 1024, 726, (4.232, 0.002), (3.018, 0.014)),
    PublishedRow("layers", "3L-24-672", 3, 4, 24, 672, 318, (4.279, 0.002), (3.078, 0.014)),
    PublishedRow("layers", "3L-10-1024", 3, 4, 10, 1024, 314, (4.208, 0.002), (2.987, 0.014)),
    PublishedRow("layers", "baseline", 2, 4, 24, 1024, 323, (4.259, 0.002), (3.001, 0.014)),
    PublishedRow("layers", "1L-24-1024", 1, 4, 24, 1024, 147, (4.405, 0.002), (3.185, 0.014)),
    PublishedRow("layers", "1L-24-1568", 1, 4, 24, 1568, 327, (4.292, 0.002), (3.077, 0.014)),
    PublishedRow("layers", "1L-57-1024", 1, 4, 57, 1024, 320, (4.401, 0.002), (3.128, 0.014)),
    PublishedRow("layers", "0L-24-1024", 0, 4, 24, 1024, 121, (4.610, 0.002), (3.446, 0.013)),
    PublishedRow("layers", "0L-24-1728", 0, 4, 24, 1728, 322, (4.495, 0.002), (3.333, 0.013)),
    PublishedRow("layers", "0L-72-1024", 0, 4, 72, 1024, 322, (4.720, 0.002), (3.506, 0.013)),
    PublishedRow("widths", "baseline", 2, 4, 24, 1024, 323, (4.259, 0.002), (3.001, 0.014)),
    PublishedRow("widths", "2L4d-24-672", 2, 4, 24, 672, 144, (4.334, 0.002), (3.135, 0.013)),
    PublishedRow("widths", "2L4d-10-1024", 2, 4, 10, 1024, 147, (4.260, 0.002), (3.062, 0.014)),
    PublishedRow("widths", "2L2d-24-1024", 2, 2, 24, 1024, 222, (4.288, 0.002), (3.060, 0.014)),
    PublishedRow("widths", "2L2d-24-1248", 2, 2, 24, 1248, 324, (4.268, 0.002), (3.013, 0.014)),
)

# wall-clock A100 hours (Booksum, Wikitext); observational only
GPU_HOURS = {
    "3L-24-1024": (2.82, 9.93), "3L-24-672": (1.43, 5.07), "3L-10-1024": (1.23, 4.35),
    "baseline": (1.42, 4.98), "1L-24-1024": (0.77, 2.70), "1L-24-1568": (1.45, 5.13),
    "1L-57-1024": (1.68, 5.93), "0L-24-1024": (0.67, 2.37), "0L-24-1728": (1.38, 4.90),
    "0L-72-1024": (1.82, 6.40),
}

PRESETS: dict[str, ModelConfig] = {}
for _row in PUBLISHED_ROWS:
    PRESETS.setdefault(_row.preset, _row.config)

GROUPS = {
    g: [r.preset for r in PUBLISHED_ROWS if r.group == g] for g in ("layers", "widths")
}


def check_presets(tolerance: float = 0.01) -> None:
    """Each preset's count must round to its published size within ``tolerance``."""
    for row in PUBLISHED_ROWS:
        total = param_count(PRESETS[row.preset]).total
        rel = abs(total / 1e6 - row.params_m) / row.params_m
        if rel > tolerance:
            raise ValueError(
                f"preset {row.preset}: {total} params is {rel:.2%} off {row.params_m}M")


def row(preset: str, group: str = "layers") -> PublishedRow:
    for r in PUBLISHED_ROWS:
        if r.preset == preset and r.group == group:
            return r
    raise KeyError(f"no {group} row for preset {preset!r}")


def resolve(names: list[str]) -> list[str]:
    """Expand group names and ``all`` into ordered, de-duplicated preset names."""
    out: list[str] = []
    for n in names:
        if n in GROUPS:
            group = GROUPS[n]
        elif n == "all":
            group = GROUPS["layers"] + GROUPS["widths"]
        elif n in PRESETS:
            group = [n]
        else:
            raise KeyError(f"unknown preset {n!r}; choose from {sorted(PRESETS)}")
        for g in group:
            if g not in out:
                out.append(g)
    return out
