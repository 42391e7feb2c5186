"""Parameter accounting and budget-matched configuration search."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from ffnlab.model import FfnVariant, ModelConfig, ModelWeights, parameter_layout


@dataclass(frozen=True)
class ParamBreakdown:
    per_block_mha: int
    per_block_ffn: int
    per_block_norms: int
    n_blocks: int
    embeddings_in: int
    positional: int
    head: int
    final_norm: int

    @property
    def per_block(self) -> int:
        return self.per_block_mha + self.per_block_ffn + self.per_block_norms

    @property
    def total(self) -> int:
        return (self.n_blocks * self.per_block + self.embeddings_in + self.positional
                + self.head + self.final_norm)


def ffn_params(variant: FfnVariant, d: int) -> int:
    """Closed-form FFN parameter count (weights and biases) for width ``d``."""
    n = variant.layer_count
    if n == 3:
        return 24 * d * d + 9 * d
    if n == 2:
        m = variant.width_multiple
        return 2 * m * d * d + (m + 1) * d
    if n == 1:
        return d * d + d
    if n == 0:
        return 0
    raise ValueError(f"invalid variant {variant}")


def param_count(config: ModelConfig) -> ParamBreakdown:
    d, v, L = config.d_model, config.vocab_size, config.seq_len
    return ParamBreakdown(
        per_block_mha=4 * d * d + 4 * d,
        per_block_ffn=ffn_params(config.variant, d),
        per_block_norms=4 * d,
        n_blocks=config.n_blocks,
        embeddings_in=v * d,
        positional=L * d,
        head=v * d + v,
        final_norm=2 * d,
    )


def enumerate_count(source: ModelWeights | ModelConfig) -> int:
    """Sum of element counts over every parameter tensor.

    Given built weights, counts the allocated arrays. Given a config, counts
    the tensor layout the model would allocate, which lets full-size
    configurations be checked without materializing them.
    """
    if isinstance(source, ModelWeights):
        return sum(t.size for _, t in source.named_parameters())
    total = 0
    for _, shape, _ in parameter_layout(source):
        n = 1
        for s in shape:
            n *= s
        total += n
    return total


@dataclass(frozen=True)
class Candidate:
    config: ModelConfig
    total: int
    deviation: float


@dataclass
class MatchResult:
    target: int
    tolerance: float
    candidates: list[Candidate] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.candidates

    def values(self, attr: str) -> list[int]:
        return [getattr(c.config, attr) for c in self.candidates]


def _check_band(target: int, tolerance: float) -> None:
    if target <= 0:
        raise ValueError("target must be positive")
    if not 0 < tolerance <= 0.1:
        raise ValueError(f"tolerance must be in (0, 0.1], got {tolerance}")


def _collect(configs, target: int, tolerance: float) -> MatchResult:
    res = MatchResult(target, tolerance)
    hi = target * (1 + tolerance)
    for cfg in configs:
        total = param_count(cfg).total
        if total > hi:
            break  # counts grow monotonically along the search axis
        dev = (total - target) / target
        if abs(dev) <= tolerance:
            res.candidates.append(Candidate(cfg, total, dev))
    res.candidates.sort(key=lambda c: (abs(c.deviation), c.total))
    return res


def match_width(variant: FfnVariant, n_blocks: int, target: int, tolerance: float = 0.03,
                head_div: int = 16, base: ModelConfig | None = None) -> MatchResult:
    """All d_model multiples of ``head_div`` whose total is within the band."""
    _check_band(target, tolerance)
    base = base or ModelConfig(n_blocks=n_blocks, d_model=head_div, n_heads=head_div)
    base = replace(base, n_blocks=n_blocks, variant=variant, n_heads=head_div, d_model=head_div)

    def gen():
        d = head_div
        while True:
            yield replace(base, d_model=d)
            d += head_div

    return _collect(gen(), target, tolerance)


def match_depth(variant: FfnVariant, d_model: int, target: int, tolerance: float = 0.03,
                base: ModelConfig | None = None) -> MatchResult:
    """All block counts whose total is within the band at fixed width."""
    _check_band(target, tolerance)
    base = base or ModelConfig(n_blocks=1, d_model=d_model)
    base = replace(base, variant=variant, d_model=d_model)

    def gen():
        b = 1
        while True:
            yield replace(base, n_blocks=b)
            b += 1

    return _collect(gen(), target, tolerance)


def ratio_ffn_to_mha(variant: FfnVariant) -> Fraction:
    """FFN weight-matrix count over the query/key/value weights (3 d^2), biases excluded."""
    d = 1
    ffn = sum(fi * fo for fi, fo in variant.layer_shapes(d))
    return Fraction(ffn, 3 * d * d)
