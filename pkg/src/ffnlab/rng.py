"""Named, seeded Philox streams so every stochastic op is reproducible."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, name)``.

    Distinct names give statistically independent streams for the same seed,
    so e.g. dropout draws never perturb the shuffle order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(ss))


def get_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
