"""Round gating, client sampling, and exact participation probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Sequence

import numpy as np

from .numerics import SERVER, lane_rng


def exact(delta) -> Fraction:
    """``delta`` as a Fraction; floats go through their shortest repr so 0.2 is 1/5."""
    if isinstance(delta, Fraction):
        return delta
    if isinstance(delta, float):
        return Fraction(repr(delta))
    return Fraction(delta)


def good_threshold(C: int, delta) -> int:
    """Smallest good count ``t`` with ``t >= (1 - delta) C``."""
    return math.ceil((1 - exact(delta)) * C)


def min_chat(n: int, B: int, delta) -> int:
    """Smallest admissible large-cohort size ``max(1, ceil(B / delta))``."""
    if B == 0:
        return 1
    d = exact(delta)
    if d <= 0:
        raise ValueError("delta must be positive when Byzantine clients exist")
    return max(1, math.ceil(Fraction(B) / d))


@dataclass(frozen=True)
class ParticipationConfig:
    n: int
    G: int
    C: int
    Chat: int
    p: float
    delta: float

    def __post_init__(self):
        if not 1 <= self.C <= self.Chat <= self.n:
            raise ValueError(f"need 1 <= C <= Chat <= n, got C={self.C}, Chat={self.Chat}, n={self.n}")
        if not 0 <= self.G <= self.n:
            raise ValueError("need 0 <= G <= n")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if not 0.0 <= self.delta < 0.5:
            raise ValueError("delta must lie in [0, 1/2)")
        B = self.n - self.G
        if Fraction(B, self.n) > exact(self.delta):
            raise ValueError(f"delta={self.delta} is below the real Byzantine fraction {B}/{self.n}")
        if self.Chat < min_chat(self.n, B, self.delta):
            raise ValueError(f"Chat={self.Chat} below the minimum {min_chat(self.n, B, self.delta)}")

    @property
    def B(self) -> int:
        return self.n - self.G


@dataclass(frozen=True)
class RoundPlan:
    k: int
    c: int
    cohort: tuple[int, ...]  # sorted client ids
    batches: dict[int, np.ndarray] = field(default_factory=dict)


def sample_cohort(n: int, size: int, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(sorted(int(i) for i in rng.choice(n, size=size, replace=False)))


def sample_round(
    cfg: ParticipationConfig,
    k: int,
    seed: int,
    batch_size: int = 1,
    n_samples: Sequence[int] | None = None,
    force_full: bool = False,
) -> RoundPlan:
    """Draw ``c_k``, the cohort ``S_k`` and (for ``c_k = 0``) per-client minibatches.

    Each piece has its own lane, so e.g. the batch size never changes which
    clients get sampled. Minibatches are drawn with replacement.
    ``force_full`` skips the gate and takes ``c_k = 1``.
    """
    if force_full:
        c = 1
    else:
        c = int(lane_rng(seed, k, SERVER, "gate").random() < cfg.p)
    size = cfg.Chat if c == 1 else cfg.C
    cohort = tuple(range(cfg.n)) if size == cfg.n else sample_cohort(cfg.n, size, lane_rng(seed, k, SERVER, "cohort"))
    batches: dict[int, np.ndarray] = {}
    if c == 0 and n_samples is not None:
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        for i in cohort:
            batches[i] = lane_rng(seed, k, i, "batch").integers(0, n_samples[i], size=batch_size)
    return RoundPlan(k, c, cohort, batches)


def _check(n: int, G: int, C: int, delta) -> None:
    if not 0 <= G <= n:
        raise ValueError("need 0 <= G <= n")
    if not 1 <= C <= n:
        raise ValueError("need 1 <= C <= n")
    if not 0 <= exact(delta) < Fraction(1, 2):
        raise ValueError("need 0 <= delta < 1/2")


def prob_good_majority(n: int, G: int, C: int, delta) -> Fraction:
    """``P{#good in a uniform C-subset >= (1 - delta) C}`` (hypergeometric tail)."""
    _check(n, G, C, delta)
    t0 = good_threshold(C, delta)
    total = sum(comb(G, t) * comb(n - G, C - t) for t in range(t0, C + 1))
    return Fraction(total, comb(n, C))


def prob_in_good_sample(n: int, G: int, C: int, delta) -> Fraction:
    """``P{a fixed good client is sampled | good majority}``."""
    _check(n, G, C, delta)
    if G < 1:
        raise ValueError("need G >= 1")
    pg = prob_good_majority(n, G, C, delta)
    if pg == 0:
        raise ZeroDivisionError("conditioning event has probability zero")
    t0 = good_threshold(C, delta)
    s = sum(comb(G - 1, t - 1) * comb(n - G, C - t) for t in range(max(t0, 1), C + 1))
    return Fraction(C, n) / pg * Fraction(s, comb(n - 1, C - 1))
