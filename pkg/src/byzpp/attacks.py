"""Byzantine worker behaviours.

All attackers collude: they see every honest message of the round, the
current iterate and the server estimator, but none of the server's draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .sampling import good_threshold

NONE = "none"
BIT_FLIPPING = "bf"
LABEL_FLIPPING = "lf"
ALIE = "alie"
SHIFT_BACK = "shb"
KINDS = (NONE, BIT_FLIPPING, LABEL_FLIPPING, ALIE, SHIFT_BACK)


class AttackContextError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str = NONE
    z: float = 1.0  # ALIE multiplier

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        if self.z < 0:
            raise ValueError("ALIE multiplier must be nonnegative")

    @property
    def flips_labels(self) -> bool:
        return self.kind == LABEL_FLIPPING


@dataclass
class AttackContext:
    """What a Byzantine worker knows when composing its message.

    ``x`` is the point the round's messages are computed at (``x^{k+1}``),
    ``g`` the server estimator broadcast this round (``g^k``).
    """

    k: int
    c: int
    x0: np.ndarray | None = None
    x: np.ndarray | None = None
    g: np.ndarray | None = None
    gamma: float | None = None
    good_messages: Sequence[np.ndarray] | None = None
    byz_majority: bool | None = None
    honest_message: np.ndarray | None = None


def _need(ctx: AttackContext, *names: str) -> None:
    missing = [n for n in names if getattr(ctx, n) is None]
    if missing:
        raise AttackContextError(f"attack context is missing {', '.join(missing)}")


def is_majority(sampled: Collection[int], good: Collection[int], delta) -> bool:
    """True when the sampled good count is below ``ceil((1 - delta) |S|)``."""
    if len(sampled) == 0:
        raise ValueError("empty cohort")
    good = set(good)
    n_good = sum(1 for i in sampled if i in good)
    return n_good < good_threshold(len(sampled), delta)


def shift_back_payload(ctx: AttackContext) -> np.ndarray:
    """Message that, if the aggregator outputs it, puts the next iterate at ``x0``.

    Full-gradient rounds set ``g^{k+1} = Agg``; difference rounds set
    ``g^{k+1} = g^k + Agg``; then ``x^{k+2} = x^{k+1} - gamma g^{k+1}``.
    """
    _need(ctx, "x0", "x", "gamma")
    target = (ctx.x - ctx.x0) / ctx.gamma
    if ctx.c == 1:
        return target
    _need(ctx, "g")
    return target - ctx.g


def byzantine_message(spec: AttackSpec, ctx: AttackContext) -> np.ndarray:
    kind = spec.kind
    if kind in (NONE, LABEL_FLIPPING):
        # label flipping poisons the worker's data at setup; the protocol is followed
        _need(ctx, "honest_message")
        return np.array(ctx.honest_message, dtype=np.float64)
    if kind == BIT_FLIPPING:
        _need(ctx, "honest_message")
        return -np.asarray(ctx.honest_message, dtype=np.float64)
    if kind == ALIE:
        _need(ctx, "good_messages")
        if len(ctx.good_messages) == 0:
            raise AttackContextError("ALIE needs at least one good message")
        # per-coordinate sort makes the result exactly order independent
        M = np.sort(np.stack(ctx.good_messages), axis=0)
        return M.mean(axis=0) + spec.z * M.std(axis=0)
    _need(ctx, "byz_majority")
    if ctx.byz_majority:
        return shift_back_payload(ctx)
    _need(ctx, "honest_message")
    return np.array(ctx.honest_message, dtype=np.float64)
