"""Robust aggregation rules, bucketing, and their norm-bound constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import squared_distance_mean

MEAN = "mean"
CM = "cm"
GM = "gm"
KRUM = "krum"
TRIMMED_MEAN = "tm"
RULES = (MEAN, CM, GM, KRUM, TRIMMED_MEAN)


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregation rule plus optional bucketing (``bucket_size > 1``).

    ``krum_byzantine`` fixes Krum's assumed Byzantine count; when ``None`` it
    is ``ceil(delta * m)`` for ``m`` inputs reaching Krum.
    """

    rule: str = MEAN
    bucket_size: int = 1
    delta: float = 0.0
    krum_byzantine: int | None = None
    trim: float = 0.1
    gm_max_iters: int = 100
    gm_tol: float = 1e-10
    gm_eps: float = 1e-12

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}; expected one of {RULES}")
        if self.bucket_size < 1:
            raise ValueError("bucket size must be >= 1")
        if not 0.0 <= self.trim < 0.5:
            raise ValueError("trim fraction must lie in [0, 1/2)")
        if not 0.0 <= self.delta < 0.5:
            raise ValueError("delta must lie in [0, 1/2)")
        if self.krum_byzantine is not None and self.krum_byzantine < 0:
            raise ValueError("krum_byzantine must be nonnegative")


def _stack(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if len(inputs) == 0:
        raise AggregationError("no inputs to aggregate")
    try:
        X = np.stack([np.asarray(v, dtype=np.float64) for v in inputs])
    except ValueError:
        raise AggregationError("inputs have different dimensions") from None
    if X.ndim != 2:
        raise AggregationError("inputs must be vectors")
    return X


def coordinate_median(X: np.ndarray) -> np.ndarray:
    return np.median(X, axis=0)


def trimmed_mean(X: np.ndarray, trim: float) -> np.ndarray:
    m = X.shape[0]
    k = int(math.floor(trim * m))
    S = np.sort(X, axis=0)
    return S[k : m - k].mean(axis=0)


def geometric_median(X: np.ndarray, max_iters: int = 100, tol: float = 1e-10, eps: float = 1e-12) -> np.ndarray:
    """Weiszfeld iterations from the mean, weights ``1 / (||z - x_i|| + eps)``."""
    z = X.mean(axis=0)
    for _ in range(max_iters):
        dist = np.sqrt(np.einsum("ij,ij->i", X - z, X - z))
        w = 1.0 / (dist + eps)
        z_new = (w @ X) / w.sum()
        moved = np.sqrt(np.dot(z_new - z, z_new - z))
        z = z_new
        if moved <= tol:
            break
    return z


def krum(X: np.ndarray, byzantine: int) -> np.ndarray:
    m = X.shape[0]
    k = m - byzantine - 2
    if k < 1:
        raise AggregationError(f"Krum infeasible: m - B - 2 = {k} < 1 (m={m}, B={byzantine})")
    diff = X[:, None, :] - X[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(D, np.inf)
    scores = np.sort(D, axis=1)[:, :k].sum(axis=1)
    return X[int(np.argmin(scores))].copy()  # argmin keeps the lowest index on ties


def bucketing(inputs: Sequence[np.ndarray], s: int, rng: np.random.Generator, perm: np.ndarray | None = None) -> list[np.ndarray]:
    """Means of consecutive groups of ``s`` inputs after a random permutation.

    Returns ``ceil(n/s)`` vectors; the last group may hold fewer than ``s``.
    """
    X = _stack(inputs)
    if s < 1:
        raise ValueError("bucket size must be >= 1")
    n = X.shape[0]
    if perm is None:
        perm = rng.permutation(n)
    P = X[perm]
    return [P[i : i + s].mean(axis=0) for i in range(0, n, s)]


def _base(spec: AggregatorSpec, X: np.ndarray) -> np.ndarray:
    if spec.rule == MEAN:
        return X.mean(axis=0)
    if spec.rule == CM:
        return coordinate_median(X)
    if spec.rule == TRIMMED_MEAN:
        return trimmed_mean(X, spec.trim)
    if spec.rule == GM:
        return geometric_median(X, spec.gm_max_iters, spec.gm_tol, spec.gm_eps)
    B = spec.krum_byzantine
    if B is None:
        B = math.ceil(spec.delta * X.shape[0])
    return krum(X, B)


def aggregate(spec: AggregatorSpec, inputs: Sequence[np.ndarray], rng: np.random.Generator | None = None) -> np.ndarray:
    X = _stack(inputs)
    if spec.bucket_size > 1:
        if rng is None:
            raise ValueError("bucketing needs a random generator")
        X = np.stack(bucketing(X, spec.bucket_size, rng))
    return _base(spec, X)


def f_a_constant(spec: AggregatorSpec, d: int) -> float:
    """``F_A`` with ``||Agg(x_1..x_m)|| <= F_A max ||x_i||``; bucketing leaves it unchanged."""
    return math.sqrt(d) if spec.rule == CM else 1.0


@dataclass(frozen=True)
class RaggReport:
    trials: int
    mean_error: float  # E||agg - good mean||^2
    mean_sigma2: float  # E[pairwise variance of good inputs]
    delta: float  # mean Byzantine fraction
    ratio: float  # mean_error / (delta * mean_sigma2), i.e. implied c
    degenerate: bool


def empirical_ragg_check(
    spec: AggregatorSpec,
    generator: Callable[[np.random.Generator], tuple[Sequence[np.ndarray], Sequence[bool]]],
    trials: int,
    rng: np.random.Generator,
) -> RaggReport:
    """Monte-Carlo estimate of the aggregation error against ``delta * sigma^2``.

    ``generator(rng)`` returns ``(inputs, good_mask)``. A zero denominator with
    a nonzero error is reported as ``degenerate`` with ``ratio = inf``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    errs, sig, dels = [], [], []
    for _ in range(trials):
        inputs, mask = generator(rng)
        mask = np.asarray(mask, dtype=bool)
        X = _stack(inputs)
        good = X[mask]
        xbar = good.mean(axis=0)
        out = aggregate(spec, X, rng)
        errs.append(float(np.sum((out - xbar) ** 2)))
        sig.append(squared_distance_mean(list(good)) if good.shape[0] >= 2 else 0.0)
        dels.append(1.0 - mask.mean())
    mean_err, mean_sig, delta = float(np.mean(errs)), float(np.mean(sig)), float(np.mean(dels))
    denom = delta * mean_sig
    if mean_err == 0.0:
        ratio, degenerate = 0.0, False
    elif denom == 0.0:
        ratio, degenerate = math.inf, True
    else:
        ratio, degenerate = mean_err / denom, False
    return RaggReport(trials, mean_err, mean_sig, delta, ratio, degenerate)
