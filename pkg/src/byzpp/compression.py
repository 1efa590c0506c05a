"""Unbiased compressors and their constants.

omega: ``E||Q(x) - x||^2 <= omega ||x||^2``
dq_bound: ``||Q(x)|| <= D_Q ||x||`` for every draw
expected_density: ``sup_x E[nnz(Q(x))]``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_vector, norm

IDENTITY = "identity"
RANDK = "randk"
L2_QUANT = "l2quant"
KINDS = (IDENTITY, RANDK, L2_QUANT)


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    d: int
    K: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor {self.kind!r}; expected one of {KINDS}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.kind == RANDK:
            if self.K is None or not 1 <= self.K <= self.d:
                raise ValueError(f"RandK needs 1 <= K <= d, got K={self.K}, d={self.d}")

    @classmethod
    def identity(cls, d: int) -> "CompressorSpec":
        return cls(IDENTITY, d)

    @classmethod
    def randk(cls, d: int, K: int) -> "CompressorSpec":
        return cls(RANDK, d, K)

    @classmethod
    def l2_quantization(cls, d: int) -> "CompressorSpec":
        return cls(L2_QUANT, d)


def _randk_supports(d: int, K: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """``draws`` independent uniform K-subsets via a partial Fisher-Yates shuffle per row."""
    idx = np.tile(np.arange(d), (draws, 1))
    u = rng.random((draws, K))
    rows = np.arange(draws)
    for i in range(K):
        j = i + (u[:, i] * (d - i)).astype(np.intp)
        a, b = idx[rows, i].copy(), idx[rows, j]
        idx[rows, i] = b
        idx[rows, j] = a
    return idx[:, :K]


def compress_many(spec: CompressorSpec, x, draws: int, rng: np.random.Generator) -> np.ndarray:
    """``draws`` independent compressions of ``x``, one per row."""
    x = as_vector(x, spec.d)
    if spec.kind == IDENTITY:
        return np.tile(x, (draws, 1))
    if spec.kind == RANDK:
        keep = _randk_supports(spec.d, spec.K, draws, rng)
        out = np.zeros((draws, spec.d))
        rows = np.arange(draws)[:, None]
        out[rows, keep] = x[keep] * (spec.d / spec.K)
        return out
    nx = norm(x)
    if nx == 0.0:
        return np.zeros((draws, spec.d))
    u = rng.random((draws, spec.d))
    return np.where(u < np.abs(x) / nx, nx * np.sign(x), 0.0)


def compress(spec: CompressorSpec, x, rng: np.random.Generator) -> np.ndarray:
    """One draw of the compressor.

    RandK keeps K uniformly chosen coordinates scaled by d/K. The l2 scheme
    sends ``||x|| sign(x_i)`` for coordinate i with probability ``|x_i|/||x||``.
    """
    return compress_many(spec, x, 1, rng)[0]


def omega(spec: CompressorSpec) -> float:
    if spec.kind == IDENTITY:
        return 0.0
    if spec.kind == RANDK:
        return spec.d / spec.K - 1.0
    return math.sqrt(spec.d) - 1.0


def dq_bound(spec: CompressorSpec) -> float:
    if spec.kind == IDENTITY:
        return 1.0
    if spec.kind == RANDK:
        return spec.d / spec.K
    return math.sqrt(spec.d)


def expected_density(spec: CompressorSpec) -> float:
    if spec.kind == IDENTITY:
        return float(spec.d)
    if spec.kind == RANDK:
        return float(spec.K)
    return math.sqrt(spec.d)


def transmitted_coords(spec: CompressorSpec, q: np.ndarray) -> int:
    """Communication proxy: number of coordinates a message carries."""
    if spec.kind == IDENTITY:
        return spec.d
    return int(np.count_nonzero(q))
