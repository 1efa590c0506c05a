"""Vector helpers, the clipping operator and per-lane random streams.

Vectors are plain 1-d ``numpy.ndarray`` of float64. Reductions go through
``numpy.sum`` which uses pairwise summation on contiguous data.
"""

from __future__ import annotations

import math
import zlib
from typing import Sequence

import numpy as np

SERVER = 2**32 - 1  # client slot used for server-side draws

__all__ = [
    "SERVER",
    "as_vector",
    "check_finite",
    "clip",
    "clip_factor",
    "lane_rng",
    "norm",
    "squared_distance_mean",
]


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a contiguous float64 vector, checking its dimension."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def check_finite(x: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return x


_SAFE_LO, _SAFE_HI = 1e-150, 1e150


def norm(x: np.ndarray) -> float:
    """Euclidean norm; rescales first when squaring would under- or overflow."""
    s = float(np.max(np.abs(x), initial=0.0))
    if s == 0.0 or math.isinf(s):
        return s
    if _SAFE_LO < s < _SAFE_HI:
        return float(np.sqrt(np.dot(x, x)))
    y = x / s
    return s * float(np.sqrt(np.dot(y, y)))


def clip_factor(x: np.ndarray, level: float) -> float:
    """Scale factor ``min(1, level/||x||)`` with ``clip(0) = 0`` semantics."""
    if level < 0:
        raise ValueError("clipping level must be nonnegative")
    if math.isinf(level):
        return 1.0
    nx = norm(x)
    if nx == 0.0 or nx <= level:
        return 1.0
    return level / nx


def clip(x, level: float) -> np.ndarray:
    """``min(1, level/||x||) * x``; the zero vector maps to itself.

    ``level = inf`` disables clipping.
    """
    v = as_vector(x)
    s = clip_factor(v, level)
    if s == 1.0:
        return v.copy()
    return v * s


def squared_distance_mean(vs: Sequence[np.ndarray]) -> float:
    """Mean of ``||v_i - v_l||^2`` over all ordered pairs ``i != l``.

    Uses ``sum_{i,l} ||v_i - v_l||^2 = 2m sum_i ||v_i - mean||^2``.
    """
    m = len(vs)
    if m < 2:
        raise ValueError("need at least 2 vectors")
    V = np.stack([as_vector(v) for v in vs])
    centered = V - V.mean(axis=0)
    return float(2.0 * np.sum(centered * centered) / (m - 1))


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def lane_rng(seed: int, round_index: int, client: int, purpose: str) -> np.random.Generator:
    """Independent generator for the lane ``(seed, round, client, purpose)``.

    Draws depend only on the lane, so adding or removing consumers of other
    lanes never shifts this one. ``round_index`` may be -1 (initialisation).
    """
    if round_index < -1:
        raise ValueError("round_index must be >= -1")
    if client < 0:
        raise ValueError("client id must be nonnegative (use SERVER for the server)")
    ss = np.random.SeedSequence(
        entropy=int(seed) & (2**64 - 1),
        spawn_key=(round_index + 1, int(client), _purpose_code(purpose)),
    )
    return np.random.Generator(np.random.PCG64(ss))
