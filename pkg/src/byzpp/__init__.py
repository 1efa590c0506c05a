"""Simulator for Byzantine-robust distributed optimisation with client sampling,
compression and server-side clipping."""

from .aggregation import AggregatorSpec, aggregate
from .algorithms import (
    MarinaPpConfig,
    MomentumHeuristicConfig,
    World,
    run_marina_pp,
    run_momentum_heuristic,
    run_reference_gd,
    theorem_constants,
)
from .attacks import AttackSpec
from .compression import CompressorSpec, compress
from .numerics import clip
from .problem import LogisticObjective, QuadraticObjective, make_synthetic, parse_libsvm, split_clients

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec",
    "AttackSpec",
    "CompressorSpec",
    "LogisticObjective",
    "MarinaPpConfig",
    "MomentumHeuristicConfig",
    "QuadraticObjective",
    "World",
    "aggregate",
    "clip",
    "compress",
    "make_synthetic",
    "parse_libsvm",
    "run_marina_pp",
    "run_momentum_heuristic",
    "run_reference_gd",
    "split_clients",
    "theorem_constants",
]
