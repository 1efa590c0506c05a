"""Objectives, gradient oracles, LIBSVM ingestion and client data splits."""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .numerics import as_vector, norm

logger = logging.getLogger(__name__)

HOMOGENEOUS = "homogeneous"
LABEL_SORTED = "label-sorted"
SPLIT_MODES = (HOMOGENEOUS, LABEL_SORTED)

_LABEL_MAP = {-1.0: 0.0, 1.0: 1.0, 0.0: 0.0}


class LibsvmFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense features (one row per sample) with labels in {0, 1}."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1:
            raise ValueError("features must be an m x d matrix with m >= 1")
        if y.shape != (A.shape[0],):
            raise ValueError("need exactly one label per row")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", A)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def flipped(self) -> "Dataset":
        """Copy with every label replaced by ``1 - y``."""
        return Dataset(self.features, 1.0 - self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx])


# ---------------------------------------------------------------------------
# LIBSVM


def parse_libsvm(source: str | Iterable[str], n_features: int | None = None) -> Dataset:
    """Parse LIBSVM text (``<label> <idx>:<val> ...``, 1-based indices) into a dense Dataset.

    ``source`` is the file content or any iterable of lines. Labels -1/+1
    are mapped to 0/1. ``n_features`` pads the dimension beyond the largest
    index seen.
    """
    lines = io.StringIO(source) if isinstance(source, str) else source
    labels: list[float] = []
    rows: list[dict[int, float]] = []
    dim = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmFormatError(lineno, f"non-numeric label {tokens[0]!r}") from None
        if label not in _LABEL_MAP:
            raise LibsvmFormatError(lineno, f"unsupported label {tokens[0]!r}")
        row: dict[int, float] = {}
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep or not key or not val:
                raise LibsvmFormatError(lineno, f"malformed feature {tok!r}")
            if key == "qid":
                continue
            try:
                idx = int(key)
            except ValueError:
                raise LibsvmFormatError(lineno, f"non-integer index {key!r}") from None
            if idx < 1:
                raise LibsvmFormatError(lineno, f"index {idx} is not 1-based")
            if idx in row:
                raise LibsvmFormatError(lineno, f"duplicate feature index {idx}")
            try:
                row[idx] = float(val)
            except ValueError:
                raise LibsvmFormatError(lineno, f"non-numeric value {val!r}") from None
            if not np.isfinite(row[idx]):
                raise LibsvmFormatError(lineno, f"non-finite value {val!r}")
            dim = max(dim, idx)
        labels.append(_LABEL_MAP[label])
        rows.append(row)
    if not rows:
        raise ValueError("no samples")
    if n_features is not None:
        if n_features < dim:
            raise ValueError(f"n_features={n_features} smaller than max index {dim}")
        dim = n_features
    A = np.zeros((len(rows), dim))
    for r, row in enumerate(rows):
        for idx, val in row.items():
            A[r, idx - 1] = val
    return Dataset(A, np.array(labels))


def load_libsvm(path: str | os.PathLike, n_features: int | None = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, n_features=n_features)


def write_libsvm(ds: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, y in zip(ds.features, ds.labels):
            feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in enumerate(a) if v != 0.0)
            fh.write(f"{'+1' if y == 1.0 else '-1'} {feats}".rstrip() + "\n")


def make_synthetic(m: int = 1000, d: int = 20, seed: int = 0, flip: float = 0.05, scale: float = 1.0) -> Dataset:
    """Seeded Gaussian features with labels from a planted linear separator.

    A fraction ``flip`` of labels is inverted so the data is not separable.
    Features are scaled so that ``E||a||^2 = scale**2 * d``.
    """
    rng = np.random.default_rng(seed)
    A = scale * rng.standard_normal((m, d))
    w = rng.standard_normal(d)
    w /= norm(w)
    y = (A @ w > 0).astype(np.float64)
    flips = rng.random(m) < flip
    y[flips] = 1.0 - y[flips]
    return Dataset(A, y)


# ---------------------------------------------------------------------------
# Objectives


class Objective:
    """Finite-sum objective ``(1/m) sum_j f_j(x)`` with per-sample oracles."""

    dim: int
    n_samples: int

    def value(self, x) -> float:
        raise NotImplementedError

    def full_gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def batch_gradient(self, batch, x) -> np.ndarray:
        raise NotImplementedError

    def minibatch_delta(self, batch, x_new, x_old) -> np.ndarray:
        raise NotImplementedError

    def _check_batch(self, batch) -> np.ndarray:
        idx = np.asarray(batch, dtype=np.intp).reshape(-1)
        if idx.size == 0:
            raise ValueError("empty batch")
        if idx.min() < 0 or idx.max() >= self.n_samples:
            raise IndexError(f"batch index out of range [0, {self.n_samples})")
        return idx


class LogisticObjective(Objective):
    """Mean logistic loss over a Dataset plus ``eta * ||x||^2`` per sample."""

    def __init__(self, dataset: Dataset, eta: float = 0.0):
        if eta < 0:
            raise ValueError("eta must be nonnegative")
        self.dataset = dataset
        self.eta = float(eta)
        self.dim = dataset.d
        self.n_samples = dataset.m

    def _x(self, x) -> np.ndarray:
        return as_vector(x, self.dim)

    def value(self, x) -> float:
        x = self._x(x)
        A, y = self.dataset.features, self.dataset.labels
        s = A @ x
        # -y log h(s) - (1-y) log(1-h(s)) == log(1+e^s) - y*s
        losses = np.logaddexp(0.0, s) - y * s
        return float(np.mean(losses) + self.eta * np.dot(x, x))

    def full_gradient(self, x) -> np.ndarray:
        x = self._x(x)
        A, y = self.dataset.features, self.dataset.labels
        r = expit(A @ x) - y
        return (A.T @ r) / self.n_samples + 2.0 * self.eta * x

    def batch_gradient(self, batch, x) -> np.ndarray:
        idx = self._check_batch(batch)
        x = self._x(x)
        A, y = self.dataset.features[idx], self.dataset.labels[idx]
        r = expit(A @ x) - y
        return (A.T @ r) / idx.size + 2.0 * self.eta * x

    def minibatch_delta(self, batch, x_new, x_old) -> np.ndarray:
        """``(1/b) sum_j (grad f_j(x_new) - grad f_j(x_old))`` on one shared batch."""
        idx = self._check_batch(batch)
        x_new, x_old = self._x(x_new), self._x(x_old)
        A = self.dataset.features[idx]
        r = expit(A @ x_new) - expit(A @ x_old)
        return (A.T @ r) / idx.size + 2.0 * self.eta * (x_new - x_old)

    def per_sample_smoothness(self) -> np.ndarray:
        A = self.dataset.features
        return 0.25 * np.einsum("ij,ij->i", A, A) + 2.0 * self.eta


class QuadraticObjective(Objective):
    """``0.5 x^T A x - b^T x``, treated as a single-component finite sum."""

    def __init__(self, A, b):
        A = np.array(A, dtype=np.float64)
        b = as_vector(b)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise ValueError("A must be d x d and b of length d")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
            raise ValueError("A must be symmetric")
        self.eigenvalues = np.linalg.eigvalsh(A)
        if self.eigenvalues[0] < -1e-12:
            raise ValueError("A must be positive semidefinite")
        self.A = A
        self.b = b
        self.dim = b.shape[0]
        self.n_samples = 1

    def value(self, x) -> float:
        x = as_vector(x, self.dim)
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def full_gradient(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        return self.A @ x - self.b

    def batch_gradient(self, batch, x) -> np.ndarray:
        self._check_batch(batch)
        return self.full_gradient(x)

    def minibatch_delta(self, batch, x_new, x_old) -> np.ndarray:
        self._check_batch(batch)
        return self.A @ (as_vector(x_new, self.dim) - as_vector(x_old, self.dim))


class AveragedObjective(Objective):
    """``(1/G) sum_i f_i`` over a list of client objectives (no sample oracles)."""

    def __init__(self, parts: Sequence[Objective]):
        if not parts:
            raise ValueError("need at least one objective")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValueError("objectives disagree on dimension")
        self.parts = list(parts)
        self.dim = dims.pop()
        self.n_samples = sum(p.n_samples for p in parts)

    def value(self, x) -> float:
        return float(np.mean([p.value(x) for p in self.parts]))

    def full_gradient(self, x) -> np.ndarray:
        return np.mean([p.full_gradient(x) for p in self.parts], axis=0)


def average_objective(parts: Sequence[Objective]) -> Objective:
    """The good-client objective; collapses to the shared object when every part is the same."""
    first = parts[0]
    if all(p is first for p in parts):
        return first
    return AveragedObjective(parts)


# ---------------------------------------------------------------------------
# Client splits


@dataclass
class ClientAssignment:
    datasets: list[Dataset]
    good: tuple[int, ...]
    mode: str
    byzantine: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        n = len(self.datasets)
        self.byzantine = tuple(i for i in range(n) if i not in set(self.good))

    @property
    def n(self) -> int:
        return len(self.datasets)

    @property
    def delta_real(self) -> float:
        return len(self.byzantine) / self.n


def split_clients(ds: Dataset, n: int, B: int, mode: str = HOMOGENEOUS, rng: np.random.Generator | None = None) -> ClientAssignment:
    """Distribute ``ds`` over ``n`` clients; the last ``B`` ids are Byzantine.

    ``homogeneous`` hands every client the same Dataset object.
    ``label-sorted`` sorts by label (ties shuffled by ``rng`` when given) and
    cuts contiguous shards.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if B < 0 or 2 * B >= n:
        raise ValueError(f"need 0 <= B < n/2, got B={B}, n={n}")
    good = tuple(range(n - B))
    if mode == HOMOGENEOUS:
        return ClientAssignment([ds] * n, good, mode)
    if mode == LABEL_SORTED:
        if n > ds.m:
            raise ValueError("more clients than samples")
        order = np.arange(ds.m) if rng is None else rng.permutation(ds.m)
        order = order[np.argsort(ds.labels[order], kind="stable")]
        shards = np.array_split(order, n)
        return ClientAssignment([ds.subset(s) for s in shards], good, mode)
    raise ValueError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")


def heterogeneity(objs: Sequence[Objective], x) -> float:
    """``(1/G) sum_i ||grad f_i(x) - grad f(x)||^2`` at one point."""
    grads = np.stack([o.full_gradient(x) for o in objs])
    # centre on the first gradient so identical clients give exactly zero
    shifted = grads - grads[0]
    dev = shifted - shifted.mean(axis=0)
    return float(np.mean(np.einsum("ij,ij->i", dev, dev)))


# ---------------------------------------------------------------------------
# Smoothness and reference solution


@dataclass(frozen=True)
class SmoothnessInfo:
    L: float  # smoothness of f itself
    L_max: float  # max over components
    L_mean: float  # mean of component bounds


def measure_smoothness(obj: Objective) -> SmoothnessInfo:
    if isinstance(obj, QuadraticObjective):
        lmax = float(max(obj.eigenvalues[-1], 0.0))
        return SmoothnessInfo(lmax, lmax, lmax)
    if isinstance(obj, LogisticObjective):
        per = obj.per_sample_smoothness()
        A = obj.dataset.features
        # sigma' <= 1/4, so the Hessian is below (1/4m) A^T A + 2 eta I
        gram_max = float(np.linalg.eigvalsh(A.T @ A / obj.n_samples)[-1])
        return SmoothnessInfo(0.25 * gram_max + 2.0 * obj.eta, float(per.max()), float(per.mean()))
    if isinstance(obj, AveragedObjective):
        infos = [measure_smoothness(p) for p in obj.parts]
        return SmoothnessInfo(
            float(np.mean([i.L for i in infos])),
            max(i.L_max for i in infos),
            float(np.mean([i.L_mean for i in infos])),
        )
    raise TypeError(f"no smoothness bound for {type(obj).__name__}")


def reference_solution(obj: Objective, tol: float = 1e-12, max_iter: int = 1_000_000, x0=None) -> tuple[np.ndarray, float]:
    """Minimiser and minimum value of a strongly convex objective.

    Quadratics are solved directly; everything else runs gradient descent
    with stepsize ``1/L`` until ``||grad f|| <= tol``.
    """
    if isinstance(obj, QuadraticObjective):
        if obj.eigenvalues[0] <= 0:
            raise SolverError("quadratic is not strongly convex")
        x = np.linalg.solve(obj.A, obj.b)
        # one refinement step for the residual
        x = x - np.linalg.solve(obj.A, obj.full_gradient(x))
        return x, obj.value(x)
    L = measure_smoothness(obj).L
    step = 1.0 / L
    x = np.zeros(obj.dim) if x0 is None else as_vector(x0, obj.dim).copy()
    g = obj.full_gradient(x)
    gnorm = norm(g)
    for it in range(max_iter):
        if gnorm <= tol:
            logger.debug("reference GD converged after %d iterations", it)
            return x, obj.value(x)
        x = x - step * g
        g = obj.full_gradient(x)
        gnorm = norm(g)
    if gnorm <= tol:
        return x, obj.value(x)
    raise SolverError(f"no convergence in {max_iter} iterations; final gradient norm {gnorm:.3e}")
