"""Byz-VR-MARINA-PP round driver, the clipped client-momentum heuristic, and
the stepsize calculator from the convergence theorems.

Randomness lanes used per round ``k`` (see :func:`byzpp.numerics.lane_rng`):
``(k, SERVER, "gate")``, ``(k, SERVER, "cohort")``, ``(k, SERVER, "aggregate")``,
``(k, i, "batch")`` and ``(k, i, "compress")`` for client ``i``. The g^0
initialisation uses round index -1.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import attacks as atk
from .aggregation import AggregatorSpec, aggregate
from .compression import CompressorSpec, compress, transmitted_coords
from .numerics import SERVER, clip, lane_rng, norm
from .problem import ClientAssignment, Objective, LogisticObjective, QuadraticObjective, average_objective
from .sampling import ParticipationConfig, RoundPlan, prob_good_majority, prob_in_good_sample, sample_round

INF = math.inf


@dataclass
class World:
    """The federation: per-client objectives, who is honest, and the attack."""

    objectives: list[Objective]
    good: tuple[int, ...]
    attack: atk.AttackSpec = field(default_factory=atk.AttackSpec)
    f_star: float | None = None
    x0: np.ndarray | None = None  # starting point, visible to shift-back attackers

    def __post_init__(self):
        self.good = tuple(sorted(self.good))
        self._good_set = frozenset(self.good)
        if not self.good:
            raise ValueError("need at least one good client")
        if not self._good_set <= set(range(self.n)):
            raise ValueError("good ids out of range")
        self.f = average_objective([self.objectives[i] for i in self.good])

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def G(self) -> int:
        return len(self.good)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim

    def is_good(self, i: int) -> bool:
        return i in self._good_set

    @classmethod
    def from_assignment(cls, assignment: ClientAssignment, eta: float, attack: atk.AttackSpec | None = None) -> "World":
        attack = attack or atk.AttackSpec()
        cache: dict[tuple[int, bool], Objective] = {}
        objs = []
        for i, ds in enumerate(assignment.datasets):
            flip = attack.flips_labels and i not in assignment.good
            key = (id(ds), flip)
            if key not in cache:
                cache[key] = LogisticObjective(ds.flipped() if flip else ds, eta)
            objs.append(cache[key])
        return cls(objs, assignment.good, attack)

    @classmethod
    def quadratic(cls, A, b, n: int = 1, byzantine: int = 0, attack: atk.AttackSpec | None = None) -> "World":
        obj = QuadraticObjective(A, b)
        return cls([obj] * n, tuple(range(n - byzantine)), attack or atk.AttackSpec())


@dataclass(frozen=True)
class MarinaPpConfig:
    gamma: float
    b: int = 32
    p: float = 0.1
    alpha: float = INF  # lambda_{k+1} = alpha * ||x^{k+1} - x^k||
    C: int = 1
    Chat: int = 1
    K: int = 100
    delta: float = 0.0
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    compressor: CompressorSpec | None = None  # None means identity
    record_time: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.b < 1:
            raise ValueError("minibatch size must be >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive (use inf to disable clipping)")
        if self.K < 0:
            raise ValueError("K must be >= 0")

    def participation(self, world: World) -> ParticipationConfig:
        return _participation(world.n, world.G, self.C, self.Chat, self.p, self.delta)


@functools.lru_cache(maxsize=64)
def _participation(n, G, C, Chat, p, delta) -> ParticipationConfig:
    return ParticipationConfig(n, G, C, Chat, p, delta)


@dataclass(frozen=True)
class AlgoState:
    x: np.ndarray
    g: np.ndarray
    k: int = 0
    x_prev: np.ndarray | None = None


@dataclass(frozen=True)
class RoundMetrics:
    """One round's record; ``f_gap`` and ``grad_sq`` are taken at the iterate the round produced."""

    k: int
    f_gap: float
    grad_sq: float
    c: int
    n_good_sampled: int
    n_byz_sampled: int
    clip_activations: int
    coords_sent: int
    oracle_calls: int
    epochs: float
    wall_ns: int = 0


FIELDS = tuple(RoundMetrics.__dataclass_fields__)


@dataclass
class RunResult:
    state: AlgoState
    trajectory: list[RoundMetrics]
    initial: RoundMetrics  # iterate x^0 plus the g^0 initialisation cost


def clip_level(alpha: float, x_new: np.ndarray, x_old: np.ndarray) -> float:
    if math.isinf(alpha):
        return INF
    return alpha * norm(x_new - x_old)


def _epoch_size(world: World) -> int:
    return world.n * world.objectives[world.good[0]].n_samples


class _RoundMessages:
    """Collects the cohort's messages in client-id order."""

    def __init__(self, world: World, cohort: Sequence[int]):
        self.cohort = list(cohort)
        self.good_ids = [i for i in cohort if world.is_good(i)]
        self.byz_ids = [i for i in cohort if not world.is_good(i)]
        self.by_client: dict[int, np.ndarray] = {}

    def ordered(self) -> list[np.ndarray]:
        return [self.by_client[i] for i in self.cohort]


def _full_gradients(world: World, ids: Sequence[int], x: np.ndarray) -> dict[int, np.ndarray]:
    cache: dict[int, np.ndarray] = {}
    out = {}
    for i in ids:
        obj = world.objectives[i]
        if id(obj) not in cache:
            cache[id(obj)] = obj.full_gradient(x)
        out[i] = cache[id(obj)]
    return out


def _diff_message(world: World, cfg: MarinaPpConfig, seed: int, k: int, i: int, batch, x_new, x_old) -> np.ndarray:
    delta = world.objectives[i].minibatch_delta(batch, x_new, x_old)
    if cfg.compressor is None:
        return delta
    return compress(cfg.compressor, delta, lane_rng(seed, k, i, "compress"))


def _attack(world: World, msgs: _RoundMessages, honest: dict[int, np.ndarray], ctx: atk.AttackContext, delta: float) -> None:
    ctx.good_messages = [msgs.by_client[i] for i in msgs.good_ids]
    if msgs.byz_ids:
        ctx.byz_majority = atk.is_majority(msgs.cohort, world.good, delta)
    for i in msgs.byz_ids:
        ctx.honest_message = honest[i]
        msgs.by_client[i] = atk.byzantine_message(world.attack, ctx)


def _metrics(world: World, x: np.ndarray, k: int, plan: RoundPlan | None, msgs: _RoundMessages | None, clipped: int, coords: int, calls: int, epochs: float, t0: int | None) -> RoundMetrics:
    f_star = world.f_star if world.f_star is not None else 0.0
    gr = world.f.full_gradient(x)
    return RoundMetrics(
        k=k,
        f_gap=world.f.value(x) - f_star,
        grad_sq=float(np.dot(gr, gr)),
        c=plan.c if plan is not None else 1,
        n_good_sampled=len(msgs.good_ids) if msgs else 0,
        n_byz_sampled=len(msgs.byz_ids) if msgs else 0,
        clip_activations=clipped,
        coords_sent=coords,
        oracle_calls=calls,
        epochs=epochs,
        wall_ns=(time.perf_counter_ns() - t0) if t0 is not None else 0,
    )


def full_gradient_round(world: World, cfg: MarinaPpConfig, seed: int, k: int, x: np.ndarray, g: np.ndarray | None, plan: RoundPlan) -> tuple[np.ndarray, _RoundMessages, int]:
    """Cohort sends full local gradients at ``x``; returns ``(ARAgg, messages, oracle calls)``."""
    msgs = _RoundMessages(world, plan.cohort)
    honest = _full_gradients(world, plan.cohort, x)
    for i in msgs.good_ids:
        msgs.by_client[i] = honest[i]
    ctx = atk.AttackContext(k=k, c=1, x0=world.x0, x=x, g=g, gamma=cfg.gamma)
    _attack(world, msgs, honest, ctx, cfg.delta)
    agg = aggregate(cfg.aggregator, msgs.ordered(), lane_rng(seed, k, SERVER, "aggregate"))
    calls = sum(world.objectives[i].n_samples for i in msgs.good_ids)
    return agg, msgs, calls


def init_estimator(world: World, cfg: MarinaPpConfig, seed: int, x0: np.ndarray) -> tuple[np.ndarray, RoundMetrics]:
    """g^0 from a forced full-gradient round over a Chat-cohort at ``x0``."""
    t0 = time.perf_counter_ns() if cfg.record_time else None
    plan = sample_round(cfg.participation(world), -1, seed, force_full=True)
    g0, msgs, calls = full_gradient_round(world, cfg, seed, -1, x0, None, plan)
    coords = len(plan.cohort) * world.dim
    m = _metrics(world, x0, -1, plan, msgs, 0, coords, calls, calls / _epoch_size(world), t0)
    return g0, m


def marina_pp_round(state: AlgoState, cfg: MarinaPpConfig, world: World, seed: int, epochs_before: float = 0.0) -> tuple[AlgoState, RoundMetrics]:
    """One round of Byz-VR-MARINA-PP.

    ``x^{k+1} = x^k - gamma g^k``; with probability ``p`` a Chat-cohort sends
    full gradients and ``g^{k+1} = ARAgg(...)``; otherwise a C-cohort sends
    compressed minibatch gradient differences, the server clips every
    received vector to ``alpha ||x^{k+1} - x^k||`` and
    ``g^{k+1} = g^k + ARAgg(clipped)``.
    """
    t0 = time.perf_counter_ns() if cfg.record_time else None
    k, x, g = state.k, state.x, state.g
    x_new = x - cfg.gamma * g
    pcfg = cfg.participation(world)
    n_samples = [o.n_samples for o in world.objectives]
    plan = sample_round(pcfg, k, seed, cfg.b, n_samples)
    clipped = 0
    if plan.c == 1:
        g_new, msgs, calls = full_gradient_round(world, cfg, seed, k, x_new, g, plan)
        coords = len(plan.cohort) * world.dim
    else:
        msgs = _RoundMessages(world, plan.cohort)
        honest = {i: _diff_message(world, cfg, seed, k, i, plan.batches[i], x_new, x) for i in plan.cohort}
        for i in msgs.good_ids:
            msgs.by_client[i] = honest[i]
        ctx = atk.AttackContext(k=k, c=0, x0=world.x0, x=x_new, g=g, gamma=cfg.gamma)
        _attack(world, msgs, honest, ctx, cfg.delta)
        lam = clip_level(cfg.alpha, x_new, x)
        received = msgs.ordered()
        clipped = sum(1 for v in received if norm(v) > lam)
        sent = [clip(v, lam) for v in received]
        g_new = g + aggregate(cfg.aggregator, sent, lane_rng(seed, k, SERVER, "aggregate"))
        calls = 2 * cfg.b * len(msgs.good_ids)
        spec = cfg.compressor or CompressorSpec.identity(world.dim)
        coords = sum(transmitted_coords(spec, v) for v in received)
    epochs = epochs_before + calls / _epoch_size(world)
    new_state = AlgoState(x_new, g_new, k + 1, x)
    return new_state, _metrics(world, x_new, k, plan, msgs, clipped, coords, calls, epochs, t0)


def run_marina_pp(cfg: MarinaPpConfig, world: World, seed: int, x0=None, g0=None, max_epochs: float | None = None) -> RunResult:
    """Run ``cfg.K`` rounds (or until ``max_epochs`` of oracle work) from ``x0`` (default 0)."""
    x0 = np.zeros(world.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    world.x0 = x0
    if g0 is None:
        g0, initial = init_estimator(world, cfg, seed, x0)
    else:
        initial = _metrics(world, x0, -1, None, None, 0, 0, 0, 0.0, None)
    state = AlgoState(x0, np.asarray(g0, dtype=np.float64), 0, None)
    traj: list[RoundMetrics] = []
    epochs = initial.epochs
    for _ in range(cfg.K):
        if max_epochs is not None and epochs >= max_epochs:
            break
        state, m = marina_pp_round(state, cfg, world, seed, epochs)
        epochs = m.epochs
        traj.append(m)
    return RunResult(state, traj, initial)


# ---------------------------------------------------------------------------
# Clipped client-momentum heuristic


@dataclass(frozen=True)
class MomentumHeuristicConfig:
    gamma: float
    beta: float = 0.9
    alpha: float = INF
    C: int = 1
    b: int = 32
    K: int = 100
    delta: float = 0.0
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    record_time: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive (use inf to disable clipping)")


@dataclass(frozen=True)
class MomentumState:
    x: np.ndarray
    g: np.ndarray  # g^{k-1}
    k: int
    x_prev: np.ndarray  # x^{k-1}
    momenta: dict


def _momentum_messages(world: World, cfg: MomentumHeuristicConfig, seed: int, k: int, cohort, x, g_prev, momenta: dict) -> tuple[_RoundMessages, dict]:
    msgs = _RoundMessages(world, cohort)
    new_m = dict(momenta)
    honest = {}
    for i in cohort:
        batch = lane_rng(seed, k, i, "batch").integers(0, world.objectives[i].n_samples, size=cfg.b)
        grad = world.objectives[i].batch_gradient(batch, x)
        prev = momenta.get(i)
        new_m[i] = grad if prev is None else (1.0 - cfg.beta) * grad + cfg.beta * prev
        honest[i] = new_m[i]
    for i in msgs.good_ids:
        msgs.by_client[i] = honest[i]
    # the server subtracts g^{k-1} itself, so attackers craft full vectors
    ctx = atk.AttackContext(k=k, c=1, x0=world.x0, x=x, g=g_prev, gamma=cfg.gamma)
    _attack(world, msgs, honest, ctx, cfg.delta)
    return msgs, new_m


def init_momentum(world: World, cfg: MomentumHeuristicConfig, seed: int, x0: np.ndarray) -> MomentumState:
    """g^{-1} is the plain aggregate of first momenta from every client at ``x0``."""
    msgs, momenta = _momentum_messages(world, cfg, seed, -1, tuple(range(world.n)), x0, None, {})
    g = aggregate(cfg.aggregator, msgs.ordered(), lane_rng(seed, -1, SERVER, "aggregate"))
    return MomentumState(x0, g, 0, x0, momenta)


def momentum_heuristic_round(state: MomentumState, cfg: MomentumHeuristicConfig, world: World, seed: int) -> tuple[MomentumState, RoundMetrics]:
    """``g^k = g^{k-1} + Agg(clip_{lambda_k}(g_i^k - g^{k-1}))``, ``x^{k+1} = x^k - gamma g^k``.

    ``lambda_k = alpha ||x^k - x^{k-1}||``; sampled good clients refresh
    their momentum ``m_i = (1 - beta) grad_i + beta m_i`` and send it.
    """
    t0 = time.perf_counter_ns() if cfg.record_time else None
    k, x = state.k, state.x
    cohort = tuple(range(world.n)) if cfg.C == world.n else tuple(
        sorted(int(i) for i in lane_rng(seed, k, SERVER, "cohort").choice(world.n, cfg.C, replace=False))
    )
    msgs, momenta = _momentum_messages(world, cfg, seed, k, cohort, x, state.g, state.momenta)
    lam = clip_level(cfg.alpha, x, state.x_prev)
    diffs = [v - state.g for v in msgs.ordered()]
    clipped = sum(1 for v in diffs if norm(v) > lam)
    g = state.g + aggregate(cfg.aggregator, [clip(v, lam) for v in diffs], lane_rng(seed, k, SERVER, "aggregate"))
    x_new = x - cfg.gamma * g
    calls = cfg.b * len(msgs.good_ids)
    m = _metrics(world, x_new, k, None, msgs, clipped, len(cohort) * world.dim, calls, 0.0, t0)
    m = replace(m, c=0)
    return MomentumState(x_new, g, k + 1, x, momenta), m


def run_momentum_heuristic(cfg: MomentumHeuristicConfig, world: World, seed: int, x0=None, max_epochs: float | None = None) -> RunResult:
    x0 = np.zeros(world.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    world.x0 = x0
    state = init_momentum(world, cfg, seed, x0)
    initial = _metrics(world, x0, -1, None, None, 0, world.n * world.dim, cfg.b * world.G, 0.0, None)
    epochs = cfg.b * world.G / _epoch_size(world)
    initial = replace(initial, epochs=epochs)
    traj = []
    for _ in range(cfg.K):
        if max_epochs is not None and epochs >= max_epochs:
            break
        state, m = momentum_heuristic_round(state, cfg, world, seed)
        epochs += m.oracle_calls / _epoch_size(world)
        traj.append(replace(m, epochs=epochs))
    final = AlgoState(state.x, state.g, state.k, state.x_prev)
    return RunResult(final, traj, initial)


def run_reference_gd(world: World, gamma: float, K: int, x0=None, max_epochs: float | None = None) -> RunResult:
    """Plain full-gradient descent on the good-client objective (no attacks, no sampling)."""
    x = np.zeros(world.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    per_round = sum(world.objectives[i].n_samples for i in world.good)
    size = _epoch_size(world)
    initial = _metrics(world, x, -1, None, None, 0, 0, 0, 0.0, None)
    traj = []
    epochs = 0.0
    g = world.f.full_gradient(x)
    x_prev = None
    for k in range(K):
        if max_epochs is not None and epochs >= max_epochs:
            break
        x_prev, x = x, x - gamma * g
        g = world.f.full_gradient(x)
        epochs += per_round / size
        m = _metrics(world, x, k, None, None, 0, world.G * world.dim, per_round, epochs, None)
        traj.append(replace(m, n_good_sampled=world.G))
    return RunResult(AlgoState(x, g, len(traj), x_prev), traj, initial)


# ---------------------------------------------------------------------------
# Theory calculator

THM1 = "thm1"
THM2 = "thm2"


@dataclass(frozen=True)
class TheoryConstants:
    A: float
    D_hat: float
    gamma_max: float  # general non-convex bound
    gamma_max_pl: float  # bound under the PL condition
    rho: float | None  # PL rate at gamma_max_pl (None without mu)


def participation_probabilities(n: int, G: int, C: int, Chat: int, delta) -> tuple[float, float, float]:
    """``(p_G, P_C, P_Chat)`` as floats."""
    return (
        float(prob_good_majority(n, G, C, delta)),
        float(prob_in_good_sample(n, G, C, delta)),
        float(prob_in_good_sample(n, G, Chat, delta)),
    )


def theorem_constants(
    variant: str,
    *,
    L: float,
    omega: float,
    c: float,
    delta: float,
    p: float,
    p_G: float,
    P_C: float,
    P_Chat: float,
    G: int,
    C: int,
    Chat: int,
    F_A: float,
    D_Q: float = 1.0,
    mu: float | None = None,
) -> TheoryConstants:
    """Constant ``A``, heterogeneity factor ``D_hat``, stepsize caps and PL rate."""
    if variant not in (THM1, THM2):
        raise ValueError(f"variant must be {THM1!r} or {THM2!r}")
    if not 0 < p <= 1 or not 0 <= delta < 0.5:
        raise ValueError("need 0 < p <= 1 and 0 <= delta < 1/2")
    if min(L, omega, c, p_G, P_C, P_Chat, F_A, D_Q) < 0:
        raise ValueError("inputs must be nonnegative")
    if variant == THM1:
        A = (32 * p_G * G * P_C) / (p**2 * (1 - delta) * C) * (30 * omega + 11) * (1 + 2 * c * delta)
        A += 16 * (1 - p_G) * (1 + 4 * F_A**2) / p**2
        rate_cap = p / 8
    else:
        inner = (3 * omega + 2) / ((1 - delta) * C) + 8 * (5 * omega + 4) * c * delta / p
        A = (4 * p_G * G * P_C) / (p * (1 - delta) * C) * inner
        A += 8 * (1 - p_G) * (2 + F_A**2 * D_Q**2) / p**2
        rate_cap = p / 4
    D_hat = 2 * delta * P_Chat / (1 - delta) * (6 * c * G / Chat + p)
    gamma_max = 1.0 / (L * (1 + math.sqrt(A)))
    gamma_max_pl = 1.0 / (L * (1 + math.sqrt(2 * A)))
    rho = None if mu is None else min(gamma_max_pl * mu, rate_cap)
    return TheoryConstants(A, D_hat, gamma_max, gamma_max_pl, rho)
