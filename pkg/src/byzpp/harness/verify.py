"""Monte-Carlo and enumeration verification suites.

Each suite returns a :class:`Report` of ``observed <= bound`` style checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..aggregation import CM, GM, KRUM, MEAN, TRIMMED_MEAN, AggregatorSpec, aggregate, empirical_ragg_check, f_a_constant
from ..compression import CompressorSpec, compress_many, dq_bound, omega
from ..numerics import clip
from ..sampling import good_threshold, prob_good_majority, prob_in_good_sample

SUITES = ("compressors", "aggregators", "clipping_lemma", "probabilities")
DELTAS = (0.1, 0.2, 0.25, 0.3, 0.4)


@dataclass(frozen=True)
class Check:
    name: str
    observed: float
    bound: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: observed {self.observed:.6g} vs bound {self.bound:.6g}"


@dataclass
class Report:
    suite: str
    checks: list[Check] = field(default_factory=list)

    def add(self, name: str, observed: float, bound: float, passed: bool | None = None) -> None:
        ok = observed <= bound if passed is None else passed
        self.checks.append(Check(name, float(observed), float(bound), bool(ok)))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'} ({len(self.checks)} checks)"]
        lines += ["  " + c.line() for c in self.checks]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# compressors


def check_compressor(spec: CompressorSpec, x: np.ndarray, draws: int, rng: np.random.Generator) -> dict[str, float]:
    Q = compress_many(spec, x, draws, rng)
    nx2 = float(x @ x)
    mean = Q.mean(axis=0)
    return {
        "mean_rel_err": float(np.linalg.norm(mean - x) / math.sqrt(nx2)),
        "var_ratio": float(np.mean(np.sum((Q - x) ** 2, axis=1)) / nx2),
        "max_norm_ratio": float(np.max(np.linalg.norm(Q, axis=1)) / math.sqrt(nx2)),
    }


def suite_compressors(trials: int = 100_000, seed: int = 0, n_vectors: int = 20, d: int = 10) -> Report:
    rng = np.random.default_rng(seed)
    report = Report("compressors")
    specs = [CompressorSpec.identity(d), CompressorSpec.randk(d, d // 2), CompressorSpec.l2_quantization(d)]
    xs = [rng.standard_normal(d) for _ in range(n_vectors)]
    for spec in specs:
        worst = {"mean_rel_err": 0.0, "var_ratio": 0.0, "max_norm_ratio": 0.0}
        for x in xs:
            r = check_compressor(spec, x, trials, rng)
            worst = {k: max(worst[k], r[k]) for k in worst}
        tag = spec.kind if spec.kind != "randk" else f"randk(K={spec.K})"
        report.add(f"{tag} mean relative error", worst["mean_rel_err"], 0.01)
        report.add(f"{tag} variance / ||x||^2", worst["var_ratio"], omega(spec) + 0.05)
        report.add(f"{tag} max ||Q(x)||/||x||", worst["max_norm_ratio"], dq_bound(spec) * (1 + 1e-12))
    return report


# ---------------------------------------------------------------------------
# aggregators


def aggregator_specs(delta: float = 0.25) -> list[AggregatorSpec]:
    specs = []
    for s in (1, 2):
        specs += [
            AggregatorSpec(MEAN, bucket_size=s),
            AggregatorSpec(CM, bucket_size=s),
            AggregatorSpec(GM, bucket_size=s),
            AggregatorSpec(TRIMMED_MEAN, bucket_size=s, trim=0.2),
            AggregatorSpec(KRUM, bucket_size=s, delta=delta),
        ]
    return specs


def aggregator_bound_fuzz(spec: AggregatorSpec, trials: int, rng: np.random.Generator, d: int = 5, m: int = 12) -> float:
    """Largest observed ``||Agg|| / max ||x_i||`` over random input sets."""
    worst = 0.0
    for _ in range(trials):
        scale = rng.choice([1e-3, 1.0, 1e3])
        X = scale * rng.standard_normal((m, d)) * rng.exponential(1.0, size=(m, 1))
        if rng.random() < 0.3:
            X[: m // 4] *= 100.0  # a few outliers
        out = aggregate(spec, list(X), rng)
        worst = max(worst, float(np.linalg.norm(out) / np.max(np.linalg.norm(X, axis=1))))
    return worst


def suite_aggregators(trials: int = 10_000, seed: int = 0, d: int = 5) -> Report:
    rng = np.random.default_rng(seed)
    report = Report("aggregators")
    for spec in aggregator_specs():
        ratio = aggregator_bound_fuzz(spec, trials, rng, d=d)
        tag = spec.rule + (f"+bucketing(s={spec.bucket_size})" if spec.bucket_size > 1 else "")
        report.add(f"{tag} ||Agg||/max||x_i||", ratio, f_a_constant(spec, d) * (1 + 1e-12))

    def gen(r: np.random.Generator):
        good = list(r.standard_normal((16, d)))
        byz = [np.full(d, 100.0) for _ in range(4)]
        return good + byz, [True] * 16 + [False] * 4

    cm_b = AggregatorSpec(CM, bucket_size=2)
    rep = empirical_ragg_check(cm_b, gen, max(10, trials // 100), rng)
    report.add("cm+bucketing(s=2) implied c under 20% outliers (finite)", rep.ratio, math.inf, passed=math.isfinite(rep.ratio))
    return report


# ---------------------------------------------------------------------------
# clipping lemma


def clipping_ratio(x: np.ndarray, sigma: float, lam: float, draws: int, rng: np.random.Generator) -> float:
    """``E||clip(X) - x||^2 / E||X - x||^2`` for ``X ~ N(x, sigma^2 I)``."""
    d = x.shape[0]
    noise = sigma * rng.standard_normal((draws, d))
    X = x + noise
    nrm = np.linalg.norm(X, axis=1)
    scale = np.where(nrm > lam, lam / np.where(nrm > 0, nrm, 1.0), 1.0)
    Xc = X * scale[:, None]
    return float(np.mean(np.sum((Xc - x) ** 2, axis=1)) / np.mean(np.sum(noise**2, axis=1)))


def suite_clipping_lemma(trials: int = 1_000_000, seed: int = 0, d: int = 5, lam: float = 1.0) -> Report:
    rng = np.random.default_rng(seed)
    report = Report("clipping_lemma")
    e1 = np.eye(d)[0]
    # sanity: the vectorised clip agrees with the scalar operator
    probe = rng.standard_normal(d) * 3
    vec = probe * min(1.0, lam / np.linalg.norm(probe))
    report.add("vectorised clip matches clip()", float(np.max(np.abs(vec - clip(probe, lam)))), 1e-15)
    for frac in (0.0, 0.25, 0.5):
        for sigma in (0.05, 0.3, 1.0, 5.0):
            r = clipping_ratio(frac * lam * e1, sigma * lam, lam, trials, rng)
            report.add(f"||x||={frac}*lambda, sigma={sigma}*lambda", r, 10.0)
    return report


# ---------------------------------------------------------------------------
# participation probabilities


def enumerate_probabilities(n: int, G: int, C: int, delta) -> tuple[Fraction, Fraction | None]:
    """Exhaustive oracle: clients ``0..G-1`` are good; returns ``(p_G, P{0 in S | majority})``."""
    t0 = good_threshold(C, delta)
    total = hits = with_zero = 0
    for S in itertools.combinations(range(n), C):
        total += 1
        n_good = sum(1 for i in S if i < G)
        if n_good >= t0:
            hits += 1
            if G >= 1 and 0 in S:
                with_zero += 1
    pg = Fraction(hits, total)
    cond = Fraction(with_zero, hits) if hits and G >= 1 else None
    return pg, cond


def suite_probabilities(trials: int = 1, seed: int = 0, n_max: int = 12) -> Report:
    report = Report("probabilities")
    total = agree = 0
    for n in range(1, n_max + 1):
        for C in range(1, n + 1):
            for G in range(0, n + 1):
                for delta in DELTAS:
                    pg_enum, cond_enum = enumerate_probabilities(n, G, C, delta)
                    ok = prob_good_majority(n, G, C, delta) == pg_enum
                    if cond_enum is not None:
                        ok = ok and prob_in_good_sample(n, G, C, delta) == cond_enum
                    total += 1
                    agree += ok
    report.add("formula == enumeration (exact)", agree, total, passed=agree == total)
    worst = 0.0
    for n in range(2, 31):
        for G in range(1, n + 1):
            for delta in DELTAS:
                worst = max(worst, abs(float(prob_good_majority(n, G, 1, delta)) - G / n))
                worst = max(worst, abs(float(prob_in_good_sample(n, G, 1, delta)) - 1 / G))
                worst = max(worst, abs(float(prob_good_majority(n, G, 2, delta)) - G * (G - 1) / (n * (n - 1))))
                if G >= 2:
                    worst = max(worst, abs(float(prob_in_good_sample(n, G, 2, delta)) - 2 / G))
                if G >= good_threshold(n, delta):
                    worst = max(worst, abs(float(prob_good_majority(n, G, n, delta)) - 1.0))
                    worst = max(worst, abs(float(prob_in_good_sample(n, G, n, delta)) - 1.0))
    report.add("closed forms for C=1, C=2, C=n", worst, 1e-15)
    return report


def verify_suite(name: str, trials: int | None = None, seed: int = 0) -> Report:
    if name == "compressors":
        return suite_compressors(trials or 100_000, seed)
    if name == "aggregators":
        return suite_aggregators(trials or 10_000, seed)
    if name == "clipping_lemma":
        return suite_clipping_lemma(trials or 1_000_000, seed)
    if name == "probabilities":
        return suite_probabilities(seed=seed)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
