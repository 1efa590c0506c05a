import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from byzpp.sampling import (
    ParticipationConfig,
    good_threshold,
    min_chat,
    prob_good_majority,
    prob_in_good_sample,
    sample_cohort,
    sample_round,
)


def enumerate_oracle(n, G, C, delta):
    t0 = math.ceil((1 - Fraction(str(delta))) * C)
    majority = [S for S in itertools.combinations(range(n), C) if sum(i < G for i in S) >= t0]
    pg = Fraction(len(majority), math.comb(n, C))
    cond = Fraction(sum(0 in S for S in majority), len(majority)) if majority and G else None
    return pg, cond


def test_threshold_uses_ceiling():
    assert good_threshold(4, 0.25) == 3
    assert good_threshold(5, 0.25) == 4  # 3.75 -> 4
    assert good_threshold(10, 0.2) == 8  # exact, no float drift
    assert good_threshold(3, 0.1) == 3


def test_closed_forms():
    for n in range(2, 15):
        for G in range(1, n + 1):
            assert prob_good_majority(n, G, 1, 0.25) == Fraction(G, n)
            assert prob_in_good_sample(n, G, 1, 0.25) == Fraction(1, G)
            assert prob_good_majority(n, G, 2, 0.25) == Fraction(G * (G - 1), n * (n - 1))
        assert prob_good_majority(n, n, n, 0.25) == 1
        assert prob_in_good_sample(n, n, n, 0.25) == 1


def test_matches_enumeration_example():
    pg, cond = enumerate_oracle(10, 7, 4, 0.25)
    assert prob_good_majority(10, 7, 4, 0.25) == pg
    assert prob_in_good_sample(10, 7, 4, 0.25) == cond


def test_matches_enumeration_small_grid():
    for n in range(1, 8):
        for C in range(1, n + 1):
            for G in range(n + 1):
                for delta in (0.1, 0.25, 0.4):
                    pg, cond = enumerate_oracle(n, G, C, delta)
                    assert prob_good_majority(n, G, C, delta) == pg
                    if cond is not None:
                        assert prob_in_good_sample(n, G, C, delta) == cond


def test_p_good_monotone_in_G():
    for n, C, delta in [(12, 4, 0.25), (20, 5, 0.2), (9, 9, 0.4)]:
        vals = [prob_good_majority(n, G, C, delta) for G in range(n + 1)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_probability_errors():
    with pytest.raises(ValueError):
        prob_good_majority(5, 6, 2, 0.2)
    with pytest.raises(ValueError):
        prob_good_majority(5, 3, 0, 0.2)
    with pytest.raises(ValueError):
        prob_good_majority(5, 3, 2, 0.5)
    with pytest.raises(ZeroDivisionError):
        prob_in_good_sample(5, 1, 3, 0.1)


def test_min_chat_and_config_invariants():
    assert min_chat(20, 5, 0.25) == 20
    assert min_chat(20, 5, 0.4) == 13
    assert min_chat(20, 0, 0.0) == 1
    ParticipationConfig(20, 15, 4, 20, 0.1, 0.25)
    with pytest.raises(ValueError):
        ParticipationConfig(20, 15, 4, 12, 0.1, 0.4)  # Chat below ceil(5 / 0.4)
    with pytest.raises(ValueError):
        ParticipationConfig(20, 15, 4, 20, 0.1, 0.2)  # delta below 5/20
    with pytest.raises(ValueError):
        ParticipationConfig(20, 15, 5, 4, 0.1, 0.25)
    with pytest.raises(ValueError):
        ParticipationConfig(20, 15, 4, 20, 0.0, 0.25)


def test_sample_round_examples():
    cfg = ParticipationConfig(10, 10, 3, 6, 1.0, 0.0)
    for k in range(20):
        plan = sample_round(cfg, k, seed=1)
        assert plan.c == 1 and len(plan.cohort) == 6 and len(set(plan.cohort)) == 6
    cfg = ParticipationConfig(10, 10, 10, 10, 0.3, 0.0)
    for k in range(50):
        plan = sample_round(cfg, k, seed=2, batch_size=4, n_samples=[7] * 10)
        assert plan.cohort == tuple(range(10))
        if plan.c == 0:
            assert set(plan.batches) == set(range(10))
            assert all(b.shape == (4,) and b.min() >= 0 and b.max() < 7 for b in plan.batches.values())


def test_sample_round_deterministic_per_lane():
    cfg = ParticipationConfig(20, 15, 4, 20, 0.5, 0.25)
    a = sample_round(cfg, 7, 3, 8, [50] * 20)
    b = sample_round(cfg, 7, 3, 8, [50] * 20)
    assert a.c == b.c and a.cohort == b.cohort
    for i in a.batches:
        np.testing.assert_array_equal(a.batches[i], b.batches[i])
    # the batch size does not change the gate or the cohort
    c = sample_round(cfg, 7, 3, 2, [50] * 20)
    assert (c.c, c.cohort) == (a.c, a.cohort)


def test_gate_frequency():
    p, N = 0.3, 100_000
    cfg = ParticipationConfig(4, 4, 2, 2, p, 0.0)
    hits = sum(sample_round(cfg, k, 5).c for k in range(N))
    assert abs(hits / N - p) <= 3 * math.sqrt(p * (1 - p) / N)


def test_cohort_uniformity():
    n, C, N = 6, 3, 1_000_000
    r = np.random.default_rng(1)
    seen = {}
    for _ in range(N):
        S = sample_cohort(n, C, r)
        seen[S] = seen.get(S, 0) + 1
    total = math.comb(n, C)
    e = N / total
    s = math.sqrt(e * (1 - 1 / total))
    assert len(seen) == total
    assert all(abs(v - e) <= 5 * s for v in seen.values())
