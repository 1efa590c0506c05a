import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from byzpp.attacks import (
    ALIE,
    BIT_FLIPPING,
    LABEL_FLIPPING,
    NONE,
    SHIFT_BACK,
    AttackContext,
    AttackContextError,
    AttackSpec,
    byzantine_message,
    is_majority,
    shift_back_payload,
)
from byzpp.sampling import prob_good_majority


def test_shift_back_full_round_moves_iterate_to_x0():
    x0, x, gamma = np.zeros(2), np.array([1.0, 2.0]), 0.5
    ctx = AttackContext(k=3, c=1, x0=x0, x=x, g=np.array([7.0, 7.0]), gamma=gamma, byz_majority=True)
    payload = byzantine_message(AttackSpec(SHIFT_BACK), ctx)
    # the server takes the captured aggregate as the new estimator
    x_next = x - gamma * payload
    np.testing.assert_allclose(x_next, x0)
    np.testing.assert_allclose(x_next - x, [-1.0, -2.0])


def test_shift_back_difference_round_moves_iterate_to_x0():
    x0, x, g, gamma = np.array([0.5, -1.0]), np.array([1.0, 2.0]), np.array([3.0, -4.0]), 0.1
    ctx = AttackContext(k=3, c=0, x0=x0, x=x, g=g, gamma=gamma, byz_majority=True)
    payload = shift_back_payload(ctx)
    g_next = g + payload
    np.testing.assert_allclose(x - gamma * g_next, x0, atol=1e-14)


def test_shift_back_without_majority_is_honest():
    honest = np.array([0.3, 0.4])
    ctx = AttackContext(k=0, c=0, x0=np.zeros(2), x=np.ones(2), g=np.ones(2), gamma=1.0, byz_majority=False, honest_message=honest)
    out = byzantine_message(AttackSpec(SHIFT_BACK), ctx)
    np.testing.assert_array_equal(out, honest)
    assert out is not honest


def test_bit_flipping_example_and_involution():
    ctx = AttackContext(k=0, c=0, honest_message=np.array([3.0, -1.0]))
    out = byzantine_message(AttackSpec(BIT_FLIPPING), ctx)
    np.testing.assert_array_equal(out, [-3.0, 1.0])
    ctx.honest_message = out
    np.testing.assert_array_equal(byzantine_message(AttackSpec(BIT_FLIPPING), ctx), [3.0, -1.0])


def test_alie_examples():
    ctx = AttackContext(k=0, c=0, good_messages=[np.array([1.0, 0.0]), np.array([3.0, 0.0])])
    np.testing.assert_array_equal(byzantine_message(AttackSpec(ALIE, z=0.0), ctx), [2.0, 0.0])
    # population std of {1, 3} is 1
    np.testing.assert_array_equal(byzantine_message(AttackSpec(ALIE, z=2.0), ctx), [4.0, 0.0])


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)), st.randoms(use_true_random=False))
def test_alie_permutation_invariant(M, r):
    order = list(range(M.shape[0]))
    r.shuffle(order)
    spec = AttackSpec(ALIE, z=1.5)
    a = byzantine_message(spec, AttackContext(k=0, c=0, good_messages=list(M)))
    b = byzantine_message(spec, AttackContext(k=0, c=0, good_messages=list(M[order])))
    np.testing.assert_array_equal(a, b)


def test_label_flipping_and_none_follow_protocol():
    honest = np.array([1.0, 2.0])
    for kind in (NONE, LABEL_FLIPPING):
        np.testing.assert_array_equal(byzantine_message(AttackSpec(kind), AttackContext(0, 0, honest_message=honest)), honest)
    assert AttackSpec(LABEL_FLIPPING).flips_labels and not AttackSpec(BIT_FLIPPING).flips_labels


def test_context_is_read_only():
    good = [np.array([1.0, 2.0]), np.array([0.0, 1.0])]
    snapshot = [g.copy() for g in good]
    honest = np.array([5.0, 5.0])
    ctx = AttackContext(k=0, c=0, x0=np.zeros(2), x=np.ones(2), g=np.ones(2), gamma=0.1, good_messages=good, byz_majority=True, honest_message=honest)
    for kind in (BIT_FLIPPING, ALIE, SHIFT_BACK, NONE):
        byzantine_message(AttackSpec(kind), ctx)
    for a, b in zip(good, snapshot):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(honest, [5.0, 5.0])


def test_missing_context_fields():
    with pytest.raises(AttackContextError):
        byzantine_message(AttackSpec(BIT_FLIPPING), AttackContext(k=0, c=0))
    with pytest.raises(AttackContextError):
        byzantine_message(AttackSpec(SHIFT_BACK), AttackContext(k=0, c=0, byz_majority=True, x=np.ones(2)))
    with pytest.raises(AttackContextError):
        byzantine_message(AttackSpec(ALIE), AttackContext(k=0, c=0, good_messages=[]))
    with pytest.raises(ValueError):
        AttackSpec(ALIE, z=-1.0)
    with pytest.raises(ValueError):
        AttackSpec("ipm")


def test_is_majority_examples():
    good = set(range(7))
    assert is_majority([8, 9], good, 0.25)
    assert not is_majority([0, 1, 2], good, 0.25)
    with pytest.raises(ValueError):
        is_majority([], good, 0.25)


def test_is_majority_matches_probability_by_enumeration():
    n, G, C, delta = 10, 7, 4, 0.25
    good = set(range(G))
    subsets = list(itertools.combinations(range(n), C))
    frac = sum(is_majority(S, good, delta) for S in subsets) / len(subsets)
    assert frac == pytest.approx(1 - float(prob_good_majority(n, G, C, delta)), abs=1e-15)
