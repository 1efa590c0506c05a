import math
from pathlib import Path

import numpy as np
import pytest

from byzpp.problem import (
    Dataset,
    LibsvmFormatError,
    LogisticObjective,
    QuadraticObjective,
    heterogeneity,
    load_libsvm,
    make_synthetic,
    measure_smoothness,
    parse_libsvm,
    reference_solution,
    split_clients,
    write_libsvm,
)

DATA = Path(__file__).parent / "data"


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# -- LIBSVM -------------------------------------------------------------------


def test_parse_examples():
    ds = parse_libsvm("+1 1:0.5 3:2.0")
    assert ds.d == 3 and ds.m == 1
    np.testing.assert_array_equal(ds.features[0], [0.5, 0.0, 2.0])
    assert ds.labels[0] == 1.0
    ds = parse_libsvm("-1 2:1")
    np.testing.assert_array_equal(ds.features[0], [0.0, 1.0])
    assert ds.labels[0] == 0.0


def test_parse_labels_zero_one_and_blank_lines():
    ds = parse_libsvm("0 1:1\n\n1 2:1\n")
    np.testing.assert_array_equal(ds.labels, [0.0, 1.0])


def test_parse_empty_input():
    with pytest.raises(ValueError, match="no samples"):
        parse_libsvm("")


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("+1 1:0.5\n-1 2:abc", 2),
        ("+1 1:0.5 1:2", 1),
        ("+1 0:1", 1),
        ("+1 1:1\n+1 1:1\nfoo 1:2", 3),
        ("+1 1", 1),
        ("+2 1:1", 1),
    ],
)
def test_parse_errors_report_line(text, lineno):
    with pytest.raises(LibsvmFormatError) as info:
        parse_libsvm(text)
    assert info.value.lineno == lineno


def test_libsvm_round_trip(tmp_path):
    ds = load_libsvm(DATA / "toy.libsvm")
    assert (ds.m, ds.d) == (10, 4)
    p = tmp_path / "copy.libsvm"
    write_libsvm(ds, p)
    back = load_libsvm(p, n_features=ds.d)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0.0, 2.0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros(0))


# -- objective values and gradients ----------------------------------------------


def test_logistic_value_examples():
    obj = LogisticObjective(Dataset(np.array([[0.7, -1.3]]), np.array([1.0])), eta=0.0)
    assert obj.value(np.zeros(2)) == pytest.approx(math.log(2), abs=1e-15)
    obj = LogisticObjective(Dataset(np.array([[1.0, 0.0]]), np.array([1.0])), eta=0.01)
    # -log(sigmoid(1)) + 0.01 evaluated independently
    expected = math.log1p(math.exp(-1.0)) + 0.01
    assert obj.value([1.0, 0.0]) == pytest.approx(expected, abs=1e-15)
    assert obj.value([1.0, 0.0]) == pytest.approx(0.3232617, abs=1e-7)


def test_logistic_value_stable_for_large_margins():
    obj = LogisticObjective(Dataset(np.array([[1.0]]), np.array([0.0])), eta=0.0)
    assert obj.value([800.0]) == pytest.approx(800.0)
    assert obj.value([-800.0]) == pytest.approx(0.0, abs=1e-300)
    assert np.all(np.isfinite(obj.full_gradient([800.0])))


def test_quadratic_value_at_zero():
    assert QuadraticObjective(np.eye(2), [1.0, 2.0]).value([0.0, 0.0]) == 0.0


def test_gradient_examples():
    q = QuadraticObjective(np.diag([1.0, 4.0]), [1.0, 2.0])
    np.testing.assert_allclose(q.full_gradient(np.linalg.solve(q.A, q.b)), 0.0, atol=1e-15)
    ds = make_synthetic(30, 5, seed=1)
    obj = LogisticObjective(ds, eta=0.0)
    expected = np.mean((0.5 - ds.labels)[:, None] * ds.features, axis=0)
    np.testing.assert_allclose(obj.full_gradient(np.zeros(5)), expected, rtol=1e-13, atol=1e-16)


def test_dimension_mismatch():
    obj = LogisticObjective(make_synthetic(5, 3), 0.01)
    with pytest.raises(ValueError):
        obj.value(np.zeros(4))


@pytest.mark.parametrize("which", ["logistic", "quadratic"])
def test_gradient_matches_finite_differences(which):
    rng = np.random.default_rng(11)
    if which == "logistic":
        obj = LogisticObjective(make_synthetic(40, 6, seed=2), eta=0.01)
    else:
        M = rng.standard_normal((6, 6))
        obj = QuadraticObjective(M @ M.T + np.eye(6), rng.standard_normal(6))
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(obj.dim)
        g = obj.full_gradient(x)
        fd = central_difference(obj.value, x)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
    assert worst < 1e-6


def test_batch_gradient_full_batch_is_full_gradient():
    obj = LogisticObjective(make_synthetic(12, 3, seed=4), eta=0.05)
    x = np.array([0.3, -0.2, 1.0])
    np.testing.assert_allclose(obj.batch_gradient(np.arange(12), x), obj.full_gradient(x), rtol=1e-14, atol=1e-16)


# -- minibatch delta -----------------------------------------------------------


def test_minibatch_delta_examples():
    obj = LogisticObjective(make_synthetic(8, 3, seed=5), eta=0.01)
    x, y = np.array([0.1, 0.2, -0.3]), np.array([-1.0, 0.5, 0.0])
    np.testing.assert_array_equal(obj.minibatch_delta([0, 3], x, x), np.zeros(3))
    full = obj.minibatch_delta(np.arange(8), x, y)
    np.testing.assert_allclose(full, obj.full_gradient(x) - obj.full_gradient(y), rtol=1e-12, atol=1e-15)


def test_minibatch_delta_unbiased_by_enumeration():
    m = 9
    obj = LogisticObjective(make_synthetic(m, 4, seed=6), eta=0.02)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(4), rng.standard_normal(4)
    avg = np.mean([obj.minibatch_delta([j], x, y) for j in range(m)], axis=0)
    np.testing.assert_allclose(avg, obj.full_gradient(x) - obj.full_gradient(y), atol=1e-12)
    pairs = [(i, j) for i in range(m) for j in range(m)]
    avg2 = np.mean([obj.minibatch_delta(list(b), x, y) for b in pairs], axis=0)
    np.testing.assert_allclose(avg2, obj.full_gradient(x) - obj.full_gradient(y), atol=1e-12)


def test_minibatch_delta_errors():
    obj = LogisticObjective(make_synthetic(4, 2), 0.0)
    with pytest.raises(ValueError):
        obj.minibatch_delta([], np.zeros(2), np.ones(2))
    with pytest.raises(IndexError):
        obj.minibatch_delta([4], np.zeros(2), np.ones(2))


# -- splits --------------------------------------------------------------------


def test_homogeneous_split():
    ds = make_synthetic(50, 3)
    asg = split_clients(ds, 20, 5)
    assert len(asg.datasets) == 20 and all(d is ds for d in asg.datasets)
    assert len(asg.good) == 15 and asg.byzantine == tuple(range(15, 20))
    assert asg.delta_real == 0.25
    objs = [LogisticObjective(d, 0.01) for d in asg.datasets]
    assert heterogeneity(objs, np.random.default_rng(0).standard_normal(3)) == 0.0


def test_label_sorted_split():
    ds = Dataset(np.arange(4.0).reshape(4, 1), np.array([1.0, 0.0, 1.0, 0.0]))
    asg = split_clients(ds, 2, 0, "label-sorted")
    np.testing.assert_array_equal(asg.datasets[0].labels, [0.0, 0.0])
    np.testing.assert_array_equal(asg.datasets[1].labels, [1.0, 1.0])


def test_split_rejects_byzantine_half():
    ds = make_synthetic(10, 2)
    with pytest.raises(ValueError):
        split_clients(ds, 10, 5)
    with pytest.raises(ValueError):
        split_clients(ds, 4, 0, "bogus")


# -- smoothness and reference solution ---------------------------------------------


def test_smoothness_examples():
    assert measure_smoothness(QuadraticObjective(np.diag([1.0, 4.0]), [0.0, 0.0])).L == 4.0
    single = LogisticObjective(Dataset(np.array([[2.0, 0.0]]), np.array([1.0])), 0.0)
    info = measure_smoothness(single)
    assert info.L_max == pytest.approx(1.0) and info.L == pytest.approx(1.0)


def test_smoothness_bound_on_random_pairs():
    obj = LogisticObjective(make_synthetic(60, 5, seed=8), eta=0.01)
    info = measure_smoothness(obj)
    assert info.L <= info.L_mean + 1e-12 <= info.L_max + 1e-12
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x, y = 3 * rng.standard_normal(5), 3 * rng.standard_normal(5)
        lhs = np.linalg.norm(obj.full_gradient(x) - obj.full_gradient(y))
        assert lhs <= info.L * np.linalg.norm(x - y) * (1 + 1e-12)


def test_reference_solution_quadratic():
    x, f = reference_solution(QuadraticObjective(np.eye(2), [1.0, 2.0]))
    np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-15)
    assert f == pytest.approx(-2.5, abs=1e-15)


def test_reference_solution_logistic_toy():
    obj = LogisticObjective(load_libsvm(DATA / "toy.libsvm"), eta=0.01)
    x, f = reference_solution(obj)
    assert np.linalg.norm(obj.full_gradient(x)) <= 1e-10
    assert f == obj.value(x)
    rng = np.random.default_rng(2)
    for _ in range(100):
        assert obj.value(x + rng.standard_normal(4) * rng.choice([1e-3, 1.0, 10.0])) >= f
    # fixed point: one GD step moves less than tol * step
    step = 1.0 / measure_smoothness(obj).L
    assert np.linalg.norm(step * obj.full_gradient(x)) <= 1e-12 * step


def test_synthetic_is_seeded():
    a, b = make_synthetic(20, 3, seed=5), make_synthetic(20, 3, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert 0 < a.labels.mean() < 1
