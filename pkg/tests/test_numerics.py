import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bipcl import numerics as nx
from bipcl.numerics import DimensionError, SparseRowMatrix, TapeError, Tensor

from _oracles import central_difference, rel_error, triple_loop_matmul


def test_matmul_identity_and_scalar():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(nx.matmul(np.eye(3), m).data, m)
    assert nx.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(nx.matmul(a, b).data - triple_loop_matmul(a, b))) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def _random_sparse(rng, n, m, density=0.3):
    dense = rng.random((n, m)) * (rng.random((n, m)) < density)
    return SparseRowMatrix.from_scipy(dense), dense


def test_spmm_identity_and_single_entry():
    x = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(nx.spmm(SparseRowMatrix.identity(4), x).data, x)
    a = SparseRowMatrix(1, 4, [0, 1], [2], [1.0])
    assert np.array_equal(nx.spmm(a, x).data[0], x[2])


@pytest.mark.parametrize("seed", range(5))
def test_spmm_matches_densified_matmul(seed):
    rng = np.random.default_rng(seed)
    a, dense = _random_sparse(rng, 7, 5)
    x = rng.normal(size=(5, 3))
    assert np.allclose(a.to_dense(), dense, atol=0)
    assert np.max(np.abs(nx.spmm(a, x).data - nx.matmul(dense, x).data)) <= 1e-12


def test_spmm_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.spmm(SparseRowMatrix.identity(3), np.ones((4, 2)))


def test_sparse_matrix_validates():
    with pytest.raises(ValueError):
        SparseRowMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])
    with pytest.raises(ValueError):
        SparseRowMatrix(1, 2, [0, 1], [5], [1.0])


def test_row_normalized_rows_sum_to_one():
    rng = np.random.default_rng(3)
    a, _ = _random_sparse(rng, 20, 20)
    sums = a.row_normalized().row_sums()
    nonempty = np.diff(a.row_offsets) > 0
    assert np.all(np.abs(sums[nonempty] - 1) <= 1e-6)


def test_softmax_examples():
    assert np.allclose(nx.softmax(Tensor(np.zeros((1, 5)))).data, 0.2)
    p = nx.softmax(Tensor([[10.0, 0.0, 0.0]])).data[0, 0]
    exact = 1.0 / (1.0 + 2.0 * math.exp(-10.0))
    assert abs(p - exact) <= 1e-4
    assert abs(p - 0.99991) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    p = nx.softmax(Tensor(x)).data
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-9)
    assert np.max(np.abs(nx.softmax(Tensor(x + c)).data - p)) <= 1e-12


def test_masked_softmax_zeroes_masked_entries():
    mask = np.array([[True, False, True]])
    p = nx.softmax(Tensor([[1.0, 5.0, 1.0]]), mask=mask).data
    assert p[0, 1] == 0.0 and np.allclose(p[0, [0, 2]], 0.5)


def test_elementwise_examples():
    assert nx.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert nx.sign([-2.0, 0.0, 5.0]).data.tolist() == [-1.0, 0.0, 1.0]
    assert np.allclose(nx.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])
    assert nx.l2_normalize(Tensor(np.zeros((2, 3)))).data.tolist() == [[0.0] * 3] * 2
    cat = nx.concat([Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 2)))])
    assert cat.shape == (2, 3)
    assert nx.scale(Tensor([1.0, 2.0]), 3.0).data.tolist() == [3.0, 6.0]


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-1e3, 1e3)))
def test_l2_normalize_unit_rows(x):
    out = nx.l2_normalize(Tensor(x)).data
    norms = np.linalg.norm(out, axis=1)
    nonzero = np.linalg.norm(x, axis=1) > 0
    assert np.all(np.abs(norms[nonzero] - 1) <= 1e-9)
    assert np.all(np.isfinite(out))


def test_sigmoid_finite_for_extreme_inputs():
    out = nx.sigmoid(Tensor([-1e4, 1e4])).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


def test_backward_sum_and_quadratic():
    x = nx.parameter([1.0, 2.0, 3.0])
    (g,) = nx.backward(nx.tsum(x), [x])
    assert g.tolist() == [1.0, 1.0, 1.0]
    y = nx.parameter([[1.0, 2.0]])
    (g,) = nx.backward(nx.tsum(nx.mul(y, y)), [y])
    assert g.tolist() == [[2.0, 4.0]]


def test_backward_errors():
    x = nx.parameter([1.0, 2.0])
    other = nx.parameter([3.0])
    with pytest.raises(TapeError):
        nx.backward(nx.tsum(x), [other])
    with pytest.raises(TapeError):
        nx.backward(x)
    with pytest.raises(TapeError):
        nx.backward(nx.tsum(Tensor([1.0])))


def test_backward_visits_shared_node_once():
    x = nx.parameter([2.0])
    y = nx.mul(x, x)
    z = nx.add(y, y)  # dz/dx = 4x
    (g,) = nx.backward(nx.tsum(z), [x])
    assert g.tolist() == [8.0]


def _composite(params, extra):
    a, b, gamma, beta, w = params
    h = nx.matmul(a, b)
    h = nx.layer_norm(h, gamma, beta)
    h = nx.gelu(h)
    s = nx.softmax(nx.matmul(h, w))
    z = nx.l2_normalize(nx.concat([s, nx.sigmoid(h)]))
    lse = nx.log_softmax(nx.matmul(z, nx.transpose(z)))
    picked = nx.take_rows(nx.spmm(extra, h), [0, 2, 2])
    return nx.add(nx.mean(nx.index(lse, (np.arange(3), np.arange(3)))), nx.tsum(nx.mul(picked, picked)))


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arrays_ = [rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), 1 + 0.1 * rng.normal(size=5),
               0.1 * rng.normal(size=5), rng.normal(size=(5, 3))]
    extra, _ = _random_sparse(rng, 3, 3, density=0.8)
    params = [nx.parameter(a) for a in arrays_]
    analytic = nx.backward(_composite(params, extra), params)

    def f():
        return float(_composite([Tensor(p.data) for p in params], extra).data)

    numeric = central_difference(f, [p.data for p in params])
    for g, n in zip(analytic, numeric):
        assert rel_error(g, n) <= 1e-4


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a = nx.parameter(rng.normal(size=(2, 3, 4)))
    w = nx.parameter(rng.normal(size=(4, 2)))
    ga, gw = nx.backward(nx.tsum(nx.mul(nx.matmul(a, w), nx.matmul(a, w))), [a, w])

    def f():
        return float(((a.data @ w.data) ** 2).sum())

    na, nw = central_difference(f, [a.data, w.data])
    assert rel_error(ga, na) <= 1e-6 and rel_error(gw, nw) <= 1e-6
