import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lensim.core import (
    LayerRange,
    Pooling,
    TokenMatrix,
    last_token_pool,
    mean_pool,
    middle_layers,
    tree_sum_rows,
)


def test_mean_pool_examples():
    np.testing.assert_array_equal(mean_pool(TokenMatrix([[1, 0], [0, 1]])).values, [0.5, 0.5])
    np.testing.assert_array_equal(mean_pool(TokenMatrix([[3, 4]])).values, [3, 4])
    mu = np.array([0.1, -2.5, 7.0, 1e-3])
    pooled = mean_pool(TokenMatrix(np.tile(mu, (100, 1))))
    np.testing.assert_array_equal(pooled.values, mu)
    assert pooled.source_length == 100
    assert pooled.pooling is Pooling.MEAN


def test_last_token_pool_examples():
    assert list(last_token_pool(TokenMatrix([[1, 0], [0, 1]])).values) == [0, 1]
    assert list(last_token_pool(TokenMatrix([[3, 4]])).values) == [3, 4]
    p = last_token_pool(TokenMatrix([[1, 2, 3], [4, 5, 6], [7, 7, 7]]))
    assert list(p.values) == [7, 7, 7]
    assert p.pooling is Pooling.LAST_TOKEN and p.source_length == 3


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected_with_position(bad):
    values = np.zeros((4, 3))
    values[2, 1] = bad
    with pytest.raises(ValueError, match="row 2, column 1"):
        TokenMatrix(values)


def test_token_matrix_invariants():
    with pytest.raises(ValueError):
        TokenMatrix(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        TokenMatrix(np.zeros(3))
    with pytest.raises(ValueError, match="tokens"):
        TokenMatrix(np.zeros((2, 3)), tokens=("a",))
    m = TokenMatrix(np.zeros((2, 3), dtype=np.float32), tokens=["a", "b"], layer_index=5)
    assert m.values.dtype == np.float64
    assert not m.values.flags.writeable
    assert m.tokens == ("a", "b")


def test_input_array_not_aliased():
    src = np.ones((3, 2))
    m = TokenMatrix(src)
    src[0, 0] = 99
    assert m.values[0, 0] == 1


def test_tree_sum_matches_exact_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1001, 7)) * 1e3
    exact = np.array([float(sum(map(np.longdouble, col))) for col in x.T])
    np.testing.assert_allclose(tree_sum_rows(x), exact, rtol=1e-13)


def test_tree_sum_beats_naive_on_drift():
    # 2^20 copies of 0.1: sequential accumulation (cumsum) drifts, pairwise stays near exact
    x = np.full((2**20, 1), 0.1)
    naive = np.cumsum(x[:, 0])[-1]
    tree = tree_sum_rows(x)[0]
    exact = 0.1 * 2**20
    assert abs(tree - exact) <= abs(naive - exact)
    assert abs(tree - exact) / exact < 1e-14


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.data())
def test_mean_pool_linear(t, d, data):
    a = data.draw(arrays(np.float64, (t, d), elements=finite))
    b = data.draw(arrays(np.float64, (t, d), elements=finite))
    lhs = mean_pool(TokenMatrix(a + b)).values
    rhs = mean_pool(TokenMatrix(a)).values + mean_pool(TokenMatrix(b)).values
    scale = np.maximum(np.abs(a).sum(axis=0) + np.abs(b).sum(axis=0), 1.0) / t
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * scale)


def test_row_permutation_mean_invariant_last_sensitive():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((9, 4))
    perm = np.roll(np.arange(9), 1)
    a, b = TokenMatrix(x), TokenMatrix(x[perm])
    np.testing.assert_allclose(mean_pool(a).values, mean_pool(b).values, rtol=1e-14, atol=1e-15)
    assert not np.array_equal(last_token_pool(a).values, last_token_pool(b).values)


@pytest.mark.parametrize("n, expected", [(32, (8, 24)), (4, (1, 3)), (40, (10, 30)), (5, (1, 3)), (7, (1, 5))])
def test_middle_layers(n, expected):
    r = middle_layers(n)
    assert (r.lo, r.hi) == expected
    assert r.hi < n


@given(st.integers(4, 10_000))
def test_middle_layers_ordered(n):
    r = middle_layers(n)
    assert 0 <= r.lo <= r.hi < n


def test_middle_layers_rejects_small():
    with pytest.raises(ValueError):
        middle_layers(3)


def test_layer_range_validation_and_iteration():
    assert list(LayerRange(2, 4)) == [2, 3, 4]
    assert len(LayerRange(5, 5)) == 1
    with pytest.raises(ValueError):
        LayerRange(3, 2)
    with pytest.raises(ValueError):
        LayerRange(0, 4, n_layers=4)


def test_select_rows_and_prefix():
    m = TokenMatrix(np.arange(12.0).reshape(4, 3), tokens=("a", "b", "c", "d"), layer_index=2)
    s = m.select_rows([3, 1])
    assert s.tokens == ("d", "b") and s.layer_index == 2
    np.testing.assert_array_equal(s.values, [[9, 10, 11], [3, 4, 5]])
    assert m.prefix(2).tokens == ("a", "b")
    with pytest.raises(IndexError):
        m.select_rows([4])
    with pytest.raises(IndexError):
        m.prefix(5)
