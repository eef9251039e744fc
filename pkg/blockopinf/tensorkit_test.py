import numpy as np
import pytest

from .errors import InvalidDimensionError, ShapeError
from .tensorkit import (
    QuadIndexMap,
    block_pair_columns,
    columnwise_features,
    compact_self_kron,
    compact_size,
    compress_full,
    cross_kron,
    expand_compact,
)


def test_compact_self_kron_order():
    np.testing.assert_array_equal(compact_self_kron([1.0, 2.0, 3.0]), [1, 2, 3, 4, 6, 9])
    np.testing.assert_array_equal(compact_self_kron([5.0]), [25.0])


def test_cross_kron_order():
    np.testing.assert_array_equal(cross_kron([1.0, 2.0], [3.0, 4.0, 5.0]), [3, 4, 5, 6, 8, 10])


def test_index_map_either_order():
    idx = QuadIndexMap(3)
    assert len(idx) == compact_size(3) == 6
    assert idx.pairs == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    assert idx.index(2, 0) == idx.index(0, 2) == 2
    assert idx.index(1, 2) == 4


def test_invalid_dimensions():
    with pytest.raises(InvalidDimensionError):
        QuadIndexMap(0)
    with pytest.raises(InvalidDimensionError):
        compact_self_kron([])
    with pytest.raises(InvalidDimensionError):
        columnwise_features(np.zeros((0, 4)))


def test_columnwise_matches_vector_maps(rng):
    Q = rng.standard_normal((4, 5))
    P = rng.standard_normal((3, 5))
    features = columnwise_features(Q)
    cross = columnwise_features(Q, P)
    for j in range(5):
        np.testing.assert_allclose(features[:, j], compact_self_kron(Q[:, j]))
        np.testing.assert_allclose(cross[:, j], cross_kron(Q[:, j], P[:, j]))


def test_columnwise_column_mismatch():
    with pytest.raises(ShapeError):
        columnwise_features(np.ones((2, 3)), np.ones((2, 4)))


def test_expand_compact_acts_like_full_kronecker(rng):
    H = rng.standard_normal((2, compact_size(4)))
    q = rng.standard_normal(4)
    full = expand_compact(H, 4)
    np.testing.assert_allclose(full @ np.kron(q, q), H @ compact_self_kron(q), rtol=1e-12)
    np.testing.assert_allclose(compress_full(full, 4), H, rtol=1e-12)


def test_compress_full_shape_check():
    with pytest.raises(ShapeError):
        compress_full(np.zeros((2, 5)), 2)


def test_block_pair_columns_locate_products(rng):
    r_s, r_f = 3, 2
    q = rng.standard_normal(r_s + r_f)
    qs, qf = q[:r_s], q[r_s:]
    kinds, cols = block_pair_columns(r_s, r_f)
    sources = {"ss": compact_self_kron(qs), "sf": cross_kron(qs, qf), "ff": compact_self_kron(qf)}
    expected = compact_self_kron(q)
    for p, (kind, col) in enumerate(zip(kinds, cols)):
        assert sources[kind][col] == pytest.approx(expected[p])
